//! Data model: samples, the two-level label hierarchy, nutrient entries,
//! split assignments, plus file I/O and synthetic data generation.

mod io;
mod split;
mod synthetic;

pub use io::{
    load_dataset, load_features, load_hierarchy, load_modes, load_split, save_dataset,
    save_features, save_hierarchy, save_modes, save_split, FEATURES_FILE, HIERARCHY_FILE,
    MODES_FILE, SPLIT_FILE,
};
pub use split::{split_dataset, MIN_STRATIFIED_COUNT};
pub use synthetic::{generate_synthetic, PowerLawCounts, SyntheticDataset, SyntheticSpec};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One sample: a coarse type label, a fine item label, and a feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub sample_id: String,
    pub type_label: usize,
    pub item_label: usize,
    pub features: Vec<f64>,
}

/// Per-100g macronutrient values attached to a food item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct NutrientEntry {
    pub energy_kcal: f64,
    pub protein_g: f64,
    pub carbohydrate_g: f64,
    pub fat_g: f64,
}

impl NutrientEntry {
    pub fn as_array(&self) -> [f64; 4] {
        [
            self.energy_kcal,
            self.protein_g,
            self.carbohydrate_g,
            self.fat_g,
        ]
    }

    pub fn component_names() -> [&'static str; 4] {
        ["energy_kcal", "protein_g", "carbohydrate_g", "fat_g"]
    }

    fn validate(&self, item: usize) -> Result<()> {
        for (name, v) in Self::component_names().iter().zip(self.as_array()) {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Data(format!(
                    "item {item}: nutrient {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl From<[f64; 4]> for NutrientEntry {
    fn from(a: [f64; 4]) -> Self {
        Self {
            energy_kcal: a[0],
            protein_g: a[1],
            carbohydrate_g: a[2],
            fat_g: a[3],
        }
    }
}

impl From<NutrientEntry> for [f64; 4] {
    fn from(n: NutrientEntry) -> Self {
        n.as_array()
    }
}

/// The two-level hierarchy: `num_items` food items, each owned by exactly one
/// of `num_types` food types, with an external code and nutrient entry per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelHierarchy {
    pub num_types: usize,
    pub num_items: usize,
    /// `parent[item] = type`; total over all items.
    pub parent: Vec<usize>,
    pub item_codes: Vec<String>,
    pub nutrients: Vec<NutrientEntry>,
}

impl LabelHierarchy {
    pub fn validate(&self) -> Result<()> {
        if self.num_types == 0 || self.num_items == 0 {
            return Err(Error::Data(
                "hierarchy must have at least one type and one item".into(),
            ));
        }
        if self.parent.len() != self.num_items {
            return Err(Error::Data(format!(
                "parent array length {} does not match num_items {}",
                self.parent.len(),
                self.num_items
            )));
        }
        if self.item_codes.len() != self.num_items {
            return Err(Error::Data(format!(
                "item_codes length {} does not match num_items {}",
                self.item_codes.len(),
                self.num_items
            )));
        }
        if self.nutrients.len() != self.num_items {
            return Err(Error::Data(format!(
                "nutrients length {} does not match num_items {} (item with missing nutrient entry)",
                self.nutrients.len(),
                self.num_items
            )));
        }
        let mut children = vec![0usize; self.num_types];
        for (item, &t) in self.parent.iter().enumerate() {
            if t >= self.num_types {
                return Err(Error::Data(format!(
                    "item {item} has parent type {t} outside [0, {})",
                    self.num_types
                )));
            }
            children[t] += 1;
        }
        if let Some(t) = children.iter().position(|&c| c == 0) {
            return Err(Error::Data(format!("type {t} has no child items")));
        }
        for (item, n) in self.nutrients.iter().enumerate() {
            n.validate(item)?;
        }
        Ok(())
    }

    /// Items grouped by parent type, in item order.
    pub fn items_of_type(&self, t: usize) -> Vec<usize> {
        (0..self.num_items).filter(|&i| self.parent[i] == t).collect()
    }
}

/// Which of the three splits a sample landed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Total assignment of sample ids to the three splits, with the seed and
/// ratios that produced it recorded for auditability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub partition: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn split_of(&self, sample_id: &str) -> Option<Split> {
        self.partition.get(sample_id).copied()
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0usize; 3];
        for s in self.partition.values() {
            c[s.index()] += 1;
        }
        c
    }

    /// Indices of `records` belonging to `split`, in record order.
    pub fn indices(&self, records: &[FeatureRecord], split: Split) -> Vec<usize> {
        records
            .iter()
            .enumerate()
            .filter(|(_, r)| self.split_of(&r.sample_id) == Some(split))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Check records against a hierarchy: uniform feature dimension, labels in
/// range, and parent consistency. Returns the shared feature dimension.
pub fn validate_records(records: &[FeatureRecord], hierarchy: &LabelHierarchy) -> Result<usize> {
    let Some(first) = records.first() else {
        return Err(Error::Data("dataset contains no records".into()));
    };
    let d_in = first.features.len();
    for r in records {
        if r.features.len() != d_in {
            return Err(Error::Data(format!(
                "sample {}: inconsistent feature dimension {} (expected {d_in})",
                r.sample_id,
                r.features.len()
            )));
        }
        if r.item_label >= hierarchy.num_items {
            return Err(Error::Data(format!(
                "sample {}: label out of range: item {} outside [0, {})",
                r.sample_id, r.item_label, hierarchy.num_items
            )));
        }
        if r.type_label >= hierarchy.num_types {
            return Err(Error::Data(format!(
                "sample {}: label out of range: type {} outside [0, {})",
                r.sample_id, r.type_label, hierarchy.num_types
            )));
        }
        let expected = hierarchy.parent[r.item_label];
        if r.type_label != expected {
            return Err(Error::Data(format!(
                "sample {}: item {} maps to type {} but hierarchy says type {}",
                r.sample_id, r.item_label, r.type_label, expected
            )));
        }
        if let Some(v) = r.features.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "sample {}: non-finite feature value {v}",
                r.sample_id
            )));
        }
    }
    Ok(d_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_hierarchy() -> LabelHierarchy {
        LabelHierarchy {
            num_types: 2,
            num_items: 4,
            parent: vec![0, 0, 1, 1],
            item_codes: (0..4).map(|i| format!("{:08}", 11000000 + i)).collect(),
            nutrients: vec![
                [100.0, 5.0, 10.0, 2.0].into(),
                [200.0, 10.0, 20.0, 4.0].into(),
                [300.0, 15.0, 30.0, 6.0].into(),
                [400.0, 20.0, 40.0, 8.0].into(),
            ],
        }
    }

    fn record(id: &str, t: usize, i: usize) -> FeatureRecord {
        FeatureRecord {
            sample_id: id.into(),
            type_label: t,
            item_label: i,
            features: vec![0.0, 1.0],
        }
    }

    #[test]
    fn hierarchy_validation_catches_empty_type() {
        let mut h = tiny_hierarchy();
        h.parent = vec![0, 0, 0, 0];
        let err = h.validate().unwrap_err();
        assert!(err.to_string().contains("no child items"), "{err}");
    }

    #[test]
    fn hierarchy_validation_catches_negative_nutrient() {
        let mut h = tiny_hierarchy();
        h.nutrients[2] = [-1.0, 0.0, 0.0, 0.0].into();
        assert!(h.validate().is_err());
    }

    #[test]
    fn record_validation_checks_parent_consistency() {
        let h = tiny_hierarchy();
        let recs = vec![record("a", 0, 0), record("b", 0, 2)];
        let err = validate_records(&recs, &h).unwrap_err();
        assert!(err.to_string().contains("hierarchy says type 1"), "{err}");
    }

    #[test]
    fn record_validation_checks_item_range() {
        let h = tiny_hierarchy();
        let recs = vec![record("a", 0, 4)];
        let err = validate_records(&recs, &h).unwrap_err();
        assert!(err.to_string().contains("label out of range"), "{err}");
    }

    #[test]
    fn record_validation_checks_dimension() {
        let h = tiny_hierarchy();
        let mut recs = vec![record("a", 0, 0), record("b", 0, 1)];
        recs[1].features = vec![0.0];
        let err = validate_records(&recs, &h).unwrap_err();
        assert!(err.to_string().contains("inconsistent feature dimension"), "{err}");
    }
}
