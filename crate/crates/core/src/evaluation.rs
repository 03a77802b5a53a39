//! Final-model evaluation: item- and type-level accuracy, nutrient
//! composition error, and the aggregated report.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabelHierarchy, NutrientEntry};
use crate::encoder::{forward, BackboneParams, HeadParams};
use crate::error::{io_err, Error, Result};

/// One evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub true_item: usize,
    pub pred_item: usize,
    pub true_type: usize,
    pub pred_type: usize,
}

/// Where the type predictions came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypePredictionSource {
    /// A dedicated type-level classifier (the saved first-stage model).
    Stage1Head,
    /// Parent of the predicted item.
    DerivedFromItems,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub split: String,
    pub type_source: TypePredictionSource,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccuracyMode {
    Micro,
    Macro,
}

fn accuracy_of(pairs: &[(usize, usize)], mode: AccuracyMode) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("no predictions to score".into()));
    }
    match mode {
        AccuracyMode::Micro => {
            let correct = pairs.iter().filter(|(t, p)| t == p).count();
            Ok(correct as f64 / pairs.len() as f64)
        }
        AccuracyMode::Macro => {
            let mut classes: Vec<usize> = pairs.iter().map(|&(t, _)| t).collect();
            classes.sort_unstable();
            classes.dedup();
            let mut total = 0.0;
            for &c in &classes {
                let of_class: Vec<_> = pairs.iter().filter(|&&(t, _)| t == c).collect();
                let correct = of_class.iter().filter(|&&&(t, p)| t == p).count();
                total += correct as f64 / of_class.len() as f64;
            }
            Ok(total / classes.len() as f64)
        }
    }
}

/// Item-level accuracy; macro averages over classes with at least one sample.
pub fn accuracy(set: &PredictionSet, mode: AccuracyMode) -> Result<f64> {
    let pairs: Vec<(usize, usize)> = set
        .predictions
        .iter()
        .map(|p| (p.true_item, p.pred_item))
        .collect();
    accuracy_of(&pairs, mode)
}

/// Mean absolute per-100g difference between the predicted and true item's
/// nutrient entries, averaged over every sample (correct predictions add 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NutrientMae {
    pub energy_kcal: f64,
    pub protein_g: f64,
    pub carbohydrate_g: f64,
    pub fat_g: f64,
}

impl NutrientMae {
    pub fn as_array(&self) -> [f64; 4] {
        [
            self.energy_kcal,
            self.protein_g,
            self.carbohydrate_g,
            self.fat_g,
        ]
    }
}

pub fn nutrient_mae(set: &PredictionSet, hierarchy: &LabelHierarchy) -> Result<NutrientMae> {
    if set.predictions.is_empty() {
        return Err(Error::Data("no predictions to score".into()));
    }
    let entry = |item: usize| -> Result<&NutrientEntry> {
        hierarchy
            .nutrients
            .get(item)
            .ok_or_else(|| Error::Data(format!("item {item} has no nutrient entry")))
    };
    let mut sums = [0.0f64; 4];
    for p in &set.predictions {
        let predicted = entry(p.pred_item)?.as_array();
        let truth = entry(p.true_item)?.as_array();
        for k in 0..4 {
            sums[k] += (predicted[k] - truth[k]).abs();
        }
    }
    let n = set.predictions.len() as f64;
    Ok(NutrientMae {
        energy_kcal: sums[0] / n,
        protein_g: sums[1] / n,
        carbohydrate_g: sums[2] / n,
        fat_g: sums[3] / n,
    })
}

/// Type-level (micro, macro) accuracy under the chosen protocol.
pub fn type_level_eval(
    set: &PredictionSet,
    hierarchy: &LabelHierarchy,
    source: TypePredictionSource,
) -> Result<(f64, f64)> {
    let pairs: Vec<(usize, usize)> = match source {
        TypePredictionSource::Stage1Head => {
            if set.type_source != TypePredictionSource::Stage1Head {
                return Err(Error::Data(
                    "prediction set carries no stage-1 head type predictions".into(),
                ));
            }
            set.predictions
                .iter()
                .map(|p| (p.true_type, p.pred_type))
                .collect()
        }
        TypePredictionSource::DerivedFromItems => set
            .predictions
            .iter()
            .map(|p| (p.true_type, hierarchy.parent[p.pred_item]))
            .collect(),
    };
    Ok((
        accuracy_of(&pairs, AccuracyMode::Micro)?,
        accuracy_of(&pairs, AccuracyMode::Macro)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracyRow {
    pub item_label: usize,
    pub item_code: String,
    pub test_count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusedPair {
    pub true_item: usize,
    pub pred_item: usize,
    pub count: usize,
    pub same_type: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub num_samples: usize,
    pub item_micro_accuracy: f64,
    pub item_macro_accuracy: f64,
    pub type_prediction_source: TypePredictionSource,
    pub type_micro_accuracy: f64,
    pub type_macro_accuracy: f64,
    pub nutrient_mae: NutrientMae,
    pub misclassified: usize,
    /// The ten most frequent (true item, predicted item) confusions.
    pub top_confusions: Vec<ConfusedPair>,
    pub per_class: Vec<ClassAccuracyRow>,
}

/// Aggregate every metric over a prediction set.
pub fn build_report(set: &PredictionSet, hierarchy: &LabelHierarchy) -> Result<EvalReport> {
    let item_micro = accuracy(set, AccuracyMode::Micro)?;
    let item_macro = accuracy(set, AccuracyMode::Macro)?;
    let (type_micro, type_macro) = type_level_eval(set, hierarchy, set.type_source)?;
    let mae = nutrient_mae(set, hierarchy)?;

    let mut per_class: Vec<ClassAccuracyRow> = Vec::new();
    let mut classes: Vec<usize> = set.predictions.iter().map(|p| p.true_item).collect();
    classes.sort_unstable();
    classes.dedup();
    for c in classes {
        let of_class: Vec<_> = set.predictions.iter().filter(|p| p.true_item == c).collect();
        let correct = of_class.iter().filter(|p| p.pred_item == c).count();
        per_class.push(ClassAccuracyRow {
            item_label: c,
            item_code: hierarchy.item_codes[c].clone(),
            test_count: of_class.len(),
            correct,
            accuracy: correct as f64 / of_class.len() as f64,
        });
    }

    let mut confusion: std::collections::BTreeMap<(usize, usize), usize> =
        std::collections::BTreeMap::new();
    for p in set.predictions.iter().filter(|p| p.true_item != p.pred_item) {
        *confusion.entry((p.true_item, p.pred_item)).or_default() += 1;
    }
    let misclassified: usize = confusion.values().sum();
    let mut pairs: Vec<(&(usize, usize), &usize)> = confusion.iter().collect();
    pairs.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    let top_confusions = pairs
        .into_iter()
        .take(10)
        .map(|(&(t, p), &count)| ConfusedPair {
            true_item: t,
            pred_item: p,
            count,
            same_type: hierarchy.parent[t] == hierarchy.parent[p],
        })
        .collect();

    Ok(EvalReport {
        split: set.split.clone(),
        num_samples: set.predictions.len(),
        item_micro_accuracy: item_micro,
        item_macro_accuracy: item_macro,
        type_prediction_source: set.type_source,
        type_micro_accuracy: type_micro,
        type_macro_accuracy: type_macro,
        nutrient_mae: mae,
        misclassified,
        top_confusions,
        per_class,
    })
}

pub fn save_report(report: &EvalReport, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Invalid(format!("serialize report: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err("write", path))
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(io_err("read", path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_predictions_csv(set: &PredictionSet, path: &Path) -> Result<()> {
    let mut out = String::from("sample_id,true_item,pred_item,true_type,pred_type\n");
    for p in &set.predictions {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.sample_id, p.true_item, p.pred_item, p.true_type, p.pred_type
        ));
    }
    std::fs::write(path, out).map_err(io_err("write", path))
}

/// Argmax class per row; ties break toward the lower index.
pub fn predict_classes(
    backbone: &BackboneParams,
    head: &HeadParams,
    x: &Array2<f64>,
    batch_size: usize,
) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..x.nrows()).collect();
    let mut out = Vec::with_capacity(x.nrows());
    for chunk in idx.chunks(batch_size.max(1)) {
        let xb = Array2::from_shape_fn((chunk.len(), x.ncols()), |(i, j)| x[(chunk[i], j)]);
        let (_, logits) = forward(backbone, head, &xb)?;
        for row in logits.rows() {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}
