//! Per-item stratified train/val/test splitting.
//!
//! Each item's samples are shuffled under a seed derived from (seed, item)
//! and apportioned by largest-remainder rounding. Items with at least
//! [`MIN_STRATIFIED_COUNT`] samples are guaranteed one sample per split;
//! smaller items place everything in train.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeding::rng_for;

use super::{FeatureRecord, Split, SplitAssignment};

/// Items with fewer samples than this go entirely to train.
pub const MIN_STRATIFIED_COUNT: usize = 3;

/// Largest-remainder apportionment of `count` into three parts, then a repair
/// pass so that no part is empty when `count >= MIN_STRATIFIED_COUNT`.
/// Ties in the remainder ranking and in the repair donor both break toward
/// the lower split index.
fn apportion(count: usize, ratios: [f64; 3]) -> [usize; 3] {
    let mut parts = [0usize; 3];
    let mut remainders = [0.0f64; 3];
    let mut assigned = 0usize;
    for k in 0..3 {
        let raw = count as f64 * ratios[k];
        parts[k] = raw.floor() as usize;
        remainders[k] = raw - raw.floor();
        assigned += parts[k];
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        remainders[b]
            .partial_cmp(&remainders[a])
            .expect("finite remainders")
            .then(a.cmp(&b))
    });
    for k in 0..count.saturating_sub(assigned) {
        parts[order[k % 3]] += 1;
    }

    if count >= MIN_STRATIFIED_COUNT {
        while let Some(empty) = parts.iter().position(|&p| p == 0) {
            let donor = (0..3)
                .max_by(|&a, &b| parts[a].cmp(&parts[b]).then(b.cmp(&a)))
                .expect("three parts");
            parts[donor] -= 1;
            parts[empty] += 1;
        }
    }
    parts
}

/// Assign every record to train/val/test, stratified per item.
pub fn split_dataset(
    records: &[FeatureRecord],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    if records.is_empty() {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1, got {ratios:?} (sum {sum})"
        )));
    }
    if ratios.iter().any(|&r| r < 0.0) {
        return Err(Error::Config(format!("split ratios must be non-negative, got {ratios:?}")));
    }

    let mut by_item: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for r in records {
        by_item.entry(r.item_label).or_default().push(&r.sample_id);
    }

    let mut partition = BTreeMap::new();
    for (&item, ids) in &mut by_item {
        let mut rng = rng_for(seed, &[item as u64]);
        ids.shuffle(&mut rng);
        let counts = if ids.len() < MIN_STRATIFIED_COUNT {
            [ids.len(), 0, 0]
        } else {
            apportion(ids.len(), ratios)
        };
        let mut cursor = 0usize;
        for (split, &n) in Split::ALL.iter().zip(&counts) {
            for id in &ids[cursor..cursor + n] {
                partition.insert(id.to_string(), *split);
            }
            cursor += n;
        }
    }

    Ok(SplitAssignment {
        seed,
        ratios,
        partition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn records_for(counts: &[usize]) -> Vec<FeatureRecord> {
        let mut out = Vec::new();
        for (item, &count) in counts.iter().enumerate() {
            for k in 0..count {
                out.push(FeatureRecord {
                    sample_id: format!("i{item}_s{k}"),
                    type_label: 0,
                    item_label: item,
                    features: vec![0.0],
                });
            }
        }
        out
    }

    const RATIOS: [f64; 3] = [0.7, 0.1, 0.2];

    fn per_item_counts(assignment: &SplitAssignment, records: &[FeatureRecord], item: usize) -> [usize; 3] {
        let mut c = [0usize; 3];
        for r in records.iter().filter(|r| r.item_label == item) {
            c[assignment.split_of(&r.sample_id).unwrap().index()] += 1;
        }
        c
    }

    #[test]
    fn ten_samples_split_exactly() {
        let records = records_for(&[10]);
        let a = split_dataset(&records, RATIOS, 7).unwrap();
        assert_eq!(per_item_counts(&a, &records, 0), [7, 1, 2]);
    }

    #[test]
    fn two_samples_all_go_to_train() {
        let records = records_for(&[2]);
        let a = split_dataset(&records, RATIOS, 7).unwrap();
        assert_eq!(per_item_counts(&a, &records, 0), [2, 0, 0]);
    }

    #[test]
    fn nine_samples_use_largest_remainder() {
        // raw 6.3 / 0.9 / 1.8 -> floors 6/0/1, two leftovers to val then test
        let records = records_for(&[9]);
        let a = split_dataset(&records, RATIOS, 7).unwrap();
        assert_eq!(per_item_counts(&a, &records, 0), [6, 1, 2]);
    }

    #[test]
    fn three_samples_cover_every_split() {
        let records = records_for(&[3]);
        let a = split_dataset(&records, RATIOS, 7).unwrap();
        assert_eq!(per_item_counts(&a, &records, 0), [1, 1, 1]);
    }

    #[test]
    fn split_is_deterministic() {
        let records = records_for(&[5, 13, 2, 40]);
        let a = split_dataset(&records, RATIOS, 99).unwrap();
        let b = split_dataset(&records, RATIOS, 99).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&records, RATIOS, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bad_ratios_are_rejected() {
        let records = records_for(&[4]);
        assert!(split_dataset(&records, [0.7, 0.2, 0.2], 0).is_err());
        assert!(split_dataset(&records, [1.2, -0.4, 0.2], 0).is_err());
        assert!(split_dataset(&[], RATIOS, 0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_complete_and_stratified(
            counts in proptest::collection::vec(1usize..60, 1..12),
            seed in 0u64..1000,
        ) {
            let records = records_for(&counts);
            let a = split_dataset(&records, RATIOS, seed).unwrap();
            prop_assert_eq!(a.partition.len(), records.len());
            let totals = a.counts();
            prop_assert_eq!(totals[0] + totals[1] + totals[2], records.len());
            for (item, &count) in counts.iter().enumerate() {
                let c = per_item_counts(&a, &records, item);
                prop_assert_eq!(c[0] + c[1] + c[2], count);
                if count >= MIN_STRATIFIED_COUNT {
                    prop_assert!(c.iter().all(|&n| n >= 1), "item {} counts {:?}", item, c);
                } else {
                    prop_assert_eq!(c, [count, 0, 0]);
                }
            }
        }
    }
}
