//! Initial mask pool cleanup: drop small masks, drop near-duplicates, and
//! merge masks that largely contain one another.

use serde::{Deserialize, Serialize};

use crate::model::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskRefineConfig {
    pub min_points: usize,
    /// Set-IoU at or above which two masks count as duplicates.
    pub duplicate_iou: f64,
    /// Overlap coefficient `|A∩B| / min(|A|,|B|)` at or above which masks merge.
    pub merge_overlap: f64,
}

impl Default for MaskRefineConfig {
    fn default() -> Self {
        Self {
            min_points: 50,
            duplicate_iou: 0.8,
            merge_overlap: 0.7,
        }
    }
}

impl MaskRefineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_points < 1 {
            return Err("min_points must be >= 1".into());
        }
        for (name, v) in [("duplicate_iou", self.duplicate_iou), ("merge_overlap", self.merge_overlap)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(format!("{name} must be in (0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

pub fn mask_iou(a: &Mask, b: &Mask) -> f64 {
    let inter = a.intersection_len(b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn overlap_coefficient(a: &Mask, b: &Mask) -> f64 {
    let smaller = a.len().min(b.len());
    if smaller == 0 {
        0.0
    } else {
        a.intersection_len(b) as f64 / smaller as f64
    }
}

/// Keeps the larger mask of each duplicate pair; equal sizes keep the smaller id.
fn drop_duplicates(mut masks: Vec<Mask>, threshold: f64) -> Vec<Mask> {
    masks.sort_by(|a, b| b.len().cmp(&a.len()).then(a.id.cmp(&b.id)));
    let mut kept: Vec<Mask> = Vec::with_capacity(masks.len());
    for m in masks {
        if kept.iter().all(|k| mask_iou(k, &m) < threshold) {
            kept.push(m);
        }
    }
    kept
}

/// Unions the first qualifying pair in (smaller id, larger id) order until
/// no pair qualifies. Merged masks keep the smaller id.
fn merge_overlapping(mut masks: Vec<Mask>, threshold: f64) -> (Vec<Mask>, bool) {
    let mut changed = false;
    loop {
        masks.sort_by_key(|m| m.id);
        let pair = (0..masks.len()).find_map(|i| {
            (i + 1..masks.len())
                .find(|&j| overlap_coefficient(&masks[i], &masks[j]) >= threshold)
                .map(|j| (i, j))
        });
        let Some((i, j)) = pair else {
            return (masks, changed);
        };
        let absorbed = masks.remove(j);
        masks[i] = masks[i].union(&absorbed);
        changed = true;
    }
}

/// Refines the initial pool into the working set. Output is sorted by each
/// mask's smallest point index and has no pair at or above either threshold.
pub fn refine_masks(masks: &[Mask], cfg: &MaskRefineConfig) -> Vec<Mask> {
    let mut current: Vec<Mask> = masks
        .iter()
        .filter(|m| m.len() >= cfg.min_points)
        .cloned()
        .collect();
    loop {
        current = drop_duplicates(current, cfg.duplicate_iou);
        let (merged, changed) = merge_overlapping(current, cfg.merge_overlap);
        current = merged;
        if !changed {
            break;
        }
    }
    current.sort_by(|a, b| a.first_index().cmp(&b.first_index()).then(a.id.cmp(&b.id)));
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn mask(id: u32, idx: impl IntoIterator<Item = u32>) -> Mask {
        Mask::new(id, idx.into_iter().collect()).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = mask(0, 0..4);
        assert_eq!(mask_iou(&a, &a), 1.0);
        assert_eq!(mask_iou(&a, &mask(1, 10..14)), 0.0);
        // |A|=4, |B|=4, |A∩B|=2 -> 2/6
        let b = mask(1, 2..6);
        assert!((mask_iou(&a, &b) - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn identical_masks_collapse() {
        let out = refine_masks(&[mask(3, 0..100), mask(1, 0..100)], &MaskRefineConfig::default());
        assert_eq!(out, vec![mask(1, 0..100)]);
    }

    #[test]
    fn contained_mask_merges_into_container() {
        let a = mask(0, 20..80);
        let b = mask(1, 0..100);
        assert!((mask_iou(&a, &b) - 0.6).abs() < 1e-12);
        let out = refine_masks(&[a, b], &MaskRefineConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].indices(), mask(1, 0..100).indices());
    }

    #[test]
    fn small_masks_dropped_and_empty_ok() {
        assert!(refine_masks(&[], &MaskRefineConfig::default()).is_empty());
        let out = refine_masks(&[mask(0, 0..49), mask(1, 100..150)], &MaskRefineConfig::default());
        assert_eq!(out.iter().map(|m| m.id).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn disjoint_neighbors_survive() {
        let out = refine_masks(&[mask(0, 0..60), mask(1, 60..120), mask(2, 120..200)], &MaskRefineConfig::default());
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].first_index(), 0);
        assert_eq!(out[2].first_index(), 120);
    }

    #[test]
    fn merge_chain_reaches_fixpoint() {
        // 0 and 1 overlap 75%; their union then swallows 2.
        let masks = [mask(0, 0..80), mask(1, 20..100), mask(2, 40..120)];
        let cfg = MaskRefineConfig::default();
        let out = refine_masks(&masks, &cfg);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), 120);
        assert_eq!(out[0].id, 0);
    }

    #[test]
    fn config_validation() {
        assert!(MaskRefineConfig::default().validate().is_ok());
        let bad = MaskRefineConfig {
            duplicate_iou: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn pool() -> impl Strategy<Value = Vec<Mask>> {
        prop::collection::vec((0u32..300, 1usize..120), 0..14).prop_map(|spec| {
            spec.into_iter()
                .enumerate()
                .map(|(id, (start, len))| mask(id as u32, start..start + len as u32))
                .collect()
        })
    }

    fn small_cfg() -> MaskRefineConfig {
        MaskRefineConfig {
            min_points: 10,
            ..Default::default()
        }
    }

    proptest! {
        #[test]
        fn idempotent(masks in pool()) {
            let once = refine_masks(&masks, &small_cfg());
            prop_assert_eq!(refine_masks(&once, &small_cfg()), once);
        }

        #[test]
        fn conserves_points_and_shrinks(masks in pool()) {
            let out = refine_masks(&masks, &small_cfg());
            prop_assert!(out.len() <= masks.len());
            let input: BTreeSet<u32> = masks.iter().flat_map(|m| m.indices().iter().copied()).collect();
            for m in &out {
                prop_assert!(m.indices().iter().all(|i| input.contains(i)));
            }
        }

        #[test]
        fn pairwise_below_thresholds(masks in pool()) {
            let cfg = small_cfg();
            let out = refine_masks(&masks, &cfg);
            for i in 0..out.len() {
                for j in i + 1..out.len() {
                    prop_assert!(mask_iou(&out[i], &out[j]) < cfg.duplicate_iou);
                    prop_assert!(overlap_coefficient(&out[i], &out[j]) < cfg.merge_overlap);
                }
            }
        }

        #[test]
        fn input_order_irrelevant(masks in pool(), rot in 0usize..14) {
            let mut rotated = masks.clone();
            if !rotated.is_empty() {
                let k = rot % rotated.len();
                rotated.rotate_left(k);
            }
            rotated.reverse();
            prop_assert_eq!(refine_masks(&rotated, &small_cfg()), refine_masks(&masks, &small_cfg()));
        }
    }
}
