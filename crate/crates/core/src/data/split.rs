//! Deterministic cross-validation folds with a 6:2:2 train/valid/test split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitPlan {
    /// The data is dealt into this many chunks; each fold tests on one chunk,
    /// validates on the next and trains on the rest (6:2:2 for five folds).
    pub folds: usize,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan { folds: 5, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

pub const MIN_SAMPLES: usize = 10;

/// Splits `labels.len()` samples into `plan.folds` folds, stratified by
/// label unless some class has fewer members than there are folds.
pub fn make_splits(labels: &[usize], num_classes: usize, plan: &SplitPlan) -> Result<Vec<Fold>> {
    let n = labels.len();
    if n < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "splitting needs at least {MIN_SAMPLES} samples, got {n}"
        )));
    }
    if plan.folds < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 folds, got {}",
            plan.folds
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let stratify = by_class.iter().all(|c| c.is_empty() || c.len() >= plan.folds);
    let order: Vec<usize> = if stratify {
        by_class
            .into_iter()
            .flat_map(|mut c| {
                c.shuffle(&mut rng);
                c
            })
            .collect()
    } else {
        log::warn!(
            "a class has fewer than {} members; falling back to unstratified folds",
            plan.folds
        );
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all
    };
    let mut chunks = vec![Vec::new(); plan.folds];
    for (k, i) in order.into_iter().enumerate() {
        chunks[k % plan.folds].push(i);
    }
    for c in &mut chunks {
        c.sort_unstable();
    }
    Ok((0..plan.folds)
        .map(|k| {
            let v = (k + 1) % plan.folds;
            let mut train: Vec<usize> = chunks
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != k && *j != v)
                .flat_map(|(_, c)| c.iter().copied())
                .collect();
            train.sort_unstable();
            Fold {
                train,
                valid: chunks[v].clone(),
                test: chunks[k].clone(),
            }
        })
        .collect())
}

/// Seeded per-class subsample of `indices` keeping `fraction` of each class
/// (at least one sample per class present in `indices`).
pub fn stratified_subset(
    labels: &[usize],
    indices: &[usize],
    num_classes: usize,
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for &i in indices {
        by_class[labels[i]].push(i);
    }
    if let Some(c) = by_class.iter().position(|c| c.is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "class {c} has no samples to draw a labelled subset from"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for mut c in by_class {
        c.shuffle(&mut rng);
        let k = ((c.len() as f64 * fraction).round() as usize).clamp(1, c.len());
        out.extend_from_slice(&c[..k]);
    }
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_samples_give_six_two_two() {
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        for f in make_splits(&labels, 2, &SplitPlan::default()).unwrap() {
            assert_eq!((f.train.len(), f.valid.len(), f.test.len()), (6, 2, 2));
        }
    }

    #[test]
    fn too_small_rejected() {
        assert!(make_splits(&[0; 9], 1, &SplitPlan::default()).is_err());
    }

    #[test]
    fn stratified_when_possible() {
        let labels: Vec<usize> = (0..600).map(|i| i / 200).collect();
        for f in make_splits(&labels, 3, &SplitPlan { folds: 5, seed: 3 }).unwrap() {
            for c in 0..3 {
                assert_eq!(f.test.iter().filter(|&&i| labels[i] == c).count(), 40);
            }
        }
    }

    #[test]
    fn rare_class_falls_back() {
        let mut labels = vec![0; 30];
        labels[3] = 1;
        let folds = make_splits(&labels, 2, &SplitPlan::default()).unwrap();
        assert_eq!(folds.len(), 5);
    }

    #[test]
    fn subset_keeps_every_class() {
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i % 10 == 0)).collect();
        let idx: Vec<usize> = (0..100).collect();
        let s = stratified_subset(&labels, &idx, 2, 0.05, 1).unwrap();
        assert!(s.iter().any(|&i| labels[i] == 1));
        assert_eq!(s.len(), 5 + 1);
        assert_eq!(s, stratified_subset(&labels, &idx, 2, 0.05, 1).unwrap());
        assert!(stratified_subset(&labels, &[1, 2], 2, 0.5, 1).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_and_repeat(n in 10usize..200, classes in 1usize..5, seed in 0u64..1000) {
            let labels: Vec<usize> = (0..n).map(|i| (i * 7 + i / 3) % classes).collect();
            let plan = SplitPlan { folds: 5, seed };
            let folds = make_splits(&labels, classes, &plan).unwrap();
            prop_assert_eq!(&folds, &make_splits(&labels, classes, &plan).unwrap());
            let mut tests = Vec::new();
            for f in &folds {
                let mut all: Vec<usize> = f.train.iter().chain(&f.valid).chain(&f.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                prop_assert!((f.test.len() as isize - (n / 5) as isize).abs() <= 1);
                tests.extend_from_slice(&f.test);
            }
            tests.sort_unstable();
            prop_assert_eq!(tests, (0..n).collect::<Vec<_>>());
        }
    }
}
