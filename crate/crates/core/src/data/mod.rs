//! Dataset container and its on-disk format.
//!
//! A dataset directory holds `manifest.json`, `data.bin` (little-endian
//! `f32`, `n × len × channels` row-major) and `labels.bin` (little-endian
//! `u32`, one per sample).

pub mod convert;
pub mod corrupt;
pub mod split;
pub mod synth;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use corrupt::{corrupt, Corruption};
pub use split::{make_splits, stratified_subset, Fold, SplitPlan};
pub use synth::{synth_generate, SynthSpec};

pub const DATASET_FORMAT: &str = "trls-dataset-v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.bin";
pub const LABELS_FILE: &str = "labels.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub n: usize,
    pub len: usize,
    pub channels: usize,
    pub classes: Vec<String>,
    pub sample_rate: f64,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesDataset {
    pub len: usize,
    pub channels: usize,
    values: Vec<f32>,
    labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub sample_rate: f64,
    pub source: String,
}

impl TimeSeriesDataset {
    pub fn new(
        values: Vec<f32>,
        labels: Vec<usize>,
        len: usize,
        channels: usize,
        class_names: Vec<String>,
        sample_rate: f64,
        source: impl Into<String>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidArgument("dataset has no samples".into()));
        }
        if len == 0 || channels == 0 || values.len() != n * len * channels {
            return Err(Error::InvalidArgument(format!(
                "{} values for {n} samples of {len}×{channels}",
                values.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= class_names.len()) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside {} classes",
                class_names.len()
            )));
        }
        if !(sample_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("sample rate {sample_rate}")));
        }
        Ok(TimeSeriesDataset {
            len,
            channels,
            values,
            labels,
            class_names,
            sample_rate,
            source: source.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Sample `i` as `[len × channels]` values.
    pub fn sample(&self, i: usize) -> &[f32] {
        let w = self.len * self.channels;
        &self.values[i * w..(i + 1) * w]
    }

    pub fn sample_f64(&self, i: usize) -> Vec<f64> {
        self.sample(i).iter().map(|&v| v as f64).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes()];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.len * self.channels);
        for &i in indices {
            values.extend_from_slice(self.sample(i));
        }
        TimeSeriesDataset::new(
            values,
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.len,
            self.channels,
            self.class_names.clone(),
            self.sample_rate,
            self.source.clone(),
        )
    }

    /// Same labels and metadata, new values.
    pub fn with_values(&self, values: Vec<f32>) -> Result<Self> {
        TimeSeriesDataset::new(
            values,
            self.labels.clone(),
            self.len,
            self.channels,
            self.class_names.clone(),
            self.sample_rate,
            self.source.clone(),
        )
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            format: DATASET_FORMAT.into(),
            n: self.n(),
            len: self.len,
            channels: self.channels,
            classes: self.class_names.clone(),
            sample_rate: self.sample_rate,
            source: self.source.clone(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = dir.join(MANIFEST_FILE);
        fs::write(&m, serde_json::to_vec_pretty(&self.manifest())?).map_err(|e| Error::io(&m, e))?;
        let d = dir.join(DATA_FILE);
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&d, bytes).map_err(|e| Error::io(&d, e))?;
        let l = dir.join(LABELS_FILE);
        let bytes: Vec<u8> = self.labels.iter().flat_map(|&y| (y as u32).to_le_bytes()).collect();
        fs::write(&l, bytes).map_err(|e| Error::io(&l, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m = dir.join(MANIFEST_FILE);
        let raw = fs::read(&m).map_err(|e| Error::io(&m, e))?;
        let man: DatasetManifest = serde_json::from_slice(&raw).map_err(|e| Error::format(&m, e.to_string()))?;
        if man.format != DATASET_FORMAT {
            return Err(Error::format(&m, format!("unknown format `{}`", man.format)));
        }
        if man.n == 0 {
            return Err(Error::format(&m, "dataset has no samples"));
        }
        let d = dir.join(DATA_FILE);
        let bytes = fs::read(&d).map_err(|e| Error::io(&d, e))?;
        let expected = man.n * man.len * man.channels * 4;
        if bytes.len() != expected {
            return Err(Error::format(
                &d,
                format!(
                    "payload has {} bytes, manifest ({}×{}×{}) requires {expected}",
                    bytes.len(),
                    man.n,
                    man.len,
                    man.channels
                ),
            ));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let l = dir.join(LABELS_FILE);
        let bytes = fs::read(&l).map_err(|e| Error::io(&l, e))?;
        if bytes.len() != man.n * 4 {
            return Err(Error::format(
                &l,
                format!("labels have {} bytes, expected {}", bytes.len(), man.n * 4),
            ));
        }
        let labels = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        TimeSeriesDataset::new(
            values,
            labels,
            man.len,
            man.channels,
            man.classes,
            man.sample_rate,
            man.source,
        )
        .map_err(|e| Error::format(dir, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(n: usize) -> TimeSeriesDataset {
        let values = (0..n * 6).map(|i| (i as f32 * 0.37).sin() * 1e3).collect();
        TimeSeriesDataset::new(
            values,
            (0..n).map(|i| i % 2).collect(),
            3,
            2,
            vec!["a".into(), "b".into()],
            10.0,
            "toy",
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let d = toy(5);
        d.save(dir.path()).unwrap();
        let back = TimeSeriesDataset::load(dir.path()).unwrap();
        assert_eq!(back, d);
        let a: Vec<u32> = d.values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn size_mismatch_rejected_with_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        toy(5).save(dir.path()).unwrap();
        let p = dir.path().join(DATA_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(100);
        fs::write(&p, bytes).unwrap();
        let err = TimeSeriesDataset::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("100 bytes") && err.contains("120"), "{err}");
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(TimeSeriesDataset::new(vec![], vec![], 3, 1, vec!["a".into()], 1.0, "x").is_err());
        let dir = tempfile::tempdir().unwrap();
        toy(2).save(dir.path()).unwrap();
        let m = dir.path().join(MANIFEST_FILE);
        let mut man: DatasetManifest = serde_json::from_slice(&fs::read(&m).unwrap()).unwrap();
        man.n = 0;
        fs::write(&m, serde_json::to_vec(&man).unwrap()).unwrap();
        assert!(TimeSeriesDataset::load(dir.path()).is_err());
    }

    #[test]
    fn bad_label_rejected() {
        assert!(TimeSeriesDataset::new(vec![0.0; 3], vec![2], 3, 1, vec!["a".into(), "b".into()], 1.0, "x").is_err());
    }

    #[test]
    fn subset_keeps_order() {
        let d = toy(6);
        let s = d.subset(&[4, 1]).unwrap();
        assert_eq!(s.sample(0), d.sample(4));
        assert_eq!(s.labels(), &[0, 1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn roundtrip_any_values(vals in proptest::collection::vec(proptest::num::f32::NORMAL, 8)) {
            let dir = tempfile::tempdir().unwrap();
            let d = TimeSeriesDataset::new(vals, vec![0, 1], 4, 1, vec!["a".into(), "b".into()], 1.0, "p").unwrap();
            d.save(dir.path()).unwrap();
            prop_assert_eq!(TimeSeriesDataset::load(dir.path()).unwrap(), d);
        }
    }
}
