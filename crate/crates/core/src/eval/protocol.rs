//! Cross-validated evaluation runs, sweeps and their reports.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{corrupt, make_splits, Corruption, Fold, SplitPlan, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::eval::embed::{embed, EmbedMode};
use crate::eval::finetune::{finetune, FinetuneConfig};
use crate::eval::linear::{ClassifierConfig, LinearClassifier, Scores, Split};
use crate::ssl::{pretrain, PretrainConfig, TwinNetworks};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: SplitPlan,
    /// How many of the split's folds to run, starting at fold 0.
    pub run_folds: usize,
    pub embed: EmbedMode,
    pub linear: ClassifierConfig,
    pub finetune: FinetuneConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: SplitPlan::default(),
            run_folds: 5,
            embed: EmbedMode::Concat,
            linear: ClassifierConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }
}

impl EvalConfig {
    /// The folds this configuration evaluates.
    pub fn folds(&self, data: &TimeSeriesDataset) -> Result<Vec<Fold>> {
        let mut folds = make_splits(data.labels(), data.num_classes(), &self.split)?;
        if self.run_folds == 0 || self.run_folds > folds.len() {
            return Err(Error::Config(format!(
                "run_folds {} outside 1..={}",
                self.run_folds,
                folds.len()
            )));
        }
        folds.truncate(self.run_folds);
        Ok(folds)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldScores {
    pub fold: usize,
    pub acc: f64,
    pub mf1: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: Vec<FoldScores>,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub mf1_mean: f64,
    pub mf1_std: f64,
    pub seed: u64,
    pub wall_ms: u64,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn new(folds: Vec<FoldScores>, seed: u64, wall_ms: u64, config: serde_json::Value) -> Self {
        let (acc_mean, acc_std) = mean_std(&folds.iter().map(|f| f.acc).collect::<Vec<_>>());
        let (mf1_mean, mf1_std) = mean_std(&folds.iter().map(|f| f.mf1).collect::<Vec<_>>());
        EvalReport {
            folds,
            acc_mean,
            acc_std,
            mf1_mean,
            mf1_std,
            seed,
            wall_ms,
            config,
        }
    }
}

/// One line of a sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: String,
    pub runs: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub mf1_mean: f64,
    pub mf1_std: f64,
}

impl SweepRow {
    pub fn new(setting: impl Into<String>, scores: &[Scores]) -> Self {
        let (acc_mean, acc_std) = mean_std(&scores.iter().map(|s| s.acc).collect::<Vec<_>>());
        let (mf1_mean, mf1_std) = mean_std(&scores.iter().map(|s| s.mf1).collect::<Vec<_>>());
        SweepRow {
            setting: setting.into(),
            runs: scores.len(),
            acc_mean,
            acc_std,
            mf1_mean,
            mf1_std,
        }
    }
}

pub fn write_table(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn labels_of(data: &TimeSeriesDataset, idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| data.labels()[i]).collect()
}

/// Linear classifier on frozen embeddings of the fold's train split,
/// early-stopped on its valid split.
pub fn fit_probe(
    twin: &mut TwinNetworks,
    data: &TimeSeriesDataset,
    fold: &Fold,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<LinearClassifier> {
    let xt = embed(twin, data, &fold.train, cfg.embed)?;
    let yt = labels_of(data, &fold.train);
    let valid = if fold.valid.is_empty() {
        None
    } else {
        Some((embed(twin, data, &fold.valid, cfg.embed)?, labels_of(data, &fold.valid)))
    };
    LinearClassifier::fit(
        Split { x: &xt, y: &yt },
        valid.as_ref().map(|(x, y)| Split { x, y }),
        data.num_classes(),
        &cfg.linear,
        seed,
    )
}

/// Linear evaluation of a frozen encoder on one fold's test split.
pub fn linear_eval_fold(
    twin: &mut TwinNetworks,
    data: &TimeSeriesDataset,
    fold: &Fold,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Scores> {
    let mut probe = fit_probe(twin, data, fold, cfg, seed)?;
    let xs = embed(twin, data, &fold.test, cfg.embed)?;
    probe.score(
        Split {
            x: &xs,
            y: &labels_of(data, &fold.test),
        },
        data.num_classes(),
    )
}

/// Pretrains on each fold's training split, then evaluates linearly.
pub fn pretrain_and_evaluate(
    data: &TimeSeriesDataset,
    pcfg: &PretrainConfig,
    ecfg: &EvalConfig,
    seed: u64,
) -> Result<Vec<Scores>> {
    ecfg.folds(data)?
        .iter()
        .map(|fold| {
            let mut twin = pretrain(data, &fold.train, pcfg, seed, false, |_| Ok(()))?.twin;
            linear_eval_fold(&mut twin, data, fold, ecfg, seed)
        })
        .collect()
}

/// Full pretrain plus linear evaluation for each pyramid depth.
pub fn sweep_k(
    data: &TimeSeriesDataset,
    ks: &[usize],
    pcfg: &PretrainConfig,
    ecfg: &EvalConfig,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    ks.iter()
        .map(|&k| {
            let mut cfg = pcfg.clone();
            cfg.encoder.scales = k;
            let scores = pretrain_and_evaluate(data, &cfg, ecfg, seed)?;
            Ok(SweepRow::new(format!("K={k}"), &scores))
        })
        .collect()
}

/// Trains one probe on clean embeddings, then scores it on the test split
/// under each corruption. Only the test split is corrupted.
pub fn sweep_robustness(
    twin: &mut TwinNetworks,
    data: &TimeSeriesDataset,
    fold: &Fold,
    corruptions: &[Corruption],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let mut probe = fit_probe(twin, data, fold, cfg, seed)?;
    let test = data.subset(&fold.test)?;
    let all: Vec<usize> = (0..test.n()).collect();
    corruptions
        .iter()
        .map(|&how| {
            let noisy = corrupt(&test, how, seed)?;
            let x = embed(twin, &noisy, &all, cfg.embed)?;
            let s = probe.score(
                Split {
                    x: &x,
                    y: noisy.labels(),
                },
                data.num_classes(),
            )?;
            Ok(SweepRow::new(how.label(), &[s]))
        })
        .collect()
}

/// Fine-tuning on each fold from the same starting networks.
pub fn finetune_folds(
    twin: &TwinNetworks,
    data: &TimeSeriesDataset,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Vec<FoldScores>> {
    cfg.folds(data)?
        .iter()
        .enumerate()
        .map(|(k, fold)| {
            let s = finetune(twin, data, fold, &cfg.finetune, cfg.embed, seed)?;
            Ok(FoldScores {
                fold: k,
                acc: s.acc,
                mf1: s.mf1,
            })
        })
        .collect()
}

/// Milliseconds since `start`, or 0 when wall time is not recorded.
pub fn elapsed_ms(start: Instant, record: bool) -> u64 {
    if record {
        start.elapsed().as_millis() as u64
    } else {
        0
    }
}
