//! Run configuration file (TOML) and ablation variants.
//!
//! Every section is optional and defaults to the library defaults; unknown
//! keys are rejected.
//!
//! ```toml
//! seed = 0
//!
//! [data]
//! path = "data/har"          # omit to generate the synthetic set below
//! [data.synth]
//! classes = 3
//! n_per_class = 200
//!
//! [stft]
//! window_size = 32
//! hop = 8
//!
//! [encoder]
//! scales = 5
//! cell = "lstm"
//!
//! [ssl]
//! epochs = 50
//! tau = 0.7
//!
//! [eval]
//! run_folds = 5
//!
//! [ablation]
//! variant = "wo_multiscale"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AugOp, AugStrategy, AugmentConfig};
use crate::data::{synth_generate, SynthSpec, TimeSeriesDataset};
use crate::encoder::{EncoderConfig, InputKind};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::numeric::CellKind;
use crate::signal::StftConfig;
use crate::ssl::{HeadConfig, PretrainConfig, SslConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset directory; the synthetic generator is used when absent.
    pub path: Option<PathBuf>,
    pub synth: SynthSpec,
}

impl DataConfig {
    pub fn load(&self) -> Result<TimeSeriesDataset> {
        match &self.path {
            Some(p) => TimeSeriesDataset::load(p),
            None => synth_generate(&self.synth),
        }
    }
}

/// One row of the ablation table, reachable by exactly one name.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Raw series through a strided stem instead of spectrograms.
    WoSpectrogram,
    /// A single scale (K = 1).
    WoMultiscale,
    WoColorJitter,
    WoHorizontalFlip,
    WoGaussianBlur,
    /// Contrastive loss with in-batch negatives.
    WNegatives,
    CellGru,
    CellRnn,
    CellTcn,
    SameSpectrogramAug,
    DifferentTimeAug,
    SameTimeJitterAug,
    SameTimePermutationAug,
    TimeAndSpectrogramAug,
}

impl Variant {
    pub const ALL: [Variant; 15] = [
        Variant::Full,
        Variant::WoSpectrogram,
        Variant::WoMultiscale,
        Variant::WoColorJitter,
        Variant::WoHorizontalFlip,
        Variant::WoGaussianBlur,
        Variant::WNegatives,
        Variant::CellGru,
        Variant::CellRnn,
        Variant::CellTcn,
        Variant::SameSpectrogramAug,
        Variant::DifferentTimeAug,
        Variant::SameTimeJitterAug,
        Variant::SameTimePermutationAug,
        Variant::TimeAndSpectrogramAug,
    ];

    pub fn name(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    }

    pub fn parse(name: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(name.to_owned())).map_err(|_| {
            let names: Vec<String> = Variant::ALL.iter().map(|v| v.name()).collect();
            Error::Config(format!(
                "unknown variant `{name}`; expected one of {}",
                names.join(", ")
            ))
        })
    }

    /// Applies the variant's single change to a pretraining configuration.
    pub fn apply(self, cfg: &mut PretrainConfig) {
        let drop = |aug: &mut AugmentConfig, op: AugOp| {
            aug.first.retain(|&o| o != op);
            aug.second.retain(|&o| o != op);
        };
        let strategy = |cfg: &mut PretrainConfig, s: AugStrategy| cfg.augment.strategy = s;
        match self {
            Variant::Full => {}
            Variant::WoSpectrogram => cfg.encoder.input = InputKind::TimeDomain,
            Variant::WoMultiscale => cfg.encoder.scales = 1,
            Variant::WoColorJitter => drop(&mut cfg.augment, AugOp::Jitter),
            Variant::WoHorizontalFlip => drop(&mut cfg.augment, AugOp::Flip),
            Variant::WoGaussianBlur => drop(&mut cfg.augment, AugOp::Blur),
            Variant::WNegatives => cfg.ssl.negatives = true,
            Variant::CellGru => cfg.encoder.cell = CellKind::Gru,
            Variant::CellRnn => cfg.encoder.cell = CellKind::Rnn,
            Variant::CellTcn => cfg.encoder.cell = CellKind::Tcn,
            Variant::SameSpectrogramAug => strategy(cfg, AugStrategy::SameSpectrogram),
            Variant::DifferentTimeAug => strategy(cfg, AugStrategy::DifferentTime),
            Variant::SameTimeJitterAug => strategy(cfg, AugStrategy::SameTimeJitter),
            Variant::SameTimePermutationAug => strategy(cfg, AugStrategy::SameTimePermutation),
            Variant::TimeAndSpectrogramAug => strategy(cfg, AugStrategy::TimeAndSpectrogram),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub variant: Variant,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub stft: StftConfig,
    pub augment: AugmentConfig,
    pub encoder: EncoderConfig,
    pub ssl: SslConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl RunConfig {
    /// A configuration small enough to pretrain in seconds on a laptop:
    /// one block, narrow recurrent passes, hop 8, a single fold.
    pub fn desk() -> Self {
        let mut cfg = RunConfig::default();
        cfg.stft.hop = Some(8);
        cfg.encoder.num_blocks = 1;
        cfg.encoder.time_hidden = 16;
        cfg.encoder.freq_hidden = 16;
        cfg.encoder.proj_width = 32;
        cfg.ssl.head = HeadConfig {
            hidden: 64,
            proj_dim: 32,
        };
        cfg.ssl.epochs = 10;
        cfg.eval.run_folds = 1;
        cfg.eval.finetune.train.batch_size = 32;
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Pretraining settings with the ablation variant applied.
    pub fn pretrain(&self) -> PretrainConfig {
        let mut cfg = PretrainConfig {
            stft: self.stft.clone(),
            augment: self.augment.clone(),
            encoder: self.encoder.clone(),
            ssl: self.ssl.clone(),
        };
        self.ablation.variant.apply(&mut cfg);
        cfg
    }
}
