//! Negative-free twin-network pretraining.

pub mod heads;
pub mod loss;
pub mod train;
pub mod twin;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::encoder::{EncoderConfig, InputKind};
use crate::error::{Error, Result};
use crate::numeric::AdamConfig;
use crate::signal::StftConfig;

pub use heads::{HeadConfig, MlpHead};
pub use loss::{multiscale_loss, ntxent_loss, scale_loss};
pub use train::{pretrain, training_step, EpochRecord, LossReport, Pretrained};
pub use twin::{ema_update, ArchSpec, CheckpointMeta, TwinNetworks};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SslConfig {
    /// Moving-average decay of the target network.
    pub tau: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub head: HeadConfig,
    /// Replace the regression loss by in-batch contrastive loss at the finest scale.
    pub negatives: bool,
    pub temperature: f64,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            tau: 0.7,
            epochs: 50,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            head: HeadConfig::default(),
            negatives: false,
            temperature: 0.2,
        }
    }
}

/// Everything pretraining consumes besides the data and the seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub stft: StftConfig,
    pub augment: AugmentConfig,
    pub encoder: EncoderConfig,
    pub ssl: SslConfig,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.augment.validate()?;
        self.encoder.validate()?;
        if !(0.0..=1.0).contains(&self.ssl.tau) {
            return Err(Error::InvalidArgument(format!("tau {} outside [0, 1]", self.ssl.tau)));
        }
        if self.ssl.batch_size < 2 {
            return Err(Error::InvalidArgument("batch_size must be at least 2".into()));
        }
        if self.encoder.input == InputKind::TimeDomain
            && self.augment.strategy == crate::augment::AugStrategy::TimeAndSpectrogram
        {
            return Err(Error::InvalidArgument(
                "spectrogram augmentations need spectrogram input".into(),
            ));
        }
        Ok(())
    }
}
