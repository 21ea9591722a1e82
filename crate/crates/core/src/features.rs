//! Turns dataset samples into encoder inputs and augmented training views.

use rand_chacha::ChaCha8Rng;

use crate::augment::{apply_ops, apply_time_op, AugmentConfig, View};
use crate::data::TimeSeriesDataset;
use crate::encoder::{InputKind, StemSpec};
use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::signal::{stack_channels, Stft, StftConfig};

/// Per-sample, per-channel zero mean and unit variance (`[len × channels]`).
pub fn znorm_series(series: &[f64], channels: usize) -> Vec<f64> {
    let len = series.len() / channels;
    let mut out = series.to_vec();
    for c in 0..channels {
        let mean = (0..len).map(|i| series[i * channels + c]).sum::<f64>() / len as f64;
        let var = (0..len).map(|i| (series[i * channels + c] - mean).powi(2)).sum::<f64>() / len as f64;
        let denom = var.sqrt() + 1e-8;
        for i in 0..len {
            out[i * channels + c] = (series[i * channels + c] - mean) / denom;
        }
    }
    out
}

pub struct Featurizer {
    kind: InputKind,
    stft: Stft,
    pub len: usize,
    pub channels: usize,
    pub sample_rate: f64,
}

impl Featurizer {
    pub fn new(stft: &StftConfig, kind: InputKind, len: usize, channels: usize, sample_rate: f64) -> Result<Self> {
        let stft = Stft::new(stft.clone())?;
        if len < stft.config().window_size {
            return Err(Error::InvalidArgument(format!(
                "series of length {len} is shorter than the STFT window; need at least {} samples",
                stft.config().window_size
            )));
        }
        Ok(Featurizer {
            kind,
            stft,
            len,
            channels,
            sample_rate,
        })
    }

    pub fn for_dataset(stft: &StftConfig, kind: InputKind, data: &TimeSeriesDataset) -> Result<Self> {
        Self::new(stft, kind, data.len, data.channels, data.sample_rate)
    }

    pub fn kind(&self) -> InputKind {
        self.kind
    }

    /// Spectrogram frames and stacked bins.
    pub fn map_dims(&self) -> (usize, usize) {
        let cfg = self.stft.config();
        (cfg.frames(self.len), cfg.bins() * self.channels)
    }

    /// Stem geometry mirroring the STFT framing, for raw-series input.
    pub fn stem_spec(&self) -> StemSpec {
        let cfg = self.stft.config();
        StemSpec {
            kernel: cfg.window_size,
            stride: cfg.hop(),
            width: cfg.bins() * self.channels,
            channels: self.channels,
        }
    }

    /// Series prepared for augmentation, `[len × channels]`.
    pub fn series(&self, data: &TimeSeriesDataset, i: usize) -> Tensor {
        let raw = data.sample_f64(i);
        let v = match self.kind {
            InputKind::Spectrogram => raw,
            InputKind::TimeDomain => znorm_series(&raw, self.channels),
        };
        Tensor::new(vec![self.len, self.channels], v).expect("dataset geometry")
    }

    /// Encoder input for one prepared series.
    pub fn encode_input(&self, series: &Tensor) -> Result<Tensor> {
        match self.kind {
            InputKind::Spectrogram => {
                let spec = self.stft.run(series.data(), self.channels, self.sample_rate)?;
                stack_channels(&spec.data)
            }
            InputKind::TimeDomain => Ok(series.clone()),
        }
    }

    /// Unaugmented encoder inputs.
    pub fn inputs(&self, data: &TimeSeriesDataset, indices: &[usize]) -> Result<Vec<Tensor>> {
        indices
            .iter()
            .map(|&i| self.encode_input(&self.series(data, i)))
            .collect()
    }

    /// One augmented view. `clean` is the cached unaugmented input of `series`.
    pub fn view(
        &self,
        series: &Tensor,
        clean: &Tensor,
        view: View,
        aug: &AugmentConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let input = match aug.time_op(view) {
            Some(op) => self.encode_input(&apply_time_op(series, op, aug, rng))?,
            None => clean.clone(),
        };
        let ops = aug.spectrogram_ops(view);
        if ops.is_empty() || self.kind == InputKind::TimeDomain {
            Ok(input)
        } else {
            Ok(apply_ops(&input, &ops, aug, rng))
        }
    }
}

/// Stacks equally shaped 2-D inputs into `[b × rows × cols]`.
pub fn batch(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(inputs.len() * first.numel());
    for t in inputs {
        if t.shape() != shape.as_slice() {
            return Err(Error::shape("batch", format!("{:?} vs {:?}", t.shape(), shape)));
        }
        data.extend_from_slice(t.data());
    }
    let mut full = vec![inputs.len()];
    full.extend(shape);
    Tensor::new(full, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugStrategy;
    use crate::data::{synth_generate, SynthSpec};
    use rand::SeedableRng;

    fn data() -> TimeSeriesDataset {
        synth_generate(&SynthSpec {
            n_per_class: 2,
            channels: 2,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn spectrogram_inputs_have_map_dims() {
        let d = data();
        let cfg = StftConfig {
            hop: Some(8),
            ..StftConfig::default()
        };
        let f = Featurizer::for_dataset(&cfg, InputKind::Spectrogram, &d).unwrap();
        assert_eq!(f.map_dims(), (29, 34));
        let x = f.inputs(&d, &[0, 3]).unwrap();
        assert_eq!(x[1].shape(), &[29, 34]);
        let b = batch(&[&x[0], &x[1]]).unwrap();
        assert_eq!(b.shape(), &[2, 29, 34]);
    }

    #[test]
    fn time_domain_inputs_are_normalized() {
        let d = data();
        let f = Featurizer::for_dataset(&StftConfig::default(), InputKind::TimeDomain, &d).unwrap();
        let x = f.inputs(&d, &[1]).unwrap();
        assert_eq!(x[0].shape(), &[256, 2]);
        let ch0: Vec<f64> = x[0].data().iter().step_by(2).copied().collect();
        let m = ch0.iter().sum::<f64>() / 256.0;
        assert!(m.abs() < 1e-9);
        let s = f.stem_spec();
        assert_eq!((s.kernel, s.stride, s.width, s.frames(256)), (32, 16, 34, 15));
    }

    #[test]
    fn views_follow_strategy() {
        let d = data();
        let f = Featurizer::for_dataset(&StftConfig::default(), InputKind::Spectrogram, &d).unwrap();
        let series = f.series(&d, 0);
        let clean = f.encode_input(&series).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let id = AugmentConfig::identity();
        assert_eq!(f.view(&series, &clean, View::First, &id, &mut rng).unwrap(), clean);
        let time = AugmentConfig {
            strategy: AugStrategy::DifferentTime,
            ..AugmentConfig::default()
        };
        let v = f.view(&series, &clean, View::Second, &time, &mut rng).unwrap();
        assert_eq!(v.shape(), clean.shape());
        assert_ne!(v, clean);
    }
}
