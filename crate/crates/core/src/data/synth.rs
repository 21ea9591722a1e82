//! Synthetic multi-class series: class-specific frequency bands with
//! class-specific amplitude modulation plus Gaussian noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesDataset;
use crate::error::{Error, Result};

/// Band layout is defined on this sampling rate and rescaled to others.
const REFERENCE_RATE: f64 = 64.0;
pub const MIN_LEN: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub classes: usize,
    pub n_per_class: usize,
    /// Overrides `n_per_class` with one count per class (imbalanced sets).
    pub class_counts: Option<Vec<usize>>,
    pub len: usize,
    pub channels: usize,
    pub sample_rate: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 3,
            n_per_class: 200,
            class_counts: None,
            len: 256,
            channels: 1,
            sample_rate: 64.0,
            noise_std: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn counts(&self) -> Vec<usize> {
        self.class_counts
            .clone()
            .unwrap_or_else(|| vec![self.n_per_class; self.classes])
    }

    /// Frequency band `[lo, hi]` in Hz for class `c`.
    pub fn band(&self, c: usize) -> (f64, f64) {
        let lo = 2.0 + 6.0 * c as f64;
        let hi = lo + if c == 0 { 2.0 } else { 4.0 };
        // squeeze the layout below 90% of Nyquist when there are many classes
        let top = 2.0 + 6.0 * (self.classes.max(1) - 1) as f64 + 4.0;
        let limit = 0.9 * REFERENCE_RATE / 2.0;
        let squeeze = if top > limit { limit / top } else { 1.0 };
        let s = squeeze * self.sample_rate / REFERENCE_RATE;
        (lo * s, hi * s)
    }

    /// Envelope frequency of class `c`, Hz.
    pub fn modulation(&self, c: usize) -> f64 {
        0.25 * (c + 1) as f64 * self.sample_rate / REFERENCE_RATE
    }
}

pub fn synth_generate(spec: &SynthSpec) -> Result<TimeSeriesDataset> {
    if spec.len < MIN_LEN {
        return Err(Error::InvalidArgument(format!(
            "synthetic series need at least {MIN_LEN} samples, got {}",
            spec.len
        )));
    }
    let counts = spec.counts();
    if counts.len() != spec.classes || spec.classes == 0 || counts.iter().sum::<usize>() == 0 {
        return Err(Error::InvalidArgument("class counts must cover every class".into()));
    }
    if spec.channels == 0 || !(spec.noise_std >= 0.0) {
        return Err(Error::InvalidArgument("channels ≥ 1 and noise_std ≥ 0 required".into()));
    }
    let noise = Normal::new(0.0, spec.noise_std).expect("non-negative std");
    let mut values = Vec::with_capacity(counts.iter().sum::<usize>() * spec.len * spec.channels);
    let mut labels = Vec::new();
    for (c, &count) in counts.iter().enumerate() {
        let (lo, hi) = spec.band(c);
        let f_am = spec.modulation(c);
        for k in 0..count {
            // each sample draws from its own stream so it does not depend on the counts
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(((c as u64) << 32) | k as u64);
            let mut sample = vec![0.0f64; spec.len * spec.channels];
            for ch in 0..spec.channels {
                let gain = rng.gen_range(0.6..1.0);
                let am_phase = rng.gen_range(0.0..2.0 * PI);
                let tones: Vec<(f64, f64, f64)> = (0..2)
                    .map(|_| {
                        (
                            rng.gen_range(lo..=hi),
                            rng.gen_range(0.0..2.0 * PI),
                            rng.gen_range(0.5..1.0),
                        )
                    })
                    .collect();
                for i in 0..spec.len {
                    let t = i as f64 / spec.sample_rate;
                    let env = 1.0 + 0.5 * (2.0 * PI * f_am * t + am_phase).sin();
                    let carrier: f64 = tones.iter().map(|&(f, ph, a)| a * (2.0 * PI * f * t + ph).sin()).sum();
                    sample[i * spec.channels + ch] = gain * env * carrier;
                }
            }
            if spec.noise_std > 0.0 {
                for v in &mut sample {
                    *v += noise.sample(&mut rng);
                }
            }
            values.extend(sample.into_iter().map(|v| v as f32));
            labels.push(c);
        }
    }
    TimeSeriesDataset::new(
        values,
        labels,
        spec.len,
        spec.channels,
        (0..spec.classes).map(|c| format!("class{c}")).collect(),
        spec.sample_rate,
        format!("synth:seed={}", spec.seed),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dominant_bin(x: &[f64], w: usize) -> usize {
        // direct DFT power summed over non-overlapping frames
        let mut power = vec![0.0; w / 2 + 1];
        for frame in x.chunks_exact(w) {
            for (k, p) in power.iter_mut().enumerate() {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in frame.iter().enumerate() {
                    let a = -2.0 * PI * (k * i) as f64 / w as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                *p += re * re + im * im;
            }
        }
        (1..power.len()).max_by(|&a, &b| power[a].total_cmp(&power[b])).unwrap()
    }

    #[test]
    fn reference_bands() {
        let s = SynthSpec::default();
        assert_eq!(s.band(0), (2.0, 4.0));
        assert_eq!(s.band(1), (8.0, 12.0));
        let many = SynthSpec {
            classes: 8,
            ..SynthSpec::default()
        };
        assert!(many.band(7).1 <= 0.9 * 32.0 + 1e-9);
    }

    #[test]
    fn noiseless_same_seed_is_identical() {
        let spec = SynthSpec {
            n_per_class: 1,
            noise_std: 0.0,
            ..SynthSpec::default()
        };
        let a = synth_generate(&spec).unwrap();
        let b = synth_generate(&spec).unwrap();
        assert_eq!(a, b);
        // sample content does not depend on how many are generated
        let more = synth_generate(&SynthSpec { n_per_class: 3, ..spec }).unwrap();
        assert_eq!(more.sample(3), a.sample(1));
    }

    #[test]
    fn class_one_peaks_above_class_zero() {
        let d = synth_generate(&SynthSpec {
            classes: 2,
            n_per_class: 5,
            noise_std: 0.0,
            ..SynthSpec::default()
        })
        .unwrap();
        for k in 0..5 {
            let b0 = dominant_bin(&d.sample_f64(k), 32);
            let b1 = dominant_bin(&d.sample_f64(5 + k), 32);
            // 2 Hz bins at 64 Hz with a 32-point window
            assert!((1..=2).contains(&b0), "{b0}");
            assert!((4..=6).contains(&b1), "{b1}");
            assert!(b1 > b0);
        }
    }

    #[test]
    fn counts_per_class() {
        let d = synth_generate(&SynthSpec {
            n_per_class: 7,
            ..SynthSpec::default()
        })
        .unwrap();
        assert_eq!(d.class_counts(), vec![7, 7, 7]);
        let imb = synth_generate(&SynthSpec {
            class_counts: Some(vec![10, 3, 1]),
            ..SynthSpec::default()
        })
        .unwrap();
        assert_eq!(imb.class_counts(), vec![10, 3, 1]);
    }

    #[test]
    fn short_length_rejected() {
        assert!(synth_generate(&SynthSpec {
            len: 32,
            ..SynthSpec::default()
        })
        .is_err());
    }
}
