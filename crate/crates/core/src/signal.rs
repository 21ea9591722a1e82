//! Short-time Fourier transform of multichannel series into spectrograms.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::checkpoint::save_tensors;
use crate::numeric::Tensor;

/// Added to the standard deviation when standardizing a spectrogram.
pub const STANDARDIZE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowFn {
    /// Periodic Hann taper.
    #[default]
    Hann,
    Rectangular,
}

impl WindowFn {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowFn::Rectangular => vec![1.0; n],
            WindowFn::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub window_size: usize,
    /// Defaults to half the window.
    pub hop: Option<usize>,
    pub window_fn: WindowFn,
    pub log_scale: bool,
    pub standardize: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window_size: 32,
            hop: None,
            window_fn: WindowFn::Hann,
            log_scale: true,
            standardize: true,
        }
    }
}

impl StftConfig {
    /// Raw magnitudes: no log scaling, no standardization.
    pub fn raw(window_size: usize, hop: usize, window_fn: WindowFn) -> Self {
        StftConfig {
            window_size,
            hop: Some(hop),
            window_fn,
            log_scale: false,
            standardize: false,
        }
    }

    pub fn hop(&self) -> usize {
        self.hop.unwrap_or(self.window_size / 2)
    }

    pub fn bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    pub fn frames(&self, len: usize) -> usize {
        if len < self.window_size {
            0
        } else {
            (len - self.window_size) / self.hop() + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, hop) = (self.window_size, self.hop());
        if w < 4 || w % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "window_size must be even and at least 4, got {w}"
            )));
        }
        if hop == 0 || hop > w {
            return Err(Error::InvalidArgument(format!("hop must be in 1..={w}, got {hop}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Spectrogram {
    /// `[frames × bins × channels]`.
    pub data: Tensor,
    /// Centre of each frame, seconds.
    pub frame_times: Vec<f64>,
    pub bin_freqs: Vec<f64>,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }

    /// Writes the map as a tensor container for external plotting.
    pub fn export(&self, dir: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "frame_times": self.frame_times,
            "bin_freqs": self.bin_freqs,
            "config": self.config,
        });
        save_tensors(dir, meta, &[("spectrogram".to_string(), &self.data)])
    }
}

/// Reusable FFT plan for one window size.
pub struct Stft {
    config: StftConfig,
    taper: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(config.window_size);
        Ok(Stft {
            taper: config.window_fn.coefficients(config.window_size),
            config,
            fft,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    /// `series` is `[len × channels]`, row-major.
    pub fn run(&self, series: &[f64], channels: usize, sample_rate: f64) -> Result<Spectrogram> {
        let cfg = &self.config;
        let (w, hop, bins) = (cfg.window_size, cfg.hop(), cfg.bins());
        if channels == 0 || series.len() % channels != 0 {
            return Err(Error::shape(
                "stft",
                format!("{} values for {channels} channels", series.len()),
            ));
        }
        let len = series.len() / channels;
        if len < w {
            return Err(Error::InvalidArgument(format!(
                "series of length {len} is shorter than the STFT window; need at least {w} samples"
            )));
        }
        let frames = cfg.frames(len);
        let mut data = vec![0.0; frames * bins * channels];
        let mut buf = vec![Complex::new(0.0, 0.0); w];
        for ch in 0..channels {
            for fr in 0..frames {
                let start = fr * hop;
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = Complex::new(series[(start + i) * channels + ch] * self.taper[i], 0.0);
                }
                self.fft.process(&mut buf);
                for (k, z) in buf.iter().take(bins).enumerate() {
                    let m = z.norm();
                    data[(fr * bins + k) * channels + ch] = if cfg.log_scale { m.ln_1p() } else { m };
                }
            }
            if cfg.standardize {
                standardize_channel(&mut data, channels, ch);
            }
        }
        Ok(Spectrogram {
            data: Tensor::new(vec![frames, bins, channels], data)?,
            frame_times: (0..frames)
                .map(|fr| (fr * hop) as f64 / sample_rate + w as f64 / (2.0 * sample_rate))
                .collect(),
            bin_freqs: (0..bins).map(|k| k as f64 * sample_rate / w as f64).collect(),
            config: cfg.clone(),
        })
    }
}

/// Each channel's map is standardized on its own.
fn standardize_channel(data: &mut [f64], channels: usize, ch: usize) {
    let n = (data.len() / channels) as f64;
    let mean = data.iter().skip(ch).step_by(channels).sum::<f64>() / n;
    let var = data
        .iter()
        .skip(ch)
        .step_by(channels)
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let denom = var.sqrt() + STANDARDIZE_EPS;
    for v in data.iter_mut().skip(ch).step_by(channels) {
        *v = (*v - mean) / denom;
    }
}

pub fn stft(series: &[f64], channels: usize, sample_rate: f64, cfg: &StftConfig) -> Result<Spectrogram> {
    Stft::new(cfg.clone())?.run(series, channels, sample_rate)
}

/// `[frames × bins × channels]` → `[frames × (bins·channels)]`, channel 0's
/// bins first.
pub fn stack_channels(spec: &Tensor) -> Result<Tensor> {
    let [frames, bins, channels] = spec.shape()[..] else {
        return Err(Error::shape("stack_channels", format!("{:?}", spec.shape())));
    };
    let f = bins * channels;
    Ok(Tensor::from_fn(&[frames, f], |i| {
        let (fr, j) = (i / f, i % f);
        let (ch, k) = (j / bins, j % bins);
        spec.data()[(fr * bins + k) * channels + ch]
    }))
}

pub fn unstack_channels(map: &Tensor, channels: usize) -> Result<Tensor> {
    let [frames, f] = map.shape()[..] else {
        return Err(Error::shape("unstack_channels", format!("{:?}", map.shape())));
    };
    if channels == 0 || f % channels != 0 {
        return Err(Error::shape(
            "unstack_channels",
            format!("{f} columns for {channels} channels"),
        ));
    }
    let bins = f / channels;
    Ok(Tensor::from_fn(&[frames, bins, channels], |i| {
        let (fr, rest) = (i / (bins * channels), i % (bins * channels));
        let (k, ch) = (rest / channels, rest % channels);
        map.data()[fr * f + ch * bins + k]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Direct O(n²) DFT magnitudes of one tapered frame.
    fn dft_magnitudes(frame: &[f64], bins: usize) -> Vec<f64> {
        let n = frame.len();
        (0..bins)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, x) in frame.iter().enumerate() {
                    let a = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    fn oracle(series: &[f64], channels: usize, cfg: &StftConfig) -> Vec<f64> {
        let len = series.len() / channels;
        let (w, hop, bins) = (cfg.window_size, cfg.hop(), cfg.bins());
        let taper = cfg.window_fn.coefficients(w);
        let frames = (len - w) / hop + 1;
        let mut out = vec![0.0; frames * bins * channels];
        for ch in 0..channels {
            for fr in 0..frames {
                let frame: Vec<f64> = (0..w)
                    .map(|i| series[(fr * hop + i) * channels + ch] * taper[i])
                    .collect();
                for (k, m) in dft_magnitudes(&frame, bins).into_iter().enumerate() {
                    out[(fr * bins + k) * channels + ch] = m;
                }
            }
        }
        out
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_input_gives_zero_magnitudes() {
        let s = stft(&[0.0; 128], 1, 64.0, &StftConfig::raw(32, 16, WindowFn::Hann)).unwrap();
        assert!(s.data.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_arithmetic() {
        let s = stft(&noise(128, 1), 1, 64.0, &StftConfig::default()).unwrap();
        assert_eq!(s.data.shape(), &[7, 17, 1]);
        assert_eq!(s.bin_freqs[1], 2.0);
        assert_eq!(s.frame_times.len(), 7);
    }

    #[test]
    fn too_short_names_minimum() {
        let err = stft(&noise(20, 1), 1, 64.0, &StftConfig::default()).unwrap_err();
        assert!(err.to_string().contains("at least 32"), "{err}");
    }

    #[test]
    fn invalid_config_rejected() {
        for (w, hop) in [(31, 8), (2, 1), (32, 0), (32, 33)] {
            assert!(StftConfig::raw(w, hop, WindowFn::Hann).validate().is_err());
        }
    }

    #[test]
    fn pure_tone_concentrates_in_its_bin() {
        let series: Vec<f64> = (0..128).map(|i| (2.0 * PI * 4.0 * i as f64 / 32.0).cos()).collect();
        let cfg = StftConfig::raw(32, 16, WindowFn::Rectangular);
        let s = stft(&series, 1, 64.0, &cfg).unwrap();
        for fr in 0..s.frames() {
            let energy: Vec<f64> = (0..17).map(|k| s.data.at(&[fr, k, 0]).powi(2)).collect();
            assert!(energy[4] / energy.iter().sum::<f64>() >= 0.95);
        }
        // the same holds against the oracle directly
        let o = oracle(&series, 1, &cfg);
        let frame: Vec<f64> = o[..17].iter().map(|m| m * m).collect();
        assert!(frame[4] / frame.iter().sum::<f64>() >= 0.95);
    }

    #[test]
    fn matches_direct_dft() {
        for (len, w, hop, ch, taper) in [
            (256, 32, 16, 1, WindowFn::Hann),
            (200, 16, 5, 2, WindowFn::Rectangular),
            (64, 64, 64, 3, WindowFn::Hann),
            (100, 8, 8, 1, WindowFn::Hann),
        ] {
            let series = noise(len * ch, len as u64);
            let cfg = StftConfig::raw(w, hop, taper);
            let s = stft(&series, ch, 100.0, &cfg).unwrap();
            let o = oracle(&series, ch, &cfg);
            for (a, b) in s.data.data().iter().zip(&o) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-12), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn log_and_standardize() {
        let series = noise(256, 3);
        let raw = stft(&series, 1, 64.0, &StftConfig::raw(32, 16, WindowFn::Hann)).unwrap();
        let cfg = StftConfig {
            hop: Some(16),
            standardize: false,
            ..StftConfig::default()
        };
        let logged = stft(&series, 1, 64.0, &cfg).unwrap();
        for (a, b) in raw.data.data().iter().zip(logged.data.data()) {
            assert!((a.ln_1p() - b).abs() < 1e-15);
        }
        let std = stft(&series, 1, 64.0, &StftConfig::default()).unwrap();
        let d = std.data.data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn stack_two_channels() {
        let series = noise(2 * 128, 4);
        let s = stft(&series, 2, 64.0, &StftConfig::default()).unwrap();
        let m = stack_channels(&s.data).unwrap();
        assert_eq!(m.shape(), &[7, 34]);
        for fr in 0..7 {
            for k in 0..17 {
                assert_eq!(m.at(&[fr, k]), s.data.at(&[fr, k, 0]));
                assert_eq!(m.at(&[fr, 17 + k]), s.data.at(&[fr, k, 1]));
            }
        }
        assert_eq!(unstack_channels(&m, 2).unwrap(), s.data);

        let one = stft(&noise(128, 5), 1, 64.0, &StftConfig::default()).unwrap();
        assert_eq!(stack_channels(&one.data).unwrap().data(), one.data.data());
    }

    #[test]
    fn export_writes_container() {
        let dir = tempfile::tempdir().unwrap();
        let s = stft(&noise(128, 6), 1, 64.0, &StftConfig::default()).unwrap();
        s.export(dir.path()).unwrap();
        let (m, t) = crate::numeric::checkpoint::load_tensors(dir.path()).unwrap();
        assert_eq!(t[0].1.shape(), &[7, 17, 1]);
        assert_eq!(m.meta["bin_freqs"][1].as_f64(), Some(2.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn frame_and_bin_counts(len in 4usize..300, half_w in 2usize..40, hop_frac in 0.05f64..1.0, seed in 0u64..100) {
            let w = 2 * half_w;
            prop_assume!(len >= w);
            let hop = ((w as f64 * hop_frac) as usize).max(1);
            let s = stft(&noise(len, seed), 1, 10.0, &StftConfig::raw(w, hop, WindowFn::Hann)).unwrap();
            prop_assert_eq!(s.frames(), (len - w) / hop + 1);
            prop_assert_eq!(s.bins(), w / 2 + 1);
        }

        #[test]
        fn magnitude_is_positively_homogeneous(a in 0.01f64..100.0, seed in 0u64..1000) {
            let x = noise(96, seed);
            let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
            let cfg = StftConfig::raw(16, 8, WindowFn::Hann);
            let s = stft(&x, 1, 1.0, &cfg).unwrap();
            let sa = stft(&ax, 1, 1.0, &cfg).unwrap();
            for (m, ma) in s.data.data().iter().zip(sa.data.data()) {
                prop_assert!((a * m - ma).abs() <= 1e-9 * ma.abs().max(1e-12));
            }
        }
    }
}
