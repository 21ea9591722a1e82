//! Spectrogram-view and time-domain augmentations.
//!
//! Spectrogram maps are `[t × f]` tensors; time series are `[len × channels]`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugOp {
    Jitter,
    Blur,
    Flip,
}

/// Which pipeline builds a view.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    First,
    Second,
}

/// How the two views of a sample are produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugStrategy {
    /// First and second spectrogram pipelines.
    #[default]
    DifferentSpectrogram,
    /// Both views from jitter, blur and flip with independent draws.
    SameSpectrogram,
    /// Jitter-and-scale versus permutation on the raw series.
    DifferentTime,
    SameTimeJitter,
    SameTimePermutation,
    /// Time-domain augmentation followed by the spectrogram pipelines.
    TimeAndSpectrogram,
}

impl AugStrategy {
    pub fn uses_time_domain(self) -> bool {
        !matches!(self, AugStrategy::DifferentSpectrogram | AugStrategy::SameSpectrogram)
    }

    pub fn uses_spectrogram_ops(self) -> bool {
        matches!(
            self,
            AugStrategy::DifferentSpectrogram | AugStrategy::SameSpectrogram | AugStrategy::TimeAndSpectrogram
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeOp {
    JitterScale,
    Permute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub brightness: f64,
    pub contrast: f64,
    pub blur_sigma: (f64, f64),
    pub flip_p: f64,
    pub first: Vec<AugOp>,
    pub second: Vec<AugOp>,
    pub strategy: AugStrategy,
    pub noise_std: f64,
    pub scale_range: (f64, f64),
    pub max_segments: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            brightness: 0.4,
            contrast: 0.4,
            blur_sigma: (0.5, 1.5),
            flip_p: 0.5,
            first: vec![AugOp::Jitter, AugOp::Flip],
            second: vec![AugOp::Blur, AugOp::Flip],
            strategy: AugStrategy::DifferentSpectrogram,
            noise_std: 0.1,
            scale_range: (0.8, 1.2),
            max_segments: 5,
        }
    }
}

impl AugmentConfig {
    /// Every op disabled: both views equal the input.
    pub fn identity() -> Self {
        AugmentConfig {
            first: Vec::new(),
            second: Vec::new(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.brightness < 0.0 || self.contrast < 0.0 || self.noise_std < 0.0 {
            return bad("augmentation strengths must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.flip_p) {
            return bad(format!("flip_p {} outside [0, 1]", self.flip_p));
        }
        let (lo, hi) = self.blur_sigma;
        if !(lo > 0.0 && lo <= hi && hi <= 5.0) {
            return bad(format!("blur_sigma range ({lo}, {hi}) must lie in (0, 5]"));
        }
        if self.scale_range.0 > self.scale_range.1 {
            return bad("scale_range is reversed".into());
        }
        if self.max_segments == 0 {
            return bad("max_segments must be at least 1".into());
        }
        Ok(())
    }

    pub fn pipeline(&self, view: View) -> &[AugOp] {
        match view {
            View::First => &self.first,
            View::Second => &self.second,
        }
    }

    /// Time-domain op for a view under the configured strategy, if any.
    pub fn time_op(&self, view: View) -> Option<TimeOp> {
        match (self.strategy, view) {
            (AugStrategy::DifferentSpectrogram | AugStrategy::SameSpectrogram, _) => None,
            (AugStrategy::SameTimeJitter, _) => Some(TimeOp::JitterScale),
            (AugStrategy::SameTimePermutation, _) => Some(TimeOp::Permute),
            (_, View::First) => Some(TimeOp::JitterScale),
            (_, View::Second) => Some(TimeOp::Permute),
        }
    }

    /// Spectrogram ops for a view under the configured strategy.
    pub fn spectrogram_ops(&self, view: View) -> Vec<AugOp> {
        match self.strategy {
            AugStrategy::DifferentSpectrogram | AugStrategy::TimeAndSpectrogram => self.pipeline(view).to_vec(),
            AugStrategy::SameSpectrogram => {
                let mut ops: Vec<AugOp> = Vec::new();
                for op in self.first.iter().chain(&self.second) {
                    if !ops.contains(op) {
                        ops.push(*op);
                    }
                }
                // flip last, after the intensity ops
                ops.sort_by_key(|op| *op == AugOp::Flip);
                ops
            }
            _ => Vec::new(),
        }
    }
}

fn map_dims(map: &Tensor) -> (usize, usize) {
    match map.shape() {
        [t, f] => (*t, *f),
        s => panic!("expected a [t × f] map, got {s:?}"),
    }
}

/// `β·(γ·(x − mean) + mean)` with explicit factors.
pub fn jitter_with(map: &Tensor, brightness_factor: f64, contrast_factor: f64) -> Tensor {
    if brightness_factor == 1.0 && contrast_factor == 1.0 {
        return map.clone();
    }
    let mean = map.mean();
    map.map(|x| brightness_factor * (contrast_factor * (x - mean) + mean))
}

pub fn jitter_intensity(map: &Tensor, brightness: f64, contrast: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let beta = draw_factor(brightness, rng);
    let gamma = draw_factor(contrast, rng);
    jitter_with(map, beta, gamma)
}

fn draw_factor(strength: f64, rng: &mut ChaCha8Rng) -> f64 {
    if strength == 0.0 {
        1.0
    } else {
        rng.gen_range(1.0 - strength..=1.0 + strength)
    }
}

/// Normalized 1-D Gaussian taps, radius `⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / s).collect()
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn convolve_axis(src: &[f64], t: usize, f: usize, kernel: &[f64], along_time: bool) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; src.len()];
    for i in 0..t {
        for j in 0..f {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let off = k as i64 - r;
                let (ii, jj) = if along_time {
                    (reflect(i as i64 + off, t), j)
                } else {
                    (i, reflect(j as i64 + off, f))
                };
                acc += w * src[ii * f + jj];
            }
            out[i * f + j] = acc;
        }
    }
    out
}

/// Separable 2-D Gaussian blur with reflect padding.
pub fn gaussian_blur_with_sigma(map: &Tensor, sigma: f64) -> Tensor {
    let (t, f) = map_dims(map);
    let kernel = gaussian_kernel(sigma);
    let rows = convolve_axis(map.data(), t, f, &kernel, false);
    let both = convolve_axis(&rows, t, f, &kernel, true);
    Tensor::new(vec![t, f], both).expect("shape preserved")
}

pub fn gaussian_blur(map: &Tensor, sigma_range: (f64, f64), rng: &mut ChaCha8Rng) -> Tensor {
    let sigma = if sigma_range.0 == sigma_range.1 {
        sigma_range.0
    } else {
        rng.gen_range(sigma_range.0..=sigma_range.1)
    };
    gaussian_blur_with_sigma(map, sigma)
}

pub fn reverse_time(map: &Tensor) -> Tensor {
    let (t, f) = map_dims(map);
    Tensor::from_fn(&[t, f], |i| map.data()[(t - 1 - i / f) * f + i % f])
}

/// Reverses the time axis with probability `p`.
pub fn horizontal_flip(map: &Tensor, p: f64, rng: &mut ChaCha8Rng) -> Tensor {
    if rng.gen::<f64>() < p {
        reverse_time(map)
    } else {
        map.clone()
    }
}

pub fn apply_ops(map: &Tensor, ops: &[AugOp], cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Tensor {
    let mut out = map.clone();
    for op in ops {
        out = match op {
            AugOp::Jitter => jitter_intensity(&out, cfg.brightness, cfg.contrast, rng),
            AugOp::Blur => gaussian_blur(&out, cfg.blur_sigma, rng),
            AugOp::Flip => horizontal_flip(&out, cfg.flip_p, rng),
        };
    }
    out
}

pub fn augment_view(map: &Tensor, view: View, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Tensor {
    apply_ops(map, cfg.pipeline(view), cfg, rng)
}

/// `(x + noise)·s` with one global scale factor `s` drawn from `scale_range`.
pub fn time_jitter_scale(series: &Tensor, noise_std: f64, scale_range: (f64, f64), rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, noise_std.max(0.0)).expect("finite std");
    let noisy = if noise_std > 0.0 {
        Tensor::from_fn(series.shape(), |i| series.data()[i] + normal.sample(rng))
    } else {
        series.clone()
    };
    let s = if scale_range.0 == scale_range.1 {
        scale_range.0
    } else {
        rng.gen_range(scale_range.0..=scale_range.1)
    };
    noisy.map(|x| x * s)
}

/// Cuts the time axis into a random number (up to `max_segments`) of
/// contiguous pieces and shuffles them. All channels move together.
pub fn time_permute(series: &Tensor, max_segments: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let (len, ch) = map_dims(series);
    let segs = rng.gen_range(1..=max_segments.max(1)).min(len);
    if segs <= 1 {
        return series.clone();
    }
    let mut cuts: Vec<usize> = (1..len).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(segs - 1).collect();
    cuts.sort_unstable();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(len);
    let mut pieces: Vec<(usize, usize)> = bounds.windows(2).map(|w| (w[0], w[1])).collect();
    pieces.shuffle(rng);
    let mut out = Vec::with_capacity(series.numel());
    for (a, b) in pieces {
        out.extend_from_slice(&series.data()[a * ch..b * ch]);
    }
    Tensor::new(vec![len, ch], out).expect("shape preserved")
}

pub fn apply_time_op(series: &Tensor, op: TimeOp, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Tensor {
    match op {
        TimeOp::JitterScale => time_jitter_scale(series, cfg.noise_std, cfg.scale_range, rng),
        TimeOp::Permute => time_permute(series, cfg.max_segments, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_map(t: usize, f: usize, seed: u64) -> Tensor {
        let mut r = rng(seed);
        Tensor::from_fn(&[t, f], |_| r.gen_range(-2.0..2.0))
    }

    /// Direct 2-D convolution with explicit reflected indices.
    fn direct_blur(map: &Tensor, sigma: f64) -> Tensor {
        let (t, f) = map_dims(map);
        let k = gaussian_kernel(sigma);
        let r = (k.len() / 2) as i64;
        Tensor::from_fn(&[t, f], |idx| {
            let (i, j) = ((idx / f) as i64, (idx % f) as i64);
            let mut acc = 0.0;
            for a in -r..=r {
                for b in -r..=r {
                    let w = k[(a + r) as usize] * k[(b + r) as usize];
                    acc += w * map.at(&[reflect(i + a, t), reflect(j + b, f)]);
                }
            }
            acc
        })
    }

    #[test]
    fn jitter_cases() {
        let m = random_map(5, 4, 1);
        assert_eq!(jitter_intensity(&m, 0.0, 0.0, &mut rng(2)), m);
        let zm = Tensor::new(vec![1, 4], vec![-1.5, 0.5, 2.0, -1.0]).unwrap();
        assert_eq!(jitter_intensity(&zm, 0.0, 0.0, &mut rng(2)), zm);
        assert_eq!(jitter_with(&zm, 2.0, 1.0), zm.map(|x| 2.0 * x));
    }

    #[test]
    fn brightness_factor_is_centred() {
        let mut r = rng(3);
        let n = 10_000;
        let mean = (0..n).map(|_| draw_factor(0.4, &mut r)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn blur_constant_map_is_fixed_point() {
        let m = Tensor::full(&[9, 7], 3.25);
        let b = gaussian_blur_with_sigma(&m, 1.3);
        assert!(b.data().iter().all(|v| (v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn blur_kernel_sums_to_one() {
        for s in [0.1, 0.5, 1.0, 1.5, 5.0] {
            let k = gaussian_kernel(s);
            assert_eq!(k.len(), 2 * (3.0 * s).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_sigma_is_near_identity() {
        let m = Tensor::from_fn(&[12, 10], |i| {
            ((i / 10) as f64 * 0.3).sin() + ((i % 10) as f64 * 0.2).cos()
        });
        let b = gaussian_blur_with_sigma(&m, 0.1);
        assert!(b.max_abs_diff(&m) < 1e-3);
        assert!(b.max_abs_diff(&direct_blur(&m, 0.1)) < 1e-12);
    }

    #[test]
    fn impulse_reproduces_kernel() {
        let sigma = 1.0;
        let k = gaussian_kernel(sigma);
        let r = k.len() / 2;
        let mut m = Tensor::zeros(&[15, 15]);
        m.set(&[7, 7], 1.0);
        let b = gaussian_blur_with_sigma(&m, sigma);
        for i in 0..15 {
            for j in 0..15 {
                let want = if (i as i64 - 7).unsigned_abs() as usize <= r && (j as i64 - 7).unsigned_abs() as usize <= r
                {
                    k[i + r - 7] * k[j + r - 7]
                } else {
                    0.0
                };
                assert!((b.at(&[i, j]) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn blur_matches_direct_oracle_at_edges() {
        let m = random_map(6, 17, 9);
        for s in [0.5, 1.5, 2.5] {
            assert!(gaussian_blur_with_sigma(&m, s).max_abs_diff(&direct_blur(&m, s)) < 1e-12);
        }
    }

    #[test]
    fn flip_cases() {
        let m = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(horizontal_flip(&m, 0.0, &mut rng(1)), m);
        let f = horizontal_flip(&m, 1.0, &mut rng(1));
        assert_eq!(f.data(), &[5.0, 6.0, 3.0, 4.0, 1.0, 2.0]);
        assert_eq!(horizontal_flip(&f, 1.0, &mut rng(2)), m);
    }

    #[test]
    fn views_identity_when_disabled() {
        let m = random_map(8, 5, 4);
        let cfg = AugmentConfig {
            brightness: 0.0,
            contrast: 0.0,
            flip_p: 0.0,
            ..Default::default()
        };
        assert_eq!(augment_view(&m, View::First, &cfg, &mut rng(1)), m);
        let id = AugmentConfig::identity();
        assert_eq!(augment_view(&m, View::Second, &id, &mut rng(1)), m);
    }

    #[test]
    fn strategy_plumbing() {
        let mut cfg = AugmentConfig::default();
        assert_eq!(cfg.time_op(View::First), None);
        assert_eq!(cfg.spectrogram_ops(View::Second), vec![AugOp::Blur, AugOp::Flip]);
        cfg.strategy = AugStrategy::SameSpectrogram;
        assert_eq!(
            cfg.spectrogram_ops(View::First),
            vec![AugOp::Jitter, AugOp::Blur, AugOp::Flip]
        );
        cfg.strategy = AugStrategy::DifferentTime;
        assert_eq!(cfg.time_op(View::First), Some(TimeOp::JitterScale));
        assert_eq!(cfg.time_op(View::Second), Some(TimeOp::Permute));
        assert!(cfg.spectrogram_ops(View::First).is_empty());
        cfg.strategy = AugStrategy::SameTimePermutation;
        assert_eq!(cfg.time_op(View::First), Some(TimeOp::Permute));
    }

    #[test]
    fn time_jitter_scale_cases() {
        let s = random_map(50, 2, 5);
        assert_eq!(time_jitter_scale(&s, 0.0, (1.0, 1.0), &mut rng(1)), s);
        assert_eq!(time_jitter_scale(&s, 0.0, (2.0, 2.0), &mut rng(1)), s.map(|x| 2.0 * x));
        let z = Tensor::zeros(&[100_000, 1]);
        let out = time_jitter_scale(&z, 0.3, (1.0, 1.0), &mut rng(7));
        let m = out.mean();
        let sd = (out.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / out.numel() as f64).sqrt();
        assert!((sd - 0.3).abs() < 0.05 * 0.3, "{sd}");
    }

    #[test]
    fn permute_cases() {
        let s = random_map(40, 3, 6);
        assert_eq!(time_permute(&s, 1, &mut rng(1)), s);
        assert_eq!(time_permute(&s, 6, &mut rng(9)), time_permute(&s, 6, &mut rng(9)));
        // rows stay intact
        let p = time_permute(&s, 8, &mut rng(4));
        let mut a: Vec<&[f64]> = s.data().chunks(3).collect();
        let mut b: Vec<&[f64]> = p.data().chunks(3).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn augmentations_preserve_shape_and_are_seeded(t in 2usize..20, f in 1usize..20, seed in 0u64..1000) {
            let m = random_map(t, f, seed);
            let cfg = AugmentConfig::default();
            for view in [View::First, View::Second] {
                let a = augment_view(&m, view, &cfg, &mut rng(seed));
                prop_assert_eq!(a.shape(), m.shape());
                prop_assert_eq!(a, augment_view(&m, view, &cfg, &mut rng(seed)));
            }
            let j = time_jitter_scale(&m, 0.2, (0.8, 1.2), &mut rng(seed));
            prop_assert_eq!(j.shape(), m.shape());
            let p = time_permute(&m, 5, &mut rng(seed));
            prop_assert_eq!(p.shape(), m.shape());
            let mut a = m.data().to_vec();
            let mut b = p.data().to_vec();
            a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            b.sort_by(|x, y| x.partial_cmp(y).unwrap());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn flip_is_an_involution(t in 1usize..20, f in 1usize..10, seed in 0u64..1000) {
            let m = random_map(t, f, seed);
            prop_assert_eq!(reverse_time(&reverse_time(&m)), m);
        }

        #[test]
        fn blur_preserves_global_mean(seed in 0u64..1000, sigma in 0.5f64..1.5) {
            let m = random_map(20, 24, seed);
            let b = gaussian_blur_with_sigma(&m, sigma);
            prop_assert!((b.mean() - m.mean()).abs() < 1e-9);
        }
    }
}
