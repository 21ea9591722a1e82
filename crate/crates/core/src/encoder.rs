//! Time-frequency recurrent encoder with pyramid multi-scale pooling.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{
    conv1x1, uniform_init, BatchNorm, CellKind, Linear, ParamId, ParamStore, Recurrent, Session, Var,
};

/// What the encoder consumes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// Stacked spectrogram maps `[b × t × f]`.
    #[default]
    Spectrogram,
    /// Raw series `[b × len × channels]` through a strided convolutional stem.
    TimeDomain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub num_blocks: usize,
    /// Hidden width of the recurrent pass along time.
    pub time_hidden: usize,
    /// Hidden width of the recurrent pass along frequency.
    pub freq_hidden: usize,
    pub proj_width: usize,
    /// Number of pyramid scales.
    pub scales: usize,
    pub cell: CellKind,
    pub dropout: f64,
    pub input: InputKind,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            num_blocks: 3,
            time_hidden: 64,
            freq_hidden: 64,
            proj_width: 128,
            scales: 5,
            cell: CellKind::Lstm,
            dropout: 0.2,
            input: InputKind::Spectrogram,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_hidden == 0 || self.freq_hidden == 0 || self.proj_width == 0 {
            return Err(Error::InvalidArgument("hidden widths must be positive".into()));
        }
        if self.scales == 0 {
            return Err(Error::InvalidArgument("scales must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Smallest time length whose pyramid has no empty level.
    pub fn min_frames(&self) -> usize {
        1 << (self.scales - 1)
    }

    pub fn embedding_width(&self, concat: bool) -> usize {
        if concat {
            self.scales * self.proj_width
        } else {
            self.proj_width
        }
    }
}

/// Geometry of the strided stem used for raw-series input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub kernel: usize,
    pub stride: usize,
    pub width: usize,
    pub channels: usize,
}

impl StemSpec {
    pub fn frames(&self, len: usize) -> usize {
        if len < self.kernel {
            0
        } else {
            (len - self.kernel) / self.stride + 1
        }
    }
}

/// One time-then-frequency block; preserves its `[b × t × f]` input shape.
#[derive(Clone, Debug)]
pub struct TfrBlock {
    pub t: usize,
    pub f: usize,
    trnn: Recurrent,
    ff_time: Linear,
    bn_time: BatchNorm,
    frnn: Recurrent,
    ff_freq: Linear,
    bn_freq: BatchNorm,
}

impl TfrBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        t: usize,
        f: usize,
        time_hidden: usize,
        freq_hidden: usize,
        cell: CellKind,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        TfrBlock {
            t,
            f,
            trnn: Recurrent::new(store, &format!("{name}.trnn"), cell, f, time_hidden, rng),
            ff_time: Linear::new(store, &format!("{name}.ff_time"), time_hidden, f, rng),
            bn_time: BatchNorm::new(store, &format!("{name}.bn_time"), f),
            frnn: Recurrent::new(store, &format!("{name}.frnn"), cell, t, freq_hidden, rng),
            ff_freq: Linear::new(store, &format!("{name}.ff_freq"), freq_hidden, t, rng),
            bn_freq: BatchNorm::new(store, &format!("{name}.bn_freq"), f),
        }
    }

    /// Feed-forward weight and bias ids (time pass, then frequency pass).
    pub fn feed_forward_params(&self) -> [ParamId; 4] {
        [self.ff_time.w, self.ff_time.b, self.ff_freq.w, self.ff_freq.b]
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var, dropout: f64) -> Result<Var> {
        let shape = s.graph.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.t || shape[2] != self.f {
            return Err(Error::shape(
                "tfr_block",
                format!("input {shape:?}, block expects [b, {}, {}]", self.t, self.f),
            ));
        }
        let y = self.trnn.forward(s, x)?;
        let y = s.dropout(y, dropout)?;
        let y1 = self.ff_time.forward(s, y)?;
        let y1 = self.bn_time.forward(s, y1)?;
        let yt = s.graph.add(y1, x)?;
        let y2 = s.graph.swap_last2(yt)?;
        let y3 = self.frnn.forward(s, y2)?;
        let y3 = s.dropout(y3, dropout)?;
        let y4 = self.ff_freq.forward(s, y3)?;
        let y4 = s.graph.swap_last2(y4)?;
        let y4 = self.bn_freq.forward(s, y4)?;
        s.graph.add(y4, yt)
    }
}

/// Feature maps of one forward pass.
#[derive(Clone, Debug)]
pub struct MultiScaleFeatures {
    /// Projected map `[b × t × f_h]`.
    pub h: Var,
    /// Pyramid levels, finest first.
    pub d: Vec<Var>,
    /// Time-pooled vectors `[b × f_h]`, finest first.
    pub r: Vec<Var>,
}

#[derive(Clone, Debug)]
struct Stem {
    spec: StemSpec,
    linear: Linear,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    /// Frames and frequency width seen by the block stack.
    pub t: usize,
    pub f: usize,
    stem: Option<Stem>,
    blocks: Vec<TfrBlock>,
    proj_w: ParamId,
    proj_b: ParamId,
}

impl Encoder {
    /// Encoder over spectrogram maps of `t` frames by `f` stacked bins.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        config: &EncoderConfig,
        t: usize,
        f: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Self::build(store, name, config, t, f, None, rng)
    }

    /// Encoder over raw series of length `len` through a strided stem.
    pub fn new_time_domain(
        store: &mut ParamStore,
        name: &str,
        config: &EncoderConfig,
        len: usize,
        stem: StemSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if stem.kernel == 0 || stem.stride == 0 || stem.width == 0 || stem.channels == 0 {
            return Err(Error::InvalidArgument("stem sizes must be positive".into()));
        }
        let t = stem.frames(len);
        Self::build(store, name, config, t, stem.width, Some(stem), rng)
    }

    fn build(
        store: &mut ParamStore,
        name: &str,
        config: &EncoderConfig,
        t: usize,
        f: usize,
        stem: Option<StemSpec>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if t < config.min_frames() {
            return Err(Error::InvalidArgument(format!(
                "{} scales need at least {} time frames, input has {t}",
                config.scales,
                config.min_frames()
            )));
        }
        let stem = stem.map(|spec| Stem {
            linear: Linear::new(
                store,
                &format!("{name}.stem"),
                spec.kernel * spec.channels,
                spec.width,
                rng,
            ),
            spec,
        });
        let blocks = (0..config.num_blocks)
            .map(|i| {
                TfrBlock::new(
                    store,
                    &format!("{name}.block{i}"),
                    t,
                    f,
                    config.time_hidden,
                    config.freq_hidden,
                    config.cell,
                    rng,
                )
            })
            .collect();
        let proj_w = store.add(format!("{name}.proj.w"), uniform_init(&[f, config.proj_width], f, rng));
        let proj_b = store.add(format!("{name}.proj.b"), uniform_init(&[config.proj_width], f, rng));
        Ok(Encoder {
            config: config.clone(),
            t,
            f,
            stem,
            blocks,
            proj_w,
            proj_b,
        })
    }

    pub fn blocks(&self) -> &[TfrBlock] {
        &self.blocks
    }

    pub fn stem_spec(&self) -> Option<StemSpec> {
        self.stem.as_ref().map(|s| s.spec)
    }

    /// Maps raw series `[b × len × c]` to the `[b × t × width]` stem output.
    pub fn stem_forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let stem = self
            .stem
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("encoder has no time-domain stem".into()))?;
        let framed = s.graph.frame_time(x, stem.spec.kernel, stem.spec.stride)?;
        let y = stem.linear.forward(s, framed)?;
        Ok(s.graph.tanh(y))
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<MultiScaleFeatures> {
        let mut y = if self.stem.is_some() {
            self.stem_forward(s, x)?
        } else {
            x
        };
        for block in &self.blocks {
            y = block.forward(s, y, self.config.dropout)?;
        }
        let (w, b) = (s.p(self.proj_w), s.p(self.proj_b));
        let h = conv1x1(&mut s.graph, y, w, b)?;
        pyramid(s, h, self.config.scales)
    }
}

/// `D₁ = H`, each further level max-pooled by two; `Rᵢ` averages `Dᵢ` over time.
pub fn pyramid(s: &mut Session<'_>, h: Var, scales: usize) -> Result<MultiScaleFeatures> {
    let t = s.graph.shape(h)[1];
    if scales == 0 || t < 1 << (scales - 1) {
        return Err(Error::InvalidArgument(format!(
            "{scales} scales need at least {} time frames, got {t}",
            1usize << scales.saturating_sub(1)
        )));
    }
    let mut d = vec![h];
    for _ in 1..scales {
        let prev = *d.last().unwrap();
        d.push(s.graph.max_pool_time(prev)?);
    }
    let r = d
        .iter()
        .map(|&di| s.graph.global_avg_pool_time(di))
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiScaleFeatures { h, d, r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_diff_check_store, Mode, Tensor};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng(seed);
        Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
    }

    fn small_config(scales: usize) -> EncoderConfig {
        EncoderConfig {
            num_blocks: 1,
            time_hidden: 3,
            freq_hidden: 3,
            proj_width: 4,
            scales,
            dropout: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn block_preserves_shape() {
        let mut store = ParamStore::new();
        let block = TfrBlock::new(&mut store, "b", 7, 5, 4, 6, CellKind::Lstm, &mut rng(1));
        let mut s = Session::new(&mut store, Mode::Train);
        let x = s.graph.constant(random(&[3, 7, 5], 2));
        let y = block.forward(&mut s, x, 0.0).unwrap();
        assert_eq!(s.graph.shape(y), &[3, 7, 5]);
        let bad = s.graph.constant(random(&[3, 5, 7], 2));
        assert!(block.forward(&mut s, bad, 0.0).is_err());
    }

    #[test]
    fn zeroed_feed_forward_block_is_identity_in_eval() {
        let mut store = ParamStore::new();
        let block = TfrBlock::new(&mut store, "b", 6, 4, 5, 5, CellKind::Lstm, &mut rng(3));
        for id in block.feed_forward_params() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let x_val = random(&[2, 6, 4], 4);
        let mut s = Session::new(&mut store, Mode::Eval);
        let x = s.graph.constant(x_val.clone());
        let y = block.forward(&mut s, x, 0.0).unwrap();
        assert_eq!(s.graph.value(y), &x_val);
    }

    #[test]
    fn block_gradient_check_on_4x6() {
        for seed in 0..3 {
            let mut store = ParamStore::new();
            let block = TfrBlock::new(&mut store, "b", 4, 6, 3, 3, CellKind::Lstm, &mut rng(seed));
            let x = random(&[2, 4, 6], seed + 10);
            let report = finite_diff_check_store(&store, &[x], 1e-4, |s, v| {
                let y = block.forward(s, v[0], 0.0)?;
                // a plain sum is annihilated by the trailing batch norm
                let w = s.graph.constant(random(&[2, 4, 6], 99));
                let y = s.graph.mul(y, w)?;
                Ok(s.graph.sum(y))
            })
            .unwrap();
            assert!(report.passed(), "{report:?}");
        }
    }

    #[test]
    fn pyramid_lengths_for_five_scales() {
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, "enc", &small_config(5), 64, 3, &mut rng(1)).unwrap();
        let mut s = Session::new(&mut store, Mode::Eval);
        let x = s.graph.constant(random(&[2, 64, 3], 1));
        let out = enc.forward(&mut s, x).unwrap();
        let lens: Vec<usize> = out.d.iter().map(|&d| s.graph.shape(d)[1]).collect();
        assert_eq!(lens, vec![64, 32, 16, 8, 4]);
        assert!(out.r.iter().all(|&r| s.graph.shape(r) == [2, 4]));
    }

    #[test]
    fn single_scale_is_gap_of_projection() {
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, "enc", &small_config(1), 5, 3, &mut rng(1)).unwrap();
        let mut s = Session::new(&mut store, Mode::Eval);
        let x = s.graph.constant(random(&[2, 5, 3], 1));
        let out = enc.forward(&mut s, x).unwrap();
        assert_eq!(out.r.len(), 1);
        let h = s.graph.value(out.h).clone();
        let r = s.graph.value(out.r[0]);
        for b in 0..2 {
            for j in 0..4 {
                let mean = (0..5).map(|t| h.at(&[b, t, j])).sum::<f64>() / 5.0;
                assert!((r.at(&[b, j]) - mean).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_map_gives_identical_scales() {
        let mut store = ParamStore::new();
        let mut s = Session::new(&mut store, Mode::Eval);
        let h = s.graph.constant(Tensor::full(&[2, 16, 3], 0.75));
        let out = pyramid(&mut s, h, 5).unwrap();
        for &r in &out.r {
            assert!(s.graph.value(r).data().iter().all(|v| *v == 0.75));
        }
    }

    #[test]
    fn too_few_frames_names_minimum() {
        let mut store = ParamStore::new();
        let err = Encoder::new(&mut store, "enc", &small_config(5), 15, 3, &mut rng(1)).unwrap_err();
        assert!(err.to_string().contains("at least 16"), "{err}");
    }

    #[test]
    fn end_to_end_gradient_check() {
        let mut store = ParamStore::new();
        let cfg = EncoderConfig {
            num_blocks: 2,
            ..small_config(2)
        };
        let enc = Encoder::new(&mut store, "enc", &cfg, 8, 6, &mut rng(7)).unwrap();
        let x = random(&[2, 8, 6], 8);
        let report = finite_diff_check_store(&store, &[x], 1e-4, |s, v| {
            let out = enc.forward(s, v[0])?;
            let mut acc = s.graph.constant(Tensor::scalar(0.0));
            for (i, &r) in out.r.iter().enumerate() {
                let w = s.graph.constant(random(&[2, 4], 50 + i as u64));
                let y = s.graph.mul(r, w)?;
                let y = s.graph.sum(y);
                acc = s.graph.add(acc, y)?;
            }
            Ok(acc)
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn time_domain_stem_shapes_and_gradients() {
        let stem = StemSpec {
            kernel: 8,
            stride: 4,
            width: 5,
            channels: 2,
        };
        let mut store = ParamStore::new();
        let enc = Encoder::new_time_domain(&mut store, "enc", &small_config(2), 40, stem, &mut rng(2)).unwrap();
        assert_eq!(enc.t, (40 - 8) / 4 + 1);
        assert_eq!(enc.f, 5);
        let mut s = Session::new(&mut store, Mode::Train);
        let x = s.graph.constant(random(&[3, 40, 2], 3));
        let out = enc.forward(&mut s, x).unwrap();
        assert_eq!(out.r.len(), 2);
        assert!(out.r.iter().all(|&r| s.graph.shape(r) == [3, 4]));
        drop(s);

        let x = random(&[2, 40, 2], 4);
        let report = finite_diff_check_store(&store, &[x], 1e-4, |s, v| {
            let y = enc.stem_forward(s, v[0])?;
            let y = enc.blocks()[0].forward(s, y, 0.0)?;
            let w = s.graph.constant(random(&[2, 9, 5], 5));
            let y = s.graph.mul(y, w)?;
            Ok(s.graph.sum(y))
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn eval_forward_is_repeatable() {
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, "enc", &small_config(3), 9, 4, &mut rng(5)).unwrap();
        let x_val = random(&[2, 9, 4], 6);
        let run = |store: &mut ParamStore| {
            let mut s = Session::new(store, Mode::Eval);
            let x = s.graph.constant(x_val.clone());
            let out = enc.forward(&mut s, x).unwrap();
            out.r.iter().map(|&r| s.graph.value(r).clone()).collect::<Vec<_>>()
        };
        assert_eq!(run(&mut store), run(&mut store));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn block_shape_preserved(t in 1usize..8, f in 1usize..8, b in 1usize..4, seed in 0u64..100) {
            let mut store = ParamStore::new();
            let block = TfrBlock::new(&mut store, "b", t, f, 3, 2, CellKind::Gru, &mut rng(seed));
            let mut s = Session::new(&mut store, Mode::Train);
            let x = s.graph.constant(random(&[b, t, f], seed));
            let y = block.forward(&mut s, x, 0.0).unwrap();
            prop_assert_eq!(s.graph.shape(y), &[b, t, f]);
        }

        #[test]
        fn pyramid_halves(t in 16usize..80, scales in 1usize..5) {
            let mut store = ParamStore::new();
            let mut s = Session::new(&mut store, Mode::Eval);
            let h = s.graph.constant(random(&[1, t, 2], t as u64));
            let out = pyramid(&mut s, h, scales).unwrap();
            for w in out.d.windows(2) {
                prop_assert_eq!(s.graph.shape(w[1])[1], s.graph.shape(w[0])[1] / 2);
            }
        }
    }
}
