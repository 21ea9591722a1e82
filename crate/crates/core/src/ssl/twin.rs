//! Online and target networks, the moving-average target update, and
//! checkpointing of both.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig, InputKind, MultiScaleFeatures};
use crate::error::{Error, Result};
use crate::features::Featurizer;
use crate::numeric::checkpoint::{load_tensors, save_tensors};
use crate::numeric::{Mode, ParamStore, Session, Tensor, Var};
use crate::signal::StftConfig;
use crate::ssl::heads::{HeadConfig, MlpHead};

/// Everything needed to rebuild the networks and their input pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub stft: StftConfig,
    pub len: usize,
    pub channels: usize,
    pub sample_rate: f64,
}

impl ArchSpec {
    pub fn featurizer(&self) -> Result<Featurizer> {
        Featurizer::new(
            &self.stft,
            self.encoder.input,
            self.len,
            self.channels,
            self.sample_rate,
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: ArchSpec,
    pub tau: f64,
    pub steps: u64,
}

pub const ONLINE_PREFIX: &str = "online.";
pub const TARGET_PREFIX: &str = "target.";

#[derive(Clone, Debug)]
pub struct TwinNetworks {
    pub arch: ArchSpec,
    pub tau: f64,
    /// Encoder, projector, then predictor parameters.
    pub online: ParamStore,
    /// Encoder and projector only, name-aligned with the front of `online`.
    pub target: ParamStore,
    pub encoder: Encoder,
    pub projector: MlpHead,
    pub predictor: MlpHead,
    pub steps: u64,
    use_predictor: bool,
}

/// Builds an encoder (only) into `store` for the given architecture.
pub fn build_encoder(store: &mut ParamStore, arch: &ArchSpec, rng: &mut ChaCha8Rng) -> Result<Encoder> {
    let feat = arch.featurizer()?;
    match arch.encoder.input {
        InputKind::Spectrogram => {
            let (t, f) = feat.map_dims();
            Encoder::new(store, "enc", &arch.encoder, t, f, rng)
        }
        InputKind::TimeDomain => Encoder::new_time_domain(store, "enc", &arch.encoder, arch.len, feat.stem_spec(), rng),
    }
}

impl TwinNetworks {
    pub fn new(arch: ArchSpec, tau: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidArgument(format!("tau {tau} outside [0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut online = ParamStore::new();
        let encoder = build_encoder(&mut online, &arch, &mut rng)?;
        let fh = arch.encoder.proj_width;
        let h = &arch.head;
        let projector = MlpHead::new(&mut online, "projector", fh, h.hidden, h.proj_dim, &mut rng);
        let target = online.prefix(online.len(), online.num_buffers());
        let predictor = MlpHead::new(&mut online, "predictor", h.proj_dim, h.hidden, h.proj_dim, &mut rng);
        Ok(TwinNetworks {
            arch,
            tau,
            online,
            target,
            encoder,
            projector,
            predictor,
            steps: 0,
            use_predictor: true,
        })
    }

    /// Replaces the predictor with the identity map.
    pub fn bypass_predictor(&mut self) {
        self.use_predictor = false;
    }

    /// Copies the online encoder and projector into the target.
    pub fn sync_target(&mut self) {
        let (np, nb) = (self.target.len(), self.target.num_buffers());
        self.target = self.online.prefix(np, nb);
    }

    /// Encoder features, per-scale projections and per-scale predictions.
    pub fn online_forward(&self, s: &mut Session<'_>, x: Var) -> Result<(MultiScaleFeatures, Vec<Var>, Vec<Var>)> {
        let feats = self.encoder.forward(s, x)?;
        let proj = self.projector.forward_scales(s, &feats.r)?;
        let pred = if self.use_predictor {
            self.predictor.forward_scales(s, &proj)?
        } else {
            proj.clone()
        };
        Ok((feats, proj, pred))
    }

    /// Target projections in train mode with no gradient tracking.
    pub fn target_projections(&mut self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut s = Session::new(&mut self.target, Mode::Train).frozen();
        let xv = s.graph.constant(x.clone());
        let feats = self.encoder.forward(&mut s, xv)?;
        let proj = self.projector.forward_scales(&mut s, &feats.r)?;
        Ok(proj.iter().map(|&p| s.graph.value(p).clone()).collect())
    }

    /// `δ ← τ·δ + (1 − τ)·β` over the shared encoder and projector parameters.
    pub fn ema_update(&mut self) -> Result<()> {
        ema_update(&mut self.target, &self.online, self.tau)
    }

    /// Per-scale representations of `x` (`[b × …]`) in eval mode.
    pub fn embed_scales(&mut self, x: &Tensor) -> Result<Vec<Tensor>> {
        embed_scales(&self.encoder, &mut self.online, x)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            arch: self.arch.clone(),
            tau: self.tau,
            steps: self.steps,
        };
        let mut entries: Vec<(String, &Tensor)> = Vec::new();
        for (prefix, store) in [(ONLINE_PREFIX, &self.online), (TARGET_PREFIX, &self.target)] {
            for p in store.params().iter().chain(store.buffers()) {
                entries.push((format!("{prefix}{}", p.name), &p.tensor));
            }
        }
        save_tensors(dir, serde_json::to_value(&meta)?, &entries)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, tensors) = load_tensors(dir)?;
        let meta: CheckpointMeta = serde_json::from_value(manifest.meta)
            .map_err(|e| Error::format(dir, format!("checkpoint metadata: {e}")))?;
        let mut twin = TwinNetworks::new(meta.arch, meta.tau, 0)?;
        twin.steps = meta.steps;
        let pick = |prefix: &str| -> Vec<(&str, &Tensor)> {
            tensors
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(prefix).map(|n| (n, t)))
                .collect()
        };
        twin.online.load_named(pick(ONLINE_PREFIX))?;
        twin.target.load_named(pick(TARGET_PREFIX))?;
        Ok(twin)
    }
}

pub fn ema_update(target: &mut ParamStore, online: &ParamStore, tau: f64) -> Result<()> {
    if online.len() < target.len() {
        return Err(Error::Misaligned(format!(
            "target has {} parameters, online only {}",
            target.len(),
            online.len()
        )));
    }
    for (t, o) in target.params_mut().iter_mut().zip(online.params()) {
        if t.name != o.name || t.tensor.shape() != o.tensor.shape() {
            return Err(Error::Misaligned(format!(
                "target parameter `{}` pairs with online `{}`",
                t.name, o.name
            )));
        }
        for (d, b) in t.tensor.data_mut().iter_mut().zip(o.tensor.data()) {
            *d = tau * *d + (1.0 - tau) * b;
        }
    }
    Ok(())
}

/// Eval-mode, gradient-free encoder pass returning every `Rᵢ`.
pub fn embed_scales(encoder: &Encoder, store: &mut ParamStore, x: &Tensor) -> Result<Vec<Tensor>> {
    let mut s = Session::new(store, Mode::Eval).frozen();
    let xv = s.graph.constant(x.clone());
    let feats = encoder.forward(&mut s, xv)?;
    Ok(feats.r.iter().map(|&r| s.graph.value(r).clone()).collect())
}
