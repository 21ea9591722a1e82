//! Frozen-encoder representations and their export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesDataset;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::features::batch;
use crate::numeric::{ParamStore, Tensor};
use crate::ssl::twin::{embed_scales, ArchSpec};
use crate::ssl::TwinNetworks;

/// Which pyramid levels feed downstream models.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMode {
    /// All scales side by side.
    #[default]
    Concat,
    /// The full-resolution scale only.
    Finest,
}

const EMBED_BATCH: usize = 64;

/// Rejects data whose geometry differs from the one the networks were built for.
pub fn check_compatible(arch: &ArchSpec, data: &TimeSeriesDataset) -> Result<()> {
    if arch.len != data.len || arch.channels != data.channels {
        return Err(Error::Config(format!(
            "checkpoint expects series of {} steps × {} channels, dataset has {} × {}",
            arch.len, arch.channels, data.len, data.channels
        )));
    }
    Ok(())
}

/// Joins per-scale `[b × f_h]` rows according to `mode`.
pub fn combine_scales(scales: &[Tensor], mode: EmbedMode) -> Tensor {
    match mode {
        EmbedMode::Finest => scales[0].clone(),
        EmbedMode::Concat => {
            let b = scales[0].shape()[0];
            let d: usize = scales.iter().map(|s| s.shape()[1]).sum();
            let data = (0..b)
                .flat_map(|r| scales.iter().flat_map(move |s| s.row(r).iter().copied()))
                .collect();
            Tensor::new(vec![b, d], data).expect("scale widths")
        }
    }
}

/// Eval-mode embeddings `[indices.len() × d]` from an encoder and its store.
pub fn embed_with(
    encoder: &Encoder,
    store: &mut ParamStore,
    arch: &ArchSpec,
    data: &TimeSeriesDataset,
    indices: &[usize],
    mode: EmbedMode,
) -> Result<Tensor> {
    check_compatible(arch, data)?;
    let feat = arch.featurizer()?;
    let d = arch.encoder.embedding_width(mode == EmbedMode::Concat);
    let mut out = Vec::with_capacity(indices.len() * d);
    for chunk in indices.chunks(EMBED_BATCH) {
        let inputs = feat.inputs(data, chunk)?;
        let x = batch(&inputs.iter().collect::<Vec<_>>())?;
        let scales = embed_scales(encoder, store, &x)?;
        out.extend_from_slice(combine_scales(&scales, mode).data());
    }
    Tensor::new(vec![indices.len(), d], out)
}

/// Embeddings from the online encoder of `twin`.
pub fn embed(twin: &mut TwinNetworks, data: &TimeSeriesDataset, indices: &[usize], mode: EmbedMode) -> Result<Tensor> {
    embed_with(&twin.encoder, &mut twin.online, &twin.arch, data, indices, mode)
}

/// Writes `[n × d]` embeddings with their labels as a dataset directory
/// (`len = d`, one channel).
pub fn export_embeddings(
    dir: &Path,
    embeddings: &Tensor,
    labels: &[usize],
    class_names: &[String],
) -> Result<TimeSeriesDataset> {
    let d = embeddings.shape()[1];
    let ds = TimeSeriesDataset::new(
        embeddings.data().iter().map(|&v| v as f32).collect(),
        labels.to_vec(),
        d,
        1,
        class_names.to_vec(),
        1.0,
        "embeddings",
    )?;
    ds.save(dir)?;
    Ok(ds)
}
