//! Regression loss between normalized predictions and target projections,
//! and the in-batch contrastive alternative.

use crate::error::{Error, Result};
use crate::numeric::{Graph, Tensor, Var};

/// Batch mean of `‖pd/‖pd‖ − pj/‖pj‖‖²` (equal to `2 − 2·cos`).
pub fn scale_loss(g: &mut Graph, pd: Var, pj: Var) -> Result<Var> {
    if g.shape(pd) != g.shape(pj) {
        return Err(Error::shape(
            "scale_loss",
            format!("{:?} vs {:?}", g.shape(pd), g.shape(pj)),
        ));
    }
    let b = g.shape(pd)[0] as f64;
    let a = g.l2_normalize_rows(pd)?;
    let t = g.l2_normalize_rows(pj)?;
    let d = g.sub(a, t)?;
    let d = g.square(d);
    let s = g.sum(d);
    Ok(g.scale(s, 1.0 / b))
}

/// Mean over scales of [`scale_loss`]; also returns the per-scale values.
pub fn multiscale_loss(g: &mut Graph, pd: &[Var], pj: &[Var]) -> Result<(Var, Vec<f64>)> {
    if pd.len() != pj.len() || pd.is_empty() {
        return Err(Error::shape(
            "multiscale_loss",
            format!("{} predictions for {} targets", pd.len(), pj.len()),
        ));
    }
    let mut per = Vec::with_capacity(pd.len());
    let mut total: Option<Var> = None;
    for (&a, &b) in pd.iter().zip(pj) {
        let l = scale_loss(g, a, b)?;
        per.push(g.value(l).data()[0]);
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    let mean = g.scale(total.expect("non-empty"), 1.0 / pd.len() as f64);
    Ok((mean, per))
}

const MASKED: f64 = -1e9;

/// Normalized-temperature cross-entropy over `2N` views: each row's positive
/// is its counterpart in the other view, the other `2N − 2` rows are negatives.
pub fn ntxent_loss(g: &mut Graph, a: Var, b: Var, temperature: f64) -> Result<Var> {
    let n = g.shape(a)[0];
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "contrastive loss needs a batch of at least 2, got {n}"
        )));
    }
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape("ntxent_loss", "view shapes differ"));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {temperature}")));
    }
    let d = g.shape(a)[1];
    let za = g.l2_normalize_rows(a)?;
    let zb = g.l2_normalize_rows(b)?;
    let z = g.concat_rows(&[za, zb])?;
    let z3 = g.reshape(z, &[1, 2 * n, d])?;
    let zt = g.swap_last2(z3)?;
    let zt = g.reshape(zt, &[d, 2 * n])?;
    let sim = g.matmul(z, zt)?;
    let sim = g.scale(sim, 1.0 / temperature);
    let mask = g.constant(Tensor::from_fn(&[2 * n, 2 * n], |k| {
        if k / (2 * n) == k % (2 * n) {
            MASKED
        } else {
            0.0
        }
    }));
    let logits = g.add(sim, mask)?;
    let targets: Vec<usize> = (0..2 * n).map(|i| (i + n) % (2 * n)).collect();
    g.softmax_cross_entropy(logits, &targets)
}
