//! Projector and predictor MLPs shared across scales.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{BatchNorm, Linear, ParamStore, Session, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub hidden: usize,
    pub proj_dim: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden: 256,
            proj_dim: 64,
        }
    }
}

/// `Linear → BatchNorm → ReLU → Linear`.
#[derive(Clone, Debug)]
pub struct MlpHead {
    pub d_in: usize,
    pub d_out: usize,
    first: Linear,
    bn: BatchNorm,
    second: Linear,
}

impl MlpHead {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        MlpHead {
            d_in,
            d_out,
            first: Linear::new(store, &format!("{name}.fc1"), d_in, hidden, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), hidden),
            second: Linear::new(store, &format!("{name}.fc2"), hidden, d_out, rng),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let w = s.graph.shape(x)[1];
        if w != self.d_in {
            return Err(Error::shape(
                "head",
                format!("input width {w}, head expects {}", self.d_in),
            ));
        }
        let y = self.first.forward(s, x)?;
        let y = self.bn.forward(s, y)?;
        let y = s.graph.relu(y);
        self.second.forward(s, y)
    }

    /// Applies the head to each scale separately.
    pub fn forward_scales(&self, s: &mut Session<'_>, r: &[Var]) -> Result<Vec<Var>> {
        r.iter().map(|&x| self.forward(s, x)).collect()
    }
}
