use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::{uniform_init, BufferId, ParamId, ParamStore, Session, Tensor, Var};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Affine map along the last dimension.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add(format!("{name}.w"), uniform_init(&[d_in, d_out], d_in, rng));
        let b = store.add(format!("{name}.b"), uniform_init(&[d_out], d_in, rng));
        Linear { w, b, d_in, d_out }
    }

    /// Accepts `[n, d_in]` or `[b, t, d_in]`.
    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let shape = s.graph.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        if d != self.d_in {
            return Err(Error::shape(
                "linear",
                format!("input width {d}, layer expects {}", self.d_in),
            ));
        }
        let rows = shape.iter().product::<usize>() / d.max(1);
        let flat = if shape.len() == 2 {
            x
        } else {
            s.graph.reshape(x, &[rows, d])?
        };
        let (w, b) = (s.p(self.w), s.p(self.b));
        let y = s.graph.matmul(flat, w)?;
        let y = s.graph.add_row(y, b)?;
        if shape.len() == 2 {
            Ok(y)
        } else {
            let mut out_shape = shape;
            *out_shape.last_mut().unwrap() = self.d_out;
            s.graph.reshape(y, &out_shape)
        }
    }
}

/// Batch normalization over all axes but the last (channel) axis.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(&[channels], 1.0)),
            channels,
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (g, b) = (s.p(self.gamma), s.p(self.beta));
        match s.mode() {
            crate::numeric::Mode::Train => {
                let (y, stats) = s.graph.batch_norm_train(x, g, b, BN_EPS)?;
                s.update_running(self.running_mean, self.running_var, &stats, BN_MOMENTUM);
                Ok(y)
            }
            crate::numeric::Mode::Eval => {
                let rm = s.buffer(self.running_mean).data().to_vec();
                let rv = s.buffer(self.running_var).data().to_vec();
                s.graph.batch_norm_eval(x, g, b, &rm, &rv, BN_EPS)
            }
        }
    }
}

/// `conv1x1(x[b×t×f], w[f×f_h], b[f_h])`: the same affine map applied at every time step.
pub fn conv1x1(graph: &mut crate::numeric::Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let shape = graph.shape(x).to_vec();
    let [batch, t, f] = shape[..] else {
        return Err(Error::shape("conv1x1", format!("expected rank-3 input, got {shape:?}")));
    };
    let wshape = graph.shape(w).to_vec();
    if wshape.len() != 2 || wshape[0] != f {
        return Err(Error::shape(
            "conv1x1",
            format!("weight {wshape:?} for {f} input channels"),
        ));
    }
    let flat = graph.reshape(x, &[batch * t, f])?;
    let y = graph.matmul(flat, w)?;
    let y = graph.add_row(y, b)?;
    graph.reshape(y, &[batch, t, wshape[1]])
}
