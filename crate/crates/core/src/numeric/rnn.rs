//! Recurrent cells (LSTM, GRU, vanilla RNN) and a minimal causal
//! convolution used as the non-recurrent swap-in.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{uniform_init, Graph, ParamId, ParamStore, Session, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    #[default]
    Lstm,
    Gru,
    Rnn,
    /// Causal 1-D convolution, kernel 3, ReLU.
    Tcn,
}

pub const TCN_KERNEL: usize = 3;

/// Cell weights already bound onto a graph.
#[derive(Clone, Copy, Debug)]
pub enum CellWeights {
    /// Gates packed as `[input | forget | candidate | output]`.
    Lstm {
        w_x: Var,
        w_h: Var,
        b: Var,
    },
    /// Gates packed as `[reset | update | new]`.
    Gru {
        w_x: Var,
        w_h: Var,
        b_x: Var,
        b_h: Var,
    },
    Rnn {
        w_x: Var,
        w_h: Var,
        b: Var,
    },
    /// `w` is `[TCN_KERNEL·d_in × d_h]`, tap-major (lag 0 first).
    Tcn {
        w: Var,
        b: Var,
    },
}

/// One LSTM step on a batch: `x_t[b×d_in]`, `h_prev`, `c_prev[b×d_h]`.
pub fn lstm_cell(g: &mut Graph, x_t: Var, h_prev: Var, c_prev: Var, w_x: Var, w_h: Var, b: Var) -> Result<(Var, Var)> {
    let xw = g.matmul(x_t, w_x)?;
    let xw = g.add_row(xw, b)?;
    lstm_gates(g, xw, h_prev, c_prev, w_h)
}

fn lstm_gates(g: &mut Graph, xw: Var, h_prev: Var, c_prev: Var, w_h: Var) -> Result<(Var, Var)> {
    let d_h = g.shape(h_prev)[1];
    if g.shape(xw)[1] != 4 * d_h {
        return Err(Error::shape(
            "lstm_cell",
            format!("gate width {} for hidden {d_h}", g.shape(xw)[1]),
        ));
    }
    let hw = g.matmul(h_prev, w_h)?;
    let z = g.add(xw, hw)?;
    let i = g.slice_cols(z, 0, d_h)?;
    let i = g.sigmoid(i);
    let f = g.slice_cols(z, d_h, d_h)?;
    let f = g.sigmoid(f);
    let c_hat = g.slice_cols(z, 2 * d_h, d_h)?;
    let c_hat = g.tanh(c_hat);
    let o = g.slice_cols(z, 3 * d_h, d_h)?;
    let o = g.sigmoid(o);
    let fc = g.mul(f, c_prev)?;
    let ic = g.mul(i, c_hat)?;
    let c = g.add(fc, ic)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// One GRU step (PyTorch gate convention).
pub fn gru_cell(g: &mut Graph, x_t: Var, h_prev: Var, w_x: Var, w_h: Var, b_x: Var, b_h: Var) -> Result<Var> {
    let xw = g.matmul(x_t, w_x)?;
    let xw = g.add_row(xw, b_x)?;
    gru_gates(g, xw, h_prev, w_h, b_h)
}

fn gru_gates(g: &mut Graph, xw: Var, h_prev: Var, w_h: Var, b_h: Var) -> Result<Var> {
    let d_h = g.shape(h_prev)[1];
    if g.shape(xw)[1] != 3 * d_h {
        return Err(Error::shape("gru_cell", "gate width"));
    }
    let hw = g.matmul(h_prev, w_h)?;
    let hw = g.add_row(hw, b_h)?;
    let xr = g.slice_cols(xw, 0, d_h)?;
    let hr = g.slice_cols(hw, 0, d_h)?;
    let r = g.add(xr, hr)?;
    let r = g.sigmoid(r);
    let xz = g.slice_cols(xw, d_h, d_h)?;
    let hz = g.slice_cols(hw, d_h, d_h)?;
    let z = g.add(xz, hz)?;
    let z = g.sigmoid(z);
    let xn = g.slice_cols(xw, 2 * d_h, d_h)?;
    let hn = g.slice_cols(hw, 2 * d_h, d_h)?;
    let rhn = g.mul(r, hn)?;
    let n = g.add(xn, rhn)?;
    let n = g.tanh(n);
    // h = n + z ⊙ (h_prev − n)
    let diff = g.sub(h_prev, n)?;
    let zd = g.mul(z, diff)?;
    g.add(n, zd)
}

/// One Elman step: `tanh(x·W_x + b + h·W_h)`.
pub fn rnn_cell(g: &mut Graph, x_t: Var, h_prev: Var, w_x: Var, w_h: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x_t, w_x)?;
    let xw = g.add_row(xw, b)?;
    rnn_gates(g, xw, h_prev, w_h)
}

fn rnn_gates(g: &mut Graph, xw: Var, h_prev: Var, w_h: Var) -> Result<Var> {
    let hw = g.matmul(h_prev, w_h)?;
    let z = g.add(xw, hw)?;
    Ok(g.tanh(z))
}

/// Runs a cell over `seq[b×steps×d_in]` from zero state and returns every
/// hidden state as `[b×steps×d_h]`.
pub fn run_rnn(g: &mut Graph, seq: Var, cell: &CellWeights, d_h: usize) -> Result<Var> {
    let shape = g.shape(seq).to_vec();
    let [b, steps, d_in] = shape[..] else {
        return Err(Error::shape(
            "run_rnn",
            format!("expected [b, steps, d], got {shape:?}"),
        ));
    };
    if steps == 0 {
        return Err(Error::InvalidArgument("run_rnn on an empty sequence".into()));
    }
    if let CellWeights::Tcn { w, b: bias } = *cell {
        return run_tcn(g, seq, w, bias, b, steps, d_in, d_h);
    }
    // Input projections for all steps at once; row-wise identical to per-step matmuls.
    let flat = g.reshape(seq, &[b * steps, d_in])?;
    let (w_x, bias) = match *cell {
        CellWeights::Lstm { w_x, b, .. } | CellWeights::Rnn { w_x, b, .. } => (w_x, b),
        CellWeights::Gru { w_x, b_x, .. } => (w_x, b_x),
        CellWeights::Tcn { .. } => unreachable!(),
    };
    let xw = g.matmul(flat, w_x)?;
    let xw = g.add_row(xw, bias)?;
    let width = g.shape(xw)[1];
    let xw = g.reshape(xw, &[b, steps, width])?;

    let mut h = g.constant(Tensor::zeros(&[b, d_h]));
    let mut c = g.constant(Tensor::zeros(&[b, d_h]));
    let mut outs = Vec::with_capacity(steps);
    for t in 0..steps {
        let xt = g.select_time(xw, t)?;
        match *cell {
            CellWeights::Lstm { w_h, .. } => {
                let (h2, c2) = lstm_gates(g, xt, h, c, w_h)?;
                h = h2;
                c = c2;
            }
            CellWeights::Gru { w_h, b_h, .. } => h = gru_gates(g, xt, h, w_h, b_h)?,
            CellWeights::Rnn { w_h, .. } => h = rnn_gates(g, xt, h, w_h)?,
            CellWeights::Tcn { .. } => unreachable!(),
        }
        outs.push(h);
    }
    g.stack_time(&outs)
}

#[allow(clippy::too_many_arguments)]
fn run_tcn(g: &mut Graph, seq: Var, w: Var, bias: Var, b: usize, steps: usize, d_in: usize, d_h: usize) -> Result<Var> {
    let mut taps = Vec::with_capacity(TCN_KERNEL);
    for lag in 0..TCN_KERNEL {
        let shifted = g.shift_time(seq, lag)?;
        taps.push(g.reshape(shifted, &[b * steps, d_in])?);
    }
    let stacked = g.concat_cols(&taps)?;
    let y = g.matmul(stacked, w)?;
    let y = g.add_row(y, bias)?;
    let y = g.relu(y);
    g.reshape(y, &[b, steps, d_h])
}

/// A recurrent (or TCN) layer whose weights live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Recurrent {
    pub kind: CellKind,
    pub d_in: usize,
    pub d_h: usize,
    params: Vec<ParamId>,
}

impl Recurrent {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kind: CellKind,
        d_in: usize,
        d_h: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut add = |suffix: &str, shape: &[usize], fan_in: usize| {
            store.add(format!("{name}.{suffix}"), uniform_init(shape, fan_in, rng))
        };
        let params = match kind {
            CellKind::Lstm => vec![
                add("w_x", &[d_in, 4 * d_h], d_in),
                add("w_h", &[d_h, 4 * d_h], d_h),
                add("b", &[4 * d_h], d_h),
            ],
            CellKind::Gru => vec![
                add("w_x", &[d_in, 3 * d_h], d_in),
                add("w_h", &[d_h, 3 * d_h], d_h),
                add("b_x", &[3 * d_h], d_h),
                add("b_h", &[3 * d_h], d_h),
            ],
            CellKind::Rnn => vec![
                add("w_x", &[d_in, d_h], d_in),
                add("w_h", &[d_h, d_h], d_h),
                add("b", &[d_h], d_h),
            ],
            CellKind::Tcn => vec![
                add("w", &[TCN_KERNEL * d_in, d_h], TCN_KERNEL * d_in),
                add("b", &[d_h], TCN_KERNEL * d_in),
            ],
        };
        Recurrent {
            kind,
            d_in,
            d_h,
            params,
        }
    }

    pub fn param_ids(&self) -> &[ParamId] {
        &self.params
    }

    pub fn bind(&self, s: &mut Session<'_>) -> CellWeights {
        let v: Vec<Var> = self.params.iter().map(|&id| s.p(id)).collect();
        match self.kind {
            CellKind::Lstm => CellWeights::Lstm {
                w_x: v[0],
                w_h: v[1],
                b: v[2],
            },
            CellKind::Gru => CellWeights::Gru {
                w_x: v[0],
                w_h: v[1],
                b_x: v[2],
                b_h: v[3],
            },
            CellKind::Rnn => CellWeights::Rnn {
                w_x: v[0],
                w_h: v[1],
                b: v[2],
            },
            CellKind::Tcn => CellWeights::Tcn { w: v[0], b: v[1] },
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, seq: Var) -> Result<Var> {
        let d = *s.graph.shape(seq).last().unwrap_or(&0);
        if d != self.d_in {
            return Err(Error::shape(
                "recurrent",
                format!("input width {d}, cell expects {}", self.d_in),
            ));
        }
        let w = self.bind(s);
        run_rnn(&mut s.graph, seq, &w, self.d_h)
    }
}
