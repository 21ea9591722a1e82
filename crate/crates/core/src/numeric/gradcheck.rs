//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::numeric::{Graph, Mode, ParamStore, Session, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
/// Discrepancies below this are treated as exact agreement.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|)` over
    /// elements whose absolute discrepancy exceeds [`ABS_FLOOR`].
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input index, flat element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub rel_tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.rel_tol
    }
}

fn compare(
    analytic: &[Tensor],
    inputs: &mut [Tensor],
    rel_tol: f64,
    mut eval: impl FnMut(&[Tensor]) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
        rel_tol,
    };
    for i in 0..inputs.len() {
        for k in 0..inputs[i].numel() {
            let orig = inputs[i].data()[k];
            inputs[i].data_mut()[k] = orig + FD_STEP;
            let up = eval(inputs)?;
            inputs[i].data_mut()[k] = orig - FD_STEP;
            let down = eval(inputs)?;
            inputs[i].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[i].data()[k];
            let abs = (a - numeric).abs();
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if abs > ABS_FLOOR {
                let rel = abs / a.abs().max(numeric.abs());
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst = Some((i, k));
                }
            }
        }
    }
    Ok(report)
}

/// Checks the gradient of a scalar-valued graph function with respect to
/// every element of `inputs`.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor], rel_tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let run = |vals: &[Tensor], track: bool| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals
            .iter()
            .map(|t| {
                if track {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        let out = f(&mut g, &vars)?;
        Ok((g, vars, out))
    };
    let (g, vars, out) = run(inputs, true)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get_or_zeros(*v)).collect();
    let mut work = inputs.to_vec();
    compare(&analytic, &mut work, rel_tol, |vals| {
        let (g, _, out) = run(vals, false)?;
        Ok(g.value(out).data()[0])
    })
}

/// Gradient check of a network forward pass with respect to extra inputs
/// and every parameter in `store` (train mode, no dropout).
pub fn finite_diff_check_store<F>(store: &ParamStore, inputs: &[Tensor], rel_tol: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Session<'_>, &[Var]) -> Result<Var>,
{
    let n_params = store.len();
    let run = |vals: &[Tensor], track: bool| -> Result<(f64, Vec<Tensor>)> {
        let mut local = store.clone();
        for (p, v) in local.params_mut().iter_mut().zip(&vals[inputs.len()..]) {
            p.tensor = v.clone();
        }
        let mut s = Session::new(&mut local, Mode::Train);
        if !track {
            s = s.frozen();
        }
        let mut vars = Vec::with_capacity(inputs.len());
        for t in &vals[..inputs.len()] {
            vars.push(if track {
                s.graph.param(t.clone())
            } else {
                s.graph.constant(t.clone())
            });
        }
        let out = f(&mut s, &vars)?;
        let value = s.graph.value(out).data()[0];
        if !track {
            return Ok((value, Vec::new()));
        }
        let grads = s.graph.backward(out)?;
        let pg = s.param_grads(&grads);
        let mut analytic: Vec<Tensor> = vars.iter().map(|v| grads.get_or_zeros(*v)).collect();
        for (i, g) in pg.into_iter().enumerate() {
            analytic.push(g.unwrap_or_else(|| Tensor::zeros(store.params()[i].tensor.shape())));
        }
        Ok((value, analytic))
    };
    let mut all: Vec<Tensor> = inputs.to_vec();
    all.extend(store.params().iter().map(|p| p.tensor.clone()));
    debug_assert_eq!(all.len(), inputs.len() + n_params);
    let (_, analytic) = run(&all, true)?;
    compare(&analytic, &mut all, rel_tol, |vals| Ok(run(vals, false)?.0))
}
