use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{BatchStats, Gradients, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered, name-unique collection of trainable parameters plus
/// non-trainable buffers (batch-norm running statistics).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    buffers: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.params.iter().any(|p| p.name == name),
            "duplicate parameter name `{name}`"
        );
        self.params.push(Parameter { name, tensor });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor) -> BufferId {
        let name = name.into();
        assert!(
            !self.buffers.iter().any(|p| p.name == name),
            "duplicate buffer name `{name}`"
        );
        self.buffers.push(Parameter { name, tensor });
        BufferId(self.buffers.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        &self.buffers[id.0].tensor
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor {
        &mut self.buffers[id.0].tensor
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Parameter] {
        &self.buffers
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_buffers(&self) -> usize {
        self.buffers.len()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Copy holding only the first `n_params` parameters and `n_buffers` buffers.
    pub fn prefix(&self, n_params: usize, n_buffers: usize) -> ParamStore {
        ParamStore {
            params: self.params[..n_params].to_vec(),
            buffers: self.buffers[..n_buffers].to_vec(),
        }
    }

    /// Overwrites values from `(name, tensor)` pairs; every entry must exist with the same shape.
    pub fn load_named<'a>(&mut self, entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
        let pidx: HashMap<String, usize> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        let bidx: HashMap<String, usize> = self
            .buffers
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        let mut seen = 0;
        for (name, t) in entries {
            let slot = if let Some(&i) = pidx.get(name) {
                &mut self.params[i]
            } else if let Some(&i) = bidx.get(name) {
                &mut self.buffers[i]
            } else {
                return Err(Error::Misaligned(format!("unknown tensor `{name}`")));
            };
            if slot.tensor.shape() != t.shape() {
                return Err(Error::Misaligned(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.tensor.shape()
                )));
            }
            slot.tensor = t.clone();
            seen += 1;
        }
        let expected = self.params.len() + self.buffers.len();
        if seen != expected {
            return Err(Error::Misaligned(format!(
                "loaded {seen} tensors, network has {expected}"
            )));
        }
        Ok(())
    }

    /// Checks that two stores hold the same parameter names and shapes in the same order.
    pub fn check_aligned(&self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Misaligned(format!(
                "{} vs {} parameters",
                self.params.len(),
                other.params.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Misaligned(format!(
                    "`{}` {:?} vs `{}` {:?}",
                    a.name,
                    a.tensor.shape(),
                    b.name,
                    b.tensor.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Uniform `±1/√fan_in` initialization.
pub fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass over a [`ParamStore`]: binds parameters onto a fresh
/// [`Graph`] on first use and carries the mode and dropout randomness.
pub struct Session<'s> {
    pub graph: Graph,
    store: &'s mut ParamStore,
    bound: Vec<Option<Var>>,
    mode: Mode,
    track: bool,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<'s> Session<'s> {
    pub fn new(store: &'s mut ParamStore, mode: Mode) -> Self {
        let n = store.len();
        Session {
            graph: Graph::new(),
            store,
            bound: vec![None; n],
            mode,
            track: true,
            dropout_rng: None,
        }
    }

    /// Parameters enter the graph as constants (frozen or target network).
    pub fn frozen(mut self) -> Self {
        self.track = false;
        self
    }

    pub fn with_dropout_rng(mut self, rng: ChaCha8Rng) -> Self {
        self.dropout_rng = Some(rng);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = if self.track {
            self.graph.param(t)
        } else {
            self.graph.constant(t)
        };
        self.bound[id.0] = Some(v);
        v
    }

    /// Binds a parameter to an existing graph node (used by gradient checks).
    pub fn bind(&mut self, id: ParamId, v: Var) {
        self.bound[id.0] = Some(v);
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        self.store.buffer(id)
    }

    /// Folds train-mode batch statistics into running buffers.
    pub fn update_running(&mut self, mean_id: BufferId, var_id: BufferId, stats: &BatchStats, momentum: f64) {
        let unbias = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        for (r, m) in self.store.buffer_mut(mean_id).data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        for (r, v) in self.store.buffer_mut(var_id).data_mut().iter_mut().zip(&stats.var) {
            *r = (1.0 - momentum) * *r + momentum * v * unbias;
        }
    }

    /// Inverted dropout: active only in train mode with a dropout rng attached.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if self.mode != Mode::Train || rate <= 0.0 {
            return Ok(x);
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(x);
        };
        if rate >= 1.0 {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} >= 1")));
        }
        let keep = 1.0 / (1.0 - rate);
        let shape = self.graph.shape(x).to_vec();
        let mask = Tensor::from_fn(&shape, |_| if rng.gen::<f64>() < rate { 0.0 } else { keep });
        let m = self.graph.constant(mask);
        self.graph.mul(x, m)
    }

    /// Gradients for every parameter of the store, `None` where unused.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Option<Tensor>> {
        self.bound.iter().map(|b| b.and_then(|v| grads.get(v))).collect()
    }
}
