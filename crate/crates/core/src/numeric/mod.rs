//! Minimal reverse-mode differentiable tensor engine, layers and optimizer.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod layers;
mod params;
pub mod rnn;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, finite_diff_check_store, GradCheckReport};
pub use graph::{BatchStats, Gradients, Graph, Var};
pub use layers::{conv1x1, BatchNorm, Linear, BN_EPS, BN_MOMENTUM};
pub use params::{uniform_init, BufferId, Mode, ParamId, ParamStore, Parameter, Session};
pub use rnn::{gru_cell, lstm_cell, rnn_cell, run_rnn, CellKind, CellWeights, Recurrent};
pub use tensor::Tensor;
