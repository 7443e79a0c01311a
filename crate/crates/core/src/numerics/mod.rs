//! Dense tensors, tape-based reverse-mode differentiation, AdamW and the
//! warmup/cosine learning-rate schedule.

pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{Gradients, Graph, OpKind, Var};
pub use optim::{adamw_step, learning_rate, AdamWConfig, Moments, ScheduleState};
pub use params::{Bound, Optimizer, ParamId, ParamSet};
pub use tensor::Tensor;
