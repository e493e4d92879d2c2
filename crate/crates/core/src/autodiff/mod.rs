//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Models own their weights in a [`ParamStore`]. Each forward pass records
//! onto a fresh [`Tape`]; [`Tape::backward`] accumulates gradients into the
//! store and [`AdamState::step`] consumes and clears them.

mod checkpoint;
mod kernels;
pub mod nn;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use optim::{AdamConfig, AdamState};
pub use params::{glorot_uniform, ParamId, ParamStore};
pub use tape::{Gradients, OpRecord, Tape, Var};
pub use tensor::Tensor;

#[cfg(any(test, feature = "testing"))]
pub mod gradcheck;
