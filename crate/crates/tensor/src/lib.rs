//! Minimal differentiable numerics substrate: dense and sparse 64-bit
//! tensors, a dynamic reverse-mode tape, bias-corrected Adam with decoupled
//! weight decay, and a central-finite-difference gradient checker.
//!
//! The tape is rebuilt on every forward pass, so recorded shapes may change
//! step to step. All randomness flows through [`StreamRng`], which splits one
//! seed into independently replayable named streams.

mod adam;
mod error;
mod gradcheck;
mod params;
mod rng;
mod sparse;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{Gradients, ParamId, ParamStore};
pub use rng::StreamRng;
pub use sparse::SparseMatrix;
pub use tape::{Mode, NodeId, Tape};
pub use tensor::{standard_normal, Tensor};
