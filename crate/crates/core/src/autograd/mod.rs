//! Reverse-mode automatic differentiation on a flat tape, sized for the
//! small set-transformer models in this crate. Graphs are rebuilt per
//! sample; parameters live in a [`ParamStore`] and gradients come back
//! keyed by [`ParamId`]. The op set covers dense linear algebra, the
//! usual normalizations and activations, multi-head attention built
//! from primitives, and a differentiable PHAT-weighted correlation so
//! learnable filter banks can be trained through it.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod store;
pub mod tape;
pub mod tensor;

pub use checkpoint::{entries_of, load_tensors, save_tensors, CheckpointError};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use optim::{AdamW, AdamWConfig};
pub use store::{Grads, ParamId, ParamStore};
pub use tape::{NodeId, Tape};
pub use tensor::{Scalar, Tensor};
