//! Nesterov-accelerated training of deep linear networks (fully connected
//! and residual), with the analysis objects needed to audit the residual
//! dynamics: gram matrices, the momentum companion matrix, closed-form
//! hyperparameters, and an experiment harness.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod harness;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod theory;

pub use error::{NagError, Result};
pub use model::{forward, layer_gradients, loss, Arch, Dataset, NetworkParams, NetworkShape, ResNetInitConfig};
pub use optim::{OptimizerKind, OptimizerState};
pub use tensor::{Matrix, Vector};
pub use theory::TheoryBundle;
