//! Minimal reverse-mode differentiation substrate: parameter stores, a
//! per-batch tape with a stop-gradient operator, dense MLPs, and first-order
//! optimizers. Everything here is generic over [`crate::scalar::Scalar`].

pub mod autodiff;
pub mod checkpoint;
pub mod mlp;
pub mod optim;
pub mod fdcheck;
pub mod params;

pub use autodiff::{NodeId, Tape};
pub use checkpoint::Checkpoint;
pub use mlp::{Activation, ForwardNodes, Mlp, MlpSpec};
pub use optim::{Algorithm, Optimizer};
pub use params::{ParamId, ParamStore};
