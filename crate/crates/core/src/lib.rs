//! Desk-scale laboratory for model-based debiasing of ranking signals.
//!
//! A multi-task ranker learns point estimates of engagement; a decoupled
//! moments branch learns the contextual mean and variance of those estimates
//! over a configurable bias feature set, trained by method-of-moments losses
//! behind a stop-gradient. Relative preference scores built from the branch
//! feed value-model integration strategies and are evaluated against
//! bucketized-counting baselines on a synthetic biased environment.
//!
//! The numeric substrate (`numerics`, `scalar`) is generic over the float
//! type; the aliases below pin `f64` for the rest of the crate.

pub mod dataset;
pub mod bucket;
pub mod error;
pub mod eval;
pub mod mbd;
pub mod numerics;
pub mod ranker;
pub mod scalar;
pub mod schema;
pub mod signals;
pub mod special;
pub mod synthenv;

pub use error::{CoreError, Result};

/// Working precision for the laboratory.
pub type Real = f64;

pub type Tape = numerics::autodiff::Tape<Real>;
pub type ParamStore = numerics::params::ParamStore<Real>;
pub type Optimizer = numerics::optim::Optimizer<Real>;
