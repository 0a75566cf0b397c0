//! Synthetic biased-recommendation environment.
//!
//! Generates users, items, and interactions whose engagement labels carry
//! planted biases with known directions — duration, user threshold, format,
//! cold start, and temporal drift — together with brute-force Monte Carlo
//! oracles for contextual label moments.

pub mod config;
pub mod generate;
pub mod oracle;
pub mod population;

pub use config::{DriftSchedule, GeneratorConfig};
pub use generate::{apply_drift, cold_noise_multiplier, draw_labels, generate, generate_range, sample_population};
pub use oracle::{conditional_moments, oracle_conditional_stats, sample_conditioned, MomentEstimate, OracleContext};
pub use population::{affinity, feature_schema, features_of, Format, ItemProfile, Region, UserProfile};
