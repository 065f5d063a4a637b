//! Online Lasso for sparse linear contextual bandits under a perturbed adversary.
//!
//! The library is organized around the simulation pipeline: [`environment`]
//! generates adversarial contexts and applies censored Gaussian perturbations
//! ([`perturbation`]), [`bandit`] runs the greedy online-Lasso learner backed
//! by the coordinate-descent solver in [`lasso`], [`diagnostics`] evaluates the
//! eigenvalue / restricted-eigenvalue / recovery / regret guarantees the
//! learner is supposed to enjoy, and [`harness`] wires everything into seeded,
//! reproducible experiments with CSV/JSON/SVG outputs.

pub mod bandit;
pub mod diagnostics;
pub mod environment;
pub mod harness;
pub mod lasso;
pub mod perturbation;
pub mod rng;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
