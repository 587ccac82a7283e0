//! Group multicalibration, constrained omniprediction and its verification.
//!
//! Predictors are trained to satisfy group-wise multiaccuracy/multicalibration
//! ([`trainer`], checked by [`audit`]), then post-processed on the simulated
//! distribution ([`simulate`]) into decision rules for constrained tasks
//! ([`tasks`], [`optimizer`]), optionally made rank-preserving ([`rank`]).
//! [`verify`] checks the resulting guarantees against brute-force oracles.

pub mod audit;
pub mod cli;
pub mod error;
pub mod lp;
pub mod model;
pub mod optimizer;
pub mod rank;
pub mod scalar;
pub mod simulate;
pub mod tasks;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
