//! Fixed-budget best-arm identification when every arm's reward is moved by a
//! common, unobserved shift that changes at observed change points.
//!
//! The crate provides a seeded environment simulator, a joint least-squares
//! estimator of arm means and shifts, allocation policies (LinLUCB and
//! baselines), a replicated benchmark harness and Monte Carlo diagnostics.

pub mod diagnostics;
pub mod env;
pub mod harness;
pub mod linalg;
pub mod ols;
pub mod policies;
pub mod rng;
pub mod stats;

pub use env::{make_instance, true_best, BanditInstance, InstanceConfig, ObservationStream};
pub use ols::{fit_ols, OlsFit};
pub use policies::{Policy, PolicySpec};
pub use stats::SufficientStats;
