//! Hypothesis tests of utility-constrained approximate fairness.
//!
//! The statistic is `N` times the squared 2-Wasserstein distance from the
//! empirical covariate distribution to the set of distributions whose
//! expected utility reaches `r` while the group propensity gap stays within
//! `eps`. It is computed through a two-multiplier dual, and compared against
//! a bootstrap quantile of its limiting upper bound.

pub mod asymptotics;
pub mod audit;
pub mod config;
pub mod dual;
pub mod error;
pub mod estimation;
pub mod io;
pub mod model;
pub mod registry;
pub mod rng;
pub mod simulation;

pub use asymptotics::{compute_bound, critical_value, BootstrapConfig, CriticalValue};
pub use audit::{check_assumptions, run_test, TestConfig, TestReport, TestStatus};
pub use dual::{solve_dual, DualPoint, DualSolution, SolverConfig};
pub use error::{Error, Result};
pub use model::{CompositeModel, CovariateSpace, Dataset, Sample};
pub use simulation::{make_scenario, run_sweep, SweepConfig, SweepResult};
