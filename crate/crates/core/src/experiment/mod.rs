//! Monte Carlo experiments, parameter sweeps, scaling fits and the numeric
//! inequality suite.

pub mod config;
pub mod fit;
pub mod runner;
pub mod sweep;
pub mod theory;

pub use config::{geometric_checkpoints, ExperimentConfig, RegretEstimator};
pub use fit::{fit_scaling, ScalingFit};
pub use runner::{run_experiment, trial_rng, Experiment, ExperimentResult, RegretTrace};
pub use sweep::{config_at, fit_sweep, max_over_family, sweep, sweep_k, FamilyReport, SweepPoint};
pub use theory::{run_suite, ClaimCheck, SuiteOptions};
