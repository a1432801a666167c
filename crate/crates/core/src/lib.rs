pub mod cascade;
pub mod cli;
pub mod divergence;
pub mod error;
pub mod experiment;
pub mod instances;
pub mod policy;

pub use cascade::{Action, Instance, ItemId, RegretMetric, RoundOutcome};
pub use divergence::{Probability, ThresholdRule};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, ExperimentResult};
pub use instances::{InstanceSpec, SweepAxis};
pub use policy::{IndexPolicy, IndexRule, PolicyState, TieBreak};
