use serde::{Deserialize, Serialize};

use crate::cascade::RegretMetric;
use crate::divergence::ThresholdRule;
use crate::error::{Error, Result};
use crate::instances::InstanceSpec;
use crate::policy::{IndexRule, TieBreak};

/// How the per-round regret is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegretEstimator {
    /// Exact expected increment of the chosen metric for the played action.
    #[default]
    Expected,
    /// Optimal click probability minus the realized click indicator (cascade
    /// metric only). Individual increments can be negative.
    Realized,
}

/// Everything needed to reproduce one Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub policy: IndexRule,
    pub horizon: u64,
    pub trials: usize,
    pub seed: u64,
    /// Rounds at which cumulative regret is recorded; powers of two plus the
    /// horizon when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<u64>>,
    #[serde(default)]
    pub metric: RegretMetric,
    #[serde(default)]
    pub tie_break: TieBreak,
    #[serde(default)]
    pub estimator: RegretEstimator,
    #[serde(default)]
    pub klucb_threshold: ThresholdRule,
}

impl ExperimentConfig {
    pub fn new(instance: InstanceSpec, policy: IndexRule, horizon: u64, trials: usize, seed: u64) -> Self {
        ExperimentConfig {
            instance,
            policy,
            horizon,
            trials,
            seed,
            checkpoints: None,
            metric: RegretMetric::default(),
            tie_break: TieBreak::default(),
            estimator: RegretEstimator::default(),
            klucb_threshold: ThresholdRule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.estimator == RegretEstimator::Realized && self.metric != RegretMetric::Cascade {
            return Err(Error::InvalidConfig("estimator \"realized\" requires metric \"cascade\"".into()));
        }
        self.policy.validate()?;
        if let Some(points) = &self.checkpoints {
            validate_checkpoints(points, self.horizon)?;
        }
        Ok(())
    }

    pub fn resolved_checkpoints(&self) -> Vec<u64> {
        self.checkpoints.clone().unwrap_or_else(|| geometric_checkpoints(self.horizon))
    }

    /// Canonical JSON text: fixed field order, compact.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialization is infallible")
    }
}

fn validate_checkpoints(points: &[u64], horizon: u64) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidConfig("checkpoints must not be empty".into()));
    }
    if points[0] == 0 || points.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("checkpoints must be strictly increasing rounds >= 1".into()));
    }
    if *points.last().unwrap() != horizon {
        return Err(Error::InvalidConfig(format!("the last checkpoint must equal the horizon {horizon}")));
    }
    Ok(())
}

/// `1, 2, 4, ...` up to `horizon`, always ending at `horizon`.
pub fn geometric_checkpoints(horizon: u64) -> Vec<u64> {
    let mut points: Vec<u64> =
        std::iter::successors(Some(1u64), |&p| p.checked_mul(2)).take_while(|&p| p < horizon).collect();
    points.push(horizon);
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        let instance = InstanceSpec::TwoLevel { num_items: 4, list_size: 2, p: 0.5, delta: 0.1 };
        ExperimentConfig::new(instance, IndexRule::Klucb, 100, 3, 7)
    }

    #[test]
    fn geometric_defaults() {
        assert_eq!(geometric_checkpoints(1), vec![1]);
        assert_eq!(geometric_checkpoints(8), vec![1, 2, 4, 8]);
        assert_eq!(geometric_checkpoints(10), vec![1, 2, 4, 8, 10]);
    }

    #[test]
    fn checkpoint_validation() {
        let mut config = base();
        config.checkpoints = Some(vec![10, 50, 100]);
        config.validate().unwrap();
        for bad in [vec![], vec![0, 100], vec![50, 10, 100], vec![10, 50], vec![10, 10, 100]] {
            config.checkpoints = Some(bad);
            assert!(config.validate().is_err());
        }
    }

    #[test]
    fn rejects_degenerate_runs() {
        let mut config = base();
        config.trials = 0;
        assert!(config.validate().is_err());
        let mut config = base();
        config.horizon = 0;
        assert!(config.validate().is_err());
        let mut config = base();
        config.estimator = RegretEstimator::Realized;
        config.metric = RegretMetric::Document;
        assert!(config.validate().is_err());
    }

    #[test]
    fn defaults_fill_in() {
        let text = r#"{"instance":{"kind":"two_level","L":4,"K":2,"p":0.5,"delta":0.1},
            "policy":{"kind":"ucb1"},"horizon":100,"trials":3,"seed":7}"#;
        let config: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(config.policy, IndexRule::ucb1());
        assert_eq!(config.metric, RegretMetric::Cascade);
        assert_eq!(config.klucb_threshold, ThresholdRule::LogTLogCubed);
        let again: ExperimentConfig = serde_json::from_str(&config.canonical_json()).unwrap();
        assert_eq!(again, config);
    }
}
