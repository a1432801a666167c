use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cascade::{click_probability, Instance, RegretMetric};
use crate::error::{Error, Result};
use crate::experiment::config::{ExperimentConfig, RegretEstimator};
use crate::policy::{IndexPolicy, PolicyState, Workspace};

/// Random stream of one trial: ChaCha8 keyed by the experiment seed, with
/// the trial index as stream id. Adding trials never perturbs earlier ones.
pub fn trial_rng(seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_index);
    rng
}

/// Cumulative regret of one trial at each checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub trial_index: u64,
    pub seed: u64,
    pub cumulative: Vec<f64>,
}

impl RegretTrace {
    pub fn terminal(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Aggregate of all trials of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub checkpoints: Vec<u64>,
    pub mean: Vec<f64>,
    /// Standard error of the mean (0 with a single trial).
    pub stderr: Vec<f64>,
    pub traces: Vec<RegretTrace>,
}

impl ExperimentResult {
    pub fn terminal_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(0.0)
    }

    pub fn terminal_stderr(&self) -> f64 {
        self.stderr.last().copied().unwrap_or(0.0)
    }

    fn aggregate(checkpoints: Vec<u64>, traces: Vec<RegretTrace>) -> Self {
        let trials = traces.len() as f64;
        let width = checkpoints.len();
        let mut mean = vec![0.0; width];
        for trace in &traces {
            for (m, x) in mean.iter_mut().zip(&trace.cumulative) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= trials);
        let stderr = if traces.len() < 2 {
            vec![0.0; width]
        } else {
            (0..width)
                .map(|i| {
                    let ss: f64 = traces.iter().map(|t| (t.cumulative[i] - mean[i]).powi(2)).sum();
                    (ss / (trials - 1.0)).sqrt() / trials.sqrt()
                })
                .collect()
        };
        ExperimentResult { checkpoints, mean, stderr, traces }
    }
}

/// A validated configuration with its instance built.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    instance: Instance,
    policy: IndexPolicy,
    checkpoints: Vec<u64>,
    warnings: Vec<String>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let generated = config.instance.build(config.horizon)?;
        let policy = IndexPolicy::new(config.policy, &generated.instance)?
            .with_threshold(config.klucb_threshold)
            .with_tie_break(config.tie_break);
        let checkpoints = config.resolved_checkpoints();
        Ok(Experiment { config, instance: generated.instance, policy, checkpoints, warnings: generated.warnings })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn instance(&self) -> &Instance {
        &self.instance
    }

    pub fn checkpoints(&self) -> &[u64] {
        &self.checkpoints
    }

    /// Theorem hypotheses the instance violates.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Runs `horizon` rounds on the stream `(seed, trial_index)`.
    pub fn run_trial(&self, trial_index: u64) -> Result<RegretTrace> {
        let mut rng = trial_rng(self.config.seed, trial_index);
        let mut state = PolicyState::new(self.instance.num_items());
        let mut workspace = Workspace::default();
        let optimal_click = click_probability(&self.instance, self.instance.optimal_action()).value();
        let mut cumulative = Vec::with_capacity(self.checkpoints.len());
        let mut next = self.checkpoints.iter().peekable();
        let mut total = 0.0;
        for round in 1..=self.config.horizon {
            let step = self.policy.step_with(&mut state, &self.instance, &mut rng, &mut workspace)?;
            total += match (self.config.estimator, self.config.metric) {
                (RegretEstimator::Expected, RegretMetric::Cascade) => step.regret,
                (RegretEstimator::Expected, metric) => metric.increment(&self.instance, &step.action),
                (RegretEstimator::Realized, _) => optimal_click - step.outcome.clicked() as u8 as f64,
            };
            if next.peek() == Some(&&round) {
                cumulative.push(total);
                next.next();
            }
        }
        if cumulative.len() != self.checkpoints.len() {
            return Err(Error::InvalidConfig("checkpoints beyond the horizon".into()));
        }
        Ok(RegretTrace { trial_index, seed: self.config.seed, cumulative })
    }

    /// Runs every trial on the current rayon pool and averages them in trial
    /// order, so the result does not depend on the number of workers.
    pub fn run(&self) -> Result<ExperimentResult> {
        let traces =
            (0..self.config.trials as u64).into_par_iter().map(|i| self.run_trial(i)).collect::<Result<Vec<_>>>()?;
        Ok(ExperimentResult::aggregate(self.checkpoints.clone(), traces))
    }
}

/// Builds and runs `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    Experiment::new(config.clone())?.run()
}
