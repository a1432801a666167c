use crate::cascade::RegretMetric;
use crate::error::Result;
use crate::experiment::config::ExperimentConfig;
use crate::experiment::fit::{fit_scaling, ScalingFit};
use crate::experiment::runner::{Experiment, ExperimentResult};
use crate::instances::{enumerate_family, FamilySample, InstanceSpec, SweepAxis};
use crate::policy::IndexRule;

/// One coordinate of a sweep and the experiment run there.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub axis_value: u64,
    pub config: ExperimentConfig,
    pub warnings: Vec<String>,
    pub result: ExperimentResult,
}

impl SweepPoint {
    pub fn mean_terminal_regret(&self) -> f64 {
        self.result.terminal_mean()
    }

    pub fn stderr(&self) -> f64 {
        self.result.terminal_stderr()
    }
}

/// `base` with one axis replaced. Sweeping `n` sets the horizon and resets
/// the checkpoints to their default; the instance is regenerated in every
/// case.
pub fn config_at(base: &ExperimentConfig, axis: SweepAxis, value: u64) -> Result<ExperimentConfig> {
    let mut config = base.clone();
    config.instance = base.instance.with_axis(axis, value)?;
    if axis == SweepAxis::N {
        config.horizon = value;
        config.checkpoints = None;
    }
    Ok(config)
}

/// Runs one experiment per value of `axis`.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[u64]) -> Result<Vec<SweepPoint>> {
    // build everything first so a bad value fails before any simulation
    let experiments =
        values.iter().map(|&v| Ok((v, Experiment::new(config_at(base, axis, v)?)?))).collect::<Result<Vec<_>>>()?;
    experiments
        .into_iter()
        .map(|(axis_value, experiment)| {
            let result = experiment.run()?;
            Ok(SweepPoint {
                axis_value,
                config: experiment.config().clone(),
                warnings: experiment.warnings().to_vec(),
                result,
            })
        })
        .collect()
}

/// List-size sweep with per-K regeneration of the instance.
pub fn sweep_k(base: &ExperimentConfig, list_sizes: &[u64]) -> Result<Vec<SweepPoint>> {
    sweep(base, SweepAxis::K, list_sizes)
}

/// Log-log fit of mean terminal regret against the axis value; `None` when
/// fewer than two points are usable (zero regret cannot be fitted).
pub fn fit_sweep(points: &[SweepPoint]) -> Option<ScalingFit> {
    let usable: Vec<(f64, f64)> =
        points.iter().map(|p| (p.axis_value as f64, p.mean_terminal_regret())).filter(|&(_, y)| y > 0.0).collect();
    fit_scaling(&usable).ok()
}

/// Outcome of probing every member of the lower-bound family.
#[derive(Debug, Clone)]
pub struct FamilyReport {
    /// `(m, mean document regret at n)` in enumeration order.
    pub members: Vec<(Vec<usize>, f64)>,
    pub worst_m: Vec<usize>,
    pub worst_mean: f64,
}

impl FamilyReport {
    pub fn average(&self) -> f64 {
        self.members.iter().map(|(_, r)| r).sum::<f64>() / self.members.len() as f64
    }
}

/// Runs `rule` for `n` rounds on each family member under the document
/// metric and reports the worst member. Every member uses the same seed.
pub fn max_over_family(
    num_items: usize,
    list_size: usize,
    n: u64,
    rule: IndexRule,
    trials: usize,
    seed: u64,
    sample: Option<FamilySample>,
) -> Result<FamilyReport> {
    let family = enumerate_family(num_items, list_size, n, sample)?;
    let mut members = Vec::with_capacity(family.len());
    for (m, _) in family {
        let instance = InstanceSpec::LowerBoundFamily { num_items, list_size, n: Some(n), m: m.clone() };
        let mut config = ExperimentConfig::new(instance, rule, n, trials, seed);
        config.metric = RegretMetric::Document;
        config.checkpoints = Some(vec![n]);
        let result = Experiment::new(config)?.run()?;
        members.push((m, result.terminal_mean()));
    }
    let (worst_m, worst_mean) = members
        .iter()
        .fold(None::<(&Vec<usize>, f64)>, |best, (m, r)| match best {
            Some((_, b)) if b >= *r => best,
            _ => Some((m, *r)),
        })
        .map(|(m, r)| (m.clone(), r))
        .expect("families have at least one member");
    Ok(FamilyReport { members, worst_m, worst_mean })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theorem3_base(rule: IndexRule) -> ExperimentConfig {
        let instance = InstanceSpec::Theorem3 { num_items: 16, list_size: 2, n: None, chi: 4.0 };
        ExperimentConfig::new(instance, rule, 2000, 3, 5)
    }

    #[test]
    fn oracle_sweep_is_zero() {
        let points = sweep_k(&theorem3_base(IndexRule::Oracle), &[1, 2, 4]).unwrap();
        assert!(points.iter().all(|p| p.mean_terminal_regret() == 0.0));
        assert!(fit_sweep(&points).is_none());
    }

    #[test]
    fn full_list_point_is_zero() {
        let points = sweep_k(&theorem3_base(IndexRule::Klucb), &[16]).unwrap();
        assert_eq!(points[0].mean_terminal_regret(), 0.0);
    }

    #[test]
    fn n_sweep_follows_the_horizon() {
        let points = sweep(&theorem3_base(IndexRule::Klucb), SweepAxis::N, &[512, 1024]).unwrap();
        assert_eq!(points[1].config.horizon, 1024);
        assert_eq!(points[1].result.checkpoints.last(), Some(&1024));
        assert!(!points[0].warnings.is_empty());
    }

    #[test]
    fn bad_value_fails_before_running() {
        assert!(sweep_k(&theorem3_base(IndexRule::Klucb), &[2, 17]).is_err());
    }

    #[test]
    fn oracle_family_probe_is_zero() {
        let report = max_over_family(8, 2, 64, IndexRule::Oracle, 2, 1, None).unwrap();
        assert_eq!(report.members.len(), 16);
        assert_eq!(report.worst_mean, 0.0);
    }

    #[test]
    fn worst_member_dominates_average() {
        let report = max_over_family(4, 1, 200, IndexRule::Klucb, 3, 8, None).unwrap();
        assert!(report.worst_mean >= report.average());
        assert!(report.members.iter().any(|(m, r)| *m == report.worst_m && *r == report.worst_mean));
    }
}
