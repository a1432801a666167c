//! Index policies for cascading bandits: rank every item by an optimistic
//! index, show the top K, learn from the examined prefix.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::{self, top_k, Action, Instance, ItemId, RoundOutcome};
use crate::divergence::{self, Probability, ThresholdRule};
use crate::error::{Error, Result};

/// Default UCB1 exploration constant.
pub const DEFAULT_UCB1_SCALE: f64 = 1.5;

fn default_scale() -> f64 {
    DEFAULT_UCB1_SCALE
}

/// How items are scored each round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IndexRule {
    /// CascadeKL-UCB.
    Klucb,
    /// CascadeUCB1 with confidence width `sqrt(scale log t / s)`.
    Ucb1 {
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// Scores items by their true attraction; plays the optimal list.
    Oracle,
    /// Fresh uniform scores every round; plays a uniformly random list.
    Uniform,
}

impl IndexRule {
    pub fn ucb1() -> Self {
        IndexRule::Ucb1 { scale: DEFAULT_UCB1_SCALE }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            IndexRule::Ucb1 { scale } if !(scale > 1.0 && scale.is_finite()) => {
                Err(Error::InvalidConfig(format!("policy.scale must be a finite number above 1, got {scale}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            IndexRule::Klucb => "klucb",
            IndexRule::Ucb1 { .. } => "ucb1",
            IndexRule::Oracle => "oracle",
            IndexRule::Uniform => "uniform",
        }
    }
}

/// Resolution of equal indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestId,
    /// Equal indices are ordered by a fresh random key each round.
    Random,
}

/// Per-item observation counts and click totals, plus the round counter.
///
/// Means are stored as integer click counts so that two items with the same
/// history always carry bit-identical means.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyState {
    pulls: Vec<u64>,
    clicks: Vec<u64>,
    round: u64,
}

impl PolicyState {
    pub fn new(num_items: usize) -> Self {
        PolicyState { pulls: vec![0; num_items], clicks: vec![0; num_items], round: 1 }
    }

    pub fn num_items(&self) -> usize {
        self.pulls.len()
    }

    /// The round about to be played (starts at 1).
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }

    pub fn clicks(&self) -> &[u64] {
        &self.clicks
    }

    pub fn total_pulls(&self) -> u64 {
        self.pulls.iter().sum()
    }

    #[inline]
    pub fn mean(&self, item: usize) -> f64 {
        match self.pulls[item] {
            0 => 0.0,
            n => self.clicks[item] as f64 / n as f64,
        }
    }

    pub fn means(&self) -> Vec<Probability> {
        (0..self.num_items()).map(|e| Probability::saturating(self.mean(e))).collect()
    }

    /// Records the examined prefix of `action`: each examined item gains one
    /// observation, and the clicked one (if any) one click. Advances the
    /// round.
    pub fn update(&mut self, action: &Action, outcome: &RoundOutcome) -> Result<()> {
        outcome.validate(action.len())?;
        for (&item, &bit) in action.items().iter().zip(&outcome.observed) {
            let e = item.index();
            if e >= self.num_items() {
                return Err(Error::InvalidAction(format!("item {item} exceeds L={}", self.num_items())));
            }
            self.pulls[e] += 1;
            self.clicks[e] += bit as u64;
        }
        self.round += 1;
        Ok(())
    }
}

/// An index rule bound to the pieces of configuration it needs.
#[derive(Debug, Clone)]
pub struct IndexPolicy {
    rule: IndexRule,
    threshold: ThresholdRule,
    tie_break: TieBreak,
    list_size: usize,
    truth: Option<Vec<f64>>,
}

impl IndexPolicy {
    pub fn new(rule: IndexRule, instance: &Instance) -> Result<Self> {
        rule.validate()?;
        let truth =
            matches!(rule, IndexRule::Oracle).then(|| instance.attraction().iter().map(|w| w.value()).collect());
        Ok(IndexPolicy {
            rule,
            threshold: ThresholdRule::default(),
            tie_break: TieBreak::default(),
            list_size: instance.list_size(),
            truth,
        })
    }

    pub fn with_threshold(mut self, threshold: ThresholdRule) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }

    pub fn rule(&self) -> IndexRule {
        self.rule
    }

    /// Per-item indices for the round `state.round()`.
    pub fn compute_indices<R: Rng + ?Sized>(&self, state: &PolicyState, rng: &mut R) -> Vec<Probability> {
        let mut out = Vec::new();
        self.fill_indices(state, rng, &mut out);
        out.into_iter().map(Probability::saturating).collect()
    }

    fn fill_indices<R: Rng + ?Sized>(&self, state: &PolicyState, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        let t = state.round() as f64;
        let items = 0..state.num_items();
        match self.rule {
            IndexRule::Klucb => {
                let theta = self.threshold.threshold(t).value();
                out.extend(items.map(|e| match state.pulls[e] {
                    0 => 1.0,
                    n => divergence::klucb_upper(state.mean(e), theta / n as f64),
                }));
            }
            IndexRule::Ucb1 { scale } => {
                let log_t = t.ln();
                out.extend(items.map(|e| match state.pulls[e] {
                    0 => 1.0,
                    n => divergence::ucb1_upper(state.mean(e), n as f64, log_t, scale),
                }));
            }
            IndexRule::Oracle => out.extend_from_slice(self.truth.as_deref().unwrap_or_default()),
            IndexRule::Uniform => out.extend(items.map(|_| rng.random::<f64>())),
        }
    }

    /// One round: score, rank, show, observe, learn. Returns the played
    /// action, what the user did, and the click-probability regret of the
    /// action.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut PolicyState, instance: &Instance, rng: &mut R) -> Result<Step> {
        self.step_with(state, instance, rng, &mut Workspace::default())
    }

    /// [`IndexPolicy::step`] reusing buffers across rounds. A workspace must
    /// follow a single `PolicyState`.
    pub(crate) fn step_with<R: Rng + ?Sized>(
        &self,
        state: &mut PolicyState,
        instance: &Instance,
        rng: &mut R,
        workspace: &mut Workspace,
    ) -> Result<Step> {
        if state.num_items() != instance.num_items() {
            return Err(Error::InvalidInstance(format!(
                "policy state tracks {} items but the instance has {}",
                state.num_items(),
                instance.num_items()
            )));
        }
        let action = self.choose(state, rng, workspace);
        let outcome = cascade::sample_round(instance, &action, rng);
        state.update(&action, &outcome)?;
        let regret = cascade::regret_increment(instance, &action);
        Ok(Step { action, outcome, regret })
    }

    fn choose<R: Rng + ?Sized>(&self, state: &PolicyState, rng: &mut R, workspace: &mut Workspace) -> Action {
        match (self.rule, self.tie_break) {
            (IndexRule::Klucb, TieBreak::LowestId) => {
                let theta = self.threshold.threshold(state.round() as f64).value();
                Action::from_items(workspace.klucb.select(state, theta, self.list_size))
            }
            (_, TieBreak::LowestId) => {
                self.fill_indices(state, rng, &mut workspace.scores);
                Action::from_items(top_k(workspace.scores.iter().copied(), self.list_size))
            }
            (_, TieBreak::Random) => {
                self.fill_indices(state, rng, &mut workspace.scores);
                select_randomized(&workspace.scores, self.list_size, rng)
            }
        }
    }
}

/// Buffers reused across the rounds of one trial.
#[derive(Debug, Clone, Default)]
pub(crate) struct Workspace {
    scores: Vec<f64>,
    klucb: KlucbCache,
}

/// Safety margin for the interval bounds of [`KlucbCache`], well above the
/// root finder's error.
const CACHE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default)]
struct SolvedIndex {
    pulls: u64,
    clicks: u64,
    radius: f64,
    value: f64,
    slope: f64,
}

/// Ranks items by KL-UCB index without re-solving every index each round.
///
/// An item whose counts have not changed keeps the index it had at an older
/// (smaller) radius. The index is increasing in the radius, and by convexity
/// of `d(mean, .)` it grows by at most `radius increase / d'(mean, old)`, so
/// the cached value brackets the current one. Items are solved exactly only
/// while their bracket overlaps another item's in a way that could change
/// the ordered top K; the result equals ranking the exact indices.
#[derive(Debug, Clone, Default)]
struct KlucbCache {
    solved: Vec<SolvedIndex>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    exact: Vec<bool>,
    order: Vec<usize>,
    stale: Vec<usize>,
}

impl KlucbCache {
    fn select(&mut self, state: &PolicyState, theta: f64, list_size: usize) -> Vec<ItemId> {
        let l = state.num_items();
        if self.solved.len() != l {
            self.solved = vec![SolvedIndex::default(); l];
            self.lower = vec![0.0; l];
            self.upper = vec![0.0; l];
            self.exact = vec![false; l];
        }
        for e in 0..l {
            let (pulls, clicks) = (state.pulls[e], state.clicks[e]);
            if pulls == 0 {
                self.lower[e] = 1.0;
                self.upper[e] = 1.0;
                self.exact[e] = true;
                continue;
            }
            let radius = theta / pulls as f64;
            let cached = self.solved[e];
            if cached.pulls != pulls || cached.clicks != clicks || radius < cached.radius {
                self.solve(state, e, radius);
            } else if radius == cached.radius {
                self.lower[e] = cached.value;
                self.upper[e] = cached.value;
                self.exact[e] = true;
            } else {
                let growth = (radius - cached.radius) / cached.slope;
                self.lower[e] = cached.value - CACHE_SLACK;
                self.upper[e] = if growth.is_finite() { (cached.value + growth + CACHE_SLACK).min(1.0) } else { 1.0 };
                self.exact[e] = false;
            }
        }

        loop {
            let (lower, upper, exact) = (&self.lower, &self.upper, &self.exact);
            let by_lower = |a: &usize, b: &usize| lower[*b].total_cmp(&lower[*a]).then(a.cmp(b));
            self.order.clear();
            self.order.extend(0..l);
            if list_size < l {
                self.order.select_nth_unstable_by(list_size - 1, by_lower);
            }
            let (top, rest) = self.order.split_at_mut(list_size);
            top.sort_unstable_by(by_lower);
            let floor = lower[top[list_size - 1]];

            // an ambiguous pair is one whose brackets touch and which is not
            // already resolved by two exact values
            self.stale.clear();
            let flag = |i: usize, j: usize, stale: &mut Vec<usize>| {
                if !(exact[i] && exact[j]) && upper[i] >= lower[j] && upper[j] >= lower[i] {
                    stale.extend([i, j].into_iter().filter(|&e| !exact[e]));
                }
            };
            for (a, &i) in top.iter().enumerate() {
                for &j in &top[a + 1..] {
                    flag(i, j, &mut self.stale);
                }
            }
            for &j in rest.iter() {
                if upper[j] >= floor {
                    for &i in top.iter() {
                        flag(i, j, &mut self.stale);
                    }
                }
            }
            if self.stale.is_empty() {
                return top.iter().map(|&e| ItemId::from_index(e)).collect();
            }
            for k in 0..self.stale.len() {
                let e = self.stale[k];
                if !self.exact[e] {
                    self.solve(state, e, theta / state.pulls[e] as f64);
                }
            }
        }
    }

    fn solve(&mut self, state: &PolicyState, e: usize, radius: f64) {
        let mean = state.mean(e);
        let value = divergence::klucb_upper(mean, radius);
        self.solved[e] = SolvedIndex {
            pulls: state.pulls[e],
            clicks: state.clicks[e],
            radius,
            value,
            slope: divergence::kl_slope(mean, value),
        };
        self.lower[e] = value;
        self.upper[e] = value;
        self.exact[e] = true;
    }
}

/// What happened in one round of [`IndexPolicy::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub action: Action,
    pub outcome: RoundOutcome,
    pub regret: f64,
}

/// The K items with the largest indices, by decreasing index; equal indices
/// go to the smaller id.
pub fn select_action(indices: &[Probability], list_size: usize) -> Result<Action> {
    if list_size == 0 || list_size > indices.len() {
        return Err(Error::InvalidAction(format!("cannot pick {list_size} items out of {}", indices.len())));
    }
    Ok(Action::from_items(top_k(indices.iter().map(|u| u.value()), list_size)))
}

fn select_randomized<R: Rng + ?Sized>(indices: &[f64], list_size: usize, rng: &mut R) -> Action {
    let mut keyed: Vec<(f64, u64, usize)> = indices.iter().enumerate().map(|(e, &u)| (u, rng.random(), e)).collect();
    keyed.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    Action::from_items(keyed[..list_size].iter().map(|&(_, _, e)| ItemId::from_index(e)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probs(xs: &[f64]) -> Vec<Probability> {
        xs.iter().map(|&x| Probability::new(x).unwrap()).collect()
    }

    #[test]
    fn select_action_examples() {
        assert_eq!(select_action(&probs(&[0.9, 0.5, 0.7]), 2).unwrap().ids(), vec![1, 3]);
        assert_eq!(select_action(&probs(&[0.4, 0.4, 0.4]), 2).unwrap().ids(), vec![1, 2]);
        assert_eq!(select_action(&probs(&[0.2, 0.8, 0.8]), 2).unwrap().ids(), vec![2, 3]);
        assert!(select_action(&probs(&[0.2]), 2).is_err());
    }

    #[test]
    fn fresh_state_explores_everything() {
        let instance = Instance::from_weights(&[0.3, 0.2, 0.1], 2).unwrap();
        let policy = IndexPolicy::new(IndexRule::Klucb, &instance).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let indices = policy.compute_indices(&PolicyState::new(3), &mut rng);
        assert!(indices.iter().all(|u| u.value() == 1.0));
    }

    #[test]
    fn ucb1_index_from_state() {
        let instance = Instance::from_weights(&[0.3], 1).unwrap();
        let policy = IndexPolicy::new(IndexRule::ucb1(), &instance).unwrap();
        let mut state = PolicyState::new(1);
        state.pulls[0] = 5;
        state.clicks[0] = 1;
        state.round = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u = policy.compute_indices(&state, &mut rng)[0].value();
        assert_abs_diff_eq!(u, 0.2 + (1.5 * 3f64.ln() / 5.0).sqrt(), epsilon = 1e-15);
        // six observations with mean 0.2 at log t = 1
        assert_abs_diff_eq!(divergence::ucb1_upper(0.2, 6.0, 1.0, 1.5), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn oracle_indices_are_the_truth() {
        let w = [0.3, 0.9, 0.5];
        let instance = Instance::from_weights(&w, 2).unwrap();
        let policy = IndexPolicy::new(IndexRule::Oracle, &instance).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let indices = policy.compute_indices(&PolicyState::new(3), &mut rng);
        assert_eq!(indices.iter().map(|u| u.value()).collect::<Vec<_>>(), w);
    }

    #[test]
    fn rejects_small_ucb1_scale() {
        let instance = Instance::from_weights(&[0.3], 1).unwrap();
        assert!(IndexPolicy::new(IndexRule::Ucb1 { scale: 1.0 }, &instance).is_err());
        assert!(IndexPolicy::new(IndexRule::Ucb1 { scale: f64::NAN }, &instance).is_err());
    }

    #[test]
    fn update_examples() {
        let action = Action::new(&[2, 1, 3]).unwrap();
        let mut state = PolicyState::new(3);

        // no click anywhere: every item gets one zero observation
        let miss = RoundOutcome { click_position: None, observed: vec![false; 3] };
        state.update(&action, &miss).unwrap();
        assert_eq!(state.pulls(), &[1, 1, 1]);
        assert_eq!(state.mean(1), 0.0);

        // click at position 1: only item 2 updated
        let hit = RoundOutcome { click_position: Some(1), observed: vec![true] };
        state.update(&action, &hit).unwrap();
        assert_eq!(state.pulls(), &[1, 2, 1]);
        assert_eq!(state.mean(1), 0.5);

        state.update(&action, &hit).unwrap();
        assert_abs_diff_eq!(state.mean(1), 2.0 / 3.0);
        assert_eq!(state.round(), 4);
    }

    #[test]
    fn update_rejects_inconsistent_outcomes() {
        let action = Action::new(&[1, 2]).unwrap();
        let mut state = PolicyState::new(2);
        let too_long = RoundOutcome { click_position: None, observed: vec![false; 3] };
        assert!(state.update(&action, &too_long).is_err());
        let mismatch = RoundOutcome { click_position: Some(1), observed: vec![false, true] };
        assert!(state.update(&action, &mismatch).is_err());
        assert_eq!(state, PolicyState::new(2));
    }

    #[test]
    fn full_list_has_no_regret() {
        let instance = Instance::from_weights(&[0.3, 0.1, 0.6], 3).unwrap();
        let policy = IndexPolicy::new(IndexRule::ucb1(), &instance).unwrap();
        let mut state = PolicyState::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            assert_eq!(policy.step(&mut state, &instance, &mut rng).unwrap().regret, 0.0);
        }
    }

    #[test]
    fn oracle_has_no_regret() {
        let instance = Instance::from_weights(&[0.3, 0.1, 0.6, 0.2], 2).unwrap();
        let policy = IndexPolicy::new(IndexRule::Oracle, &instance).unwrap();
        let mut state = PolicyState::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            assert_eq!(policy.step(&mut state, &instance, &mut rng).unwrap().regret, 0.0);
        }
    }

    #[test]
    fn replay_is_deterministic() {
        let instance = Instance::from_weights(&[0.3, 0.1, 0.6, 0.2, 0.25], 2).unwrap();
        for tie_break in [TieBreak::LowestId, TieBreak::Random] {
            let policy = IndexPolicy::new(IndexRule::Klucb, &instance).unwrap().with_tie_break(tie_break);
            let run = || {
                let mut state = PolicyState::new(5);
                let mut rng = ChaCha8Rng::seed_from_u64(11);
                (0..500).map(|_| policy.step(&mut state, &instance, &mut rng).unwrap().action).collect::<Vec<_>>()
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn random_tie_break_varies_among_equal_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let firsts: std::collections::BTreeSet<_> =
            (0..50).map(|_| select_randomized(&[0.5; 4], 1, &mut rng).ids()[0]).collect();
        assert_eq!(firsts.len(), 4);
        // distinct values still sort strictly
        assert_eq!(select_randomized(&[0.1, 0.9, 0.5], 2, &mut rng).ids(), vec![2, 3]);
    }

    #[test]
    fn zero_instance_examines_every_item_early() {
        let (l, k) = (11, 3);
        let instance = Instance::from_weights(&vec![0.0; l], k).unwrap();
        let policy = IndexPolicy::new(IndexRule::Klucb, &instance).unwrap();
        let mut state = PolicyState::new(l);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..l.div_ceil(k) {
            policy.step(&mut state, &instance, &mut rng).unwrap();
        }
        assert!(state.pulls().iter().all(|&n| n >= 1), "{:?}", state.pulls());
    }

    #[test]
    fn clipped_ucb1_ties_with_unexplored_items() {
        // at t = 2 the UCB1 width exceeds 1, so explored items clip to 1 and
        // win the id tie-break against unexplored ones
        let instance = Instance::from_weights(&[0.0; 6], 3).unwrap();
        let policy = IndexPolicy::new(IndexRule::ucb1(), &instance).unwrap();
        let mut state = PolicyState::new(6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        policy.step(&mut state, &instance, &mut rng).unwrap();
        let second = policy.step(&mut state, &instance, &mut rng).unwrap();
        assert_eq!(second.action.ids(), vec![1, 2, 3]);
        let third = policy.step(&mut state, &instance, &mut rng).unwrap();
        assert_eq!(third.action.ids(), vec![4, 5, 6]);
    }

    #[test]
    fn cached_klucb_ranking_matches_full_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for case in 0..12 {
            let l = rng.random_range(2..=24usize);
            let k = rng.random_range(1..=l);
            // a few repeated weights so that equal counts, and ties, are common
            let levels: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..0.6)).collect();
            let w: Vec<f64> = (0..l).map(|_| levels[rng.random_range(0..3)]).collect();
            let instance = Instance::from_weights(&w, k).unwrap();
            let rule = if case % 3 == 0 { ThresholdRule::LogT } else { ThresholdRule::default() };
            let policy = IndexPolicy::new(IndexRule::Klucb, &instance).unwrap().with_threshold(rule);
            let mut state = PolicyState::new(l);
            let mut workspace = Workspace::default();
            for _ in 0..3000 {
                let full = select_action(&policy.compute_indices(&state, &mut rng), k).unwrap();
                let step = policy.step_with(&mut state, &instance, &mut rng, &mut workspace).unwrap();
                assert_eq!(step.action, full, "case {case}, round {}", state.round() - 1);
            }
        }
    }
}
