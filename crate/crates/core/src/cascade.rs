//! The cascade click model: problem instances, ranked actions, sampled
//! rounds, and the two per-round regret metrics.
//!
//! Item ids are 1-based on every public surface.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::Probability;
use crate::error::{Error, Result};

/// 1-based item identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(usize);

impl ItemId {
    pub fn new(id: usize) -> Result<Self> {
        if id == 0 {
            return Err(Error::InvalidAction("item ids start at 1".into()));
        }
        Ok(ItemId(id))
    }

    pub(crate) fn from_index(index: usize) -> Self {
        ItemId(index + 1)
    }

    pub fn get(self) -> usize {
        self.0
    }

    /// 0-based storage index.
    #[inline]
    pub fn index(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A cascading bandit problem `(L, K, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    attraction: Vec<Probability>,
    list_size: usize,
    optimal: Action,
    optimal_miss: f64,
    optimal_attraction_sum: f64,
}

impl Instance {
    pub fn new(attraction: Vec<Probability>, list_size: usize) -> Result<Self> {
        let num_items = attraction.len();
        if list_size == 0 || list_size > num_items {
            return Err(Error::InvalidInstance(format!(
                "list size K={list_size} must satisfy 1 <= K <= L={num_items}"
            )));
        }
        let optimal = top_k(attraction.iter().map(|w| w.value()), list_size);
        let optimal = Action { items: optimal };
        let optimal_miss = miss_probability(&attraction, &optimal);
        let optimal_attraction_sum = optimal.items.iter().map(|e| attraction[e.index()].value()).sum();
        Ok(Instance { attraction, list_size, optimal, optimal_miss, optimal_attraction_sum })
    }

    /// Builds an instance from raw weights, rejecting any outside `[0, 1]`.
    pub fn from_weights(weights: &[f64], list_size: usize) -> Result<Self> {
        let attraction = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                Probability::new(w)
                    .map_err(|_| Error::InvalidInstance(format!("attraction of item {} is {w}, outside [0, 1]", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Instance::new(attraction, list_size)
    }

    pub fn num_items(&self) -> usize {
        self.attraction.len()
    }

    pub fn list_size(&self) -> usize {
        self.list_size
    }

    pub fn attraction(&self) -> &[Probability] {
        &self.attraction
    }

    pub fn weight(&self, item: ItemId) -> f64 {
        self.attraction[item.index()].value()
    }

    pub fn optimal_action(&self) -> &Action {
        &self.optimal
    }

    pub fn max_attraction(&self) -> f64 {
        self.attraction.iter().map(|w| w.value()).fold(0.0, f64::max)
    }

    /// Checks that `action` is a list of exactly K distinct ids in `[1, L]`.
    pub fn validate(&self, action: &Action) -> Result<()> {
        if action.len() != self.list_size {
            return Err(Error::InvalidAction(format!("expected {} items, got {}", self.list_size, action.len())));
        }
        let mut seen = vec![false; self.num_items()];
        for &item in action.items() {
            if item.get() > self.num_items() {
                return Err(Error::InvalidAction(format!("item {item} exceeds L={}", self.num_items())));
            }
            if std::mem::replace(&mut seen[item.index()], true) {
                return Err(Error::InvalidAction(format!("item {item} listed twice")));
            }
        }
        Ok(())
    }
}

/// Indices of the `k` largest scores, ordered by decreasing score with
/// ties going to the smaller id.
pub(crate) fn top_k(scores: impl Iterator<Item = f64>, k: usize) -> Vec<ItemId> {
    let mut ranked: Vec<(f64, usize)> = scores.enumerate().map(|(i, s)| (s, i)).collect();
    let by_score = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < ranked.len() {
        ranked.select_nth_unstable_by(k - 1, by_score);
        ranked.truncate(k);
    }
    ranked.sort_unstable_by(by_score);
    ranked.into_iter().map(|(_, i)| ItemId::from_index(i)).collect()
}

/// An ordered list of K distinct items.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Action {
    items: Vec<ItemId>,
}

impl Action {
    /// Builds an action from 1-based ids; rejects zero and duplicate ids.
    pub fn new(ids: &[usize]) -> Result<Self> {
        let items = ids.iter().map(|&id| ItemId::new(id)).collect::<Result<Vec<_>>>()?;
        let mut sorted = items.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidAction(format!("duplicate ids in {ids:?}")));
        }
        Ok(Action { items })
    }

    pub(crate) fn from_items(items: Vec<ItemId>) -> Self {
        Action { items }
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn ids(&self) -> Vec<usize> {
        self.items.iter().map(|e| e.get()).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Outcome of one round: where the user clicked (if anywhere) and the
/// attraction bits of the examined prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundOutcome {
    /// 1-based click position, `None` when nothing attracted the user.
    pub click_position: Option<usize>,
    pub observed: Vec<bool>,
}

impl RoundOutcome {
    pub fn clicked(&self) -> bool {
        self.click_position.is_some()
    }

    /// Number of examined positions, `min(C_t, K)`.
    pub fn examined(&self) -> usize {
        self.observed.len()
    }

    /// Checks the prefix shape against a list of size `list_size`.
    pub fn validate(&self, list_size: usize) -> Result<()> {
        let examined = self.observed.len();
        if examined > list_size {
            return Err(Error::InconsistentOutcome(format!("{examined} observations for a list of {list_size}")));
        }
        let zeros_before_last = self.observed.iter().rev().skip(1).all(|&bit| !bit);
        match self.click_position {
            Some(k) if k >= 1 && k == examined && self.observed[k - 1] && zeros_before_last => Ok(()),
            None if examined == list_size && self.observed.iter().all(|&bit| !bit) => Ok(()),
            _ => Err(Error::InconsistentOutcome(format!(
                "click at {:?} with observed prefix {:?}",
                self.click_position, self.observed
            ))),
        }
    }
}

/// `1 - prod_k (1 - w(a_k))`.
pub fn click_probability(instance: &Instance, action: &Action) -> Probability {
    Probability::saturating(1.0 - miss_probability(instance.attraction(), action))
}

fn miss_probability(attraction: &[Probability], action: &Action) -> f64 {
    action.items().iter().map(|e| 1.0 - attraction[e.index()].value()).product()
}

/// Simulates one user scan of `action`: Bernoulli draws position by
/// position, stopping at the first attractive item.
pub fn sample_round<R: Rng + ?Sized>(instance: &Instance, action: &Action, rng: &mut R) -> RoundOutcome {
    let mut observed = Vec::with_capacity(action.len());
    for (position, item) in action.items().iter().enumerate() {
        let attracted = rng.random::<f64>() < instance.weight(*item);
        observed.push(attracted);
        if attracted {
            return RoundOutcome { click_position: Some(position + 1), observed };
        }
    }
    RoundOutcome { click_position: None, observed }
}

/// Expected click-probability gap between `action` and the optimal action.
pub fn regret_increment(instance: &Instance, action: &Action) -> f64 {
    (miss_probability(instance.attraction(), action) - instance.optimal_miss).max(0.0)
}

/// Document-based regret: total attraction of the optimal K items minus that
/// of the played items.
pub fn doc_regret_increment(instance: &Instance, action: &Action) -> f64 {
    let played: f64 = action.items().iter().map(|&e| instance.weight(e)).sum();
    (instance.optimal_attraction_sum - played).max(0.0)
}

/// Which per-round regret a run accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegretMetric {
    /// Click-probability gap, `prod(1 - w(a)) - prod(1 - w(a*))`.
    #[default]
    Cascade,
    /// Sum of per-slot attraction gaps.
    Document,
}

impl RegretMetric {
    pub fn increment(self, instance: &Instance, action: &Action) -> f64 {
        match self {
            RegretMetric::Cascade => regret_increment(instance, action),
            RegretMetric::Document => doc_regret_increment(instance, action),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegretMetric::Cascade => "cascade",
            RegretMetric::Document => "document",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inst(w: &[f64], k: usize) -> Instance {
        Instance::from_weights(w, k).unwrap()
    }

    fn act(ids: &[usize]) -> Action {
        Action::new(ids).unwrap()
    }

    #[test]
    fn optimal_action_examples() {
        assert_eq!(inst(&[0.3, 0.9, 0.5], 2).optimal_action().ids(), vec![2, 3]);
        assert_eq!(inst(&[0.5, 0.5, 0.5], 2).optimal_action().ids(), vec![1, 2]);
        assert_eq!(inst(&[0.1, 0.25, 0.25, 0.25, 0.1, 0.1], 3).optimal_action().ids(), vec![2, 3, 4]);
    }

    #[test]
    fn instance_rejects_bad_shapes() {
        assert!(Instance::from_weights(&[0.1, 0.2], 3).is_err());
        assert!(Instance::from_weights(&[0.1, 0.2], 0).is_err());
        assert!(Instance::from_weights(&[0.1, 1.2], 1).is_err());
    }

    #[test]
    fn action_validation() {
        let instance = inst(&[0.1, 0.2, 0.3], 2);
        assert!(Action::new(&[1, 1]).is_err());
        assert!(Action::new(&[0, 1]).is_err());
        assert!(instance.validate(&act(&[1, 4])).is_err());
        assert!(instance.validate(&act(&[1])).is_err());
        assert!(instance.validate(&act(&[3, 1])).is_ok());
    }

    #[test]
    fn click_probability_examples() {
        assert_eq!(click_probability(&inst(&[0.0, 0.0], 2), &act(&[1, 2])).value(), 0.0);
        assert_abs_diff_eq!(click_probability(&inst(&[0.5, 0.5], 2), &act(&[2, 1])).value(), 0.75);
        assert_eq!(click_probability(&inst(&[0.37], 1), &act(&[1])).value(), 0.37);
    }

    #[test]
    fn deterministic_rounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zero = inst(&[0.0, 0.0, 0.0], 3);
        let out = sample_round(&zero, &act(&[3, 1, 2]), &mut rng);
        assert_eq!(out.click_position, None);
        assert_eq!(out.observed, vec![false; 3]);
        out.validate(3).unwrap();

        let one = inst(&[1.0, 1.0, 1.0], 3);
        let out = sample_round(&one, &act(&[2, 3, 1]), &mut rng);
        assert_eq!(out.click_position, Some(1));
        assert_eq!(out.observed, vec![true]);
        out.validate(3).unwrap();
    }

    #[test]
    fn click_position_frequencies() {
        // P(C = 2) = 0.5 * 0.5 for three items at 1/2
        let instance = inst(&[0.5, 0.5, 0.5], 3);
        let action = act(&[1, 2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        let mut at_two = 0;
        for _ in 0..draws {
            if sample_round(&instance, &action, &mut rng).click_position == Some(2) {
                at_two += 1;
            }
        }
        let freq = at_two as f64 / draws as f64;
        let sigma = (0.25f64 * 0.75 / draws as f64).sqrt();
        assert!((freq - 0.25).abs() <= 3.0 * sigma, "{freq}");
    }

    #[test]
    fn outcome_validation_rejects_mismatches() {
        let bad = [
            RoundOutcome { click_position: Some(2), observed: vec![false, false] },
            RoundOutcome { click_position: Some(1), observed: vec![false, true] },
            RoundOutcome { click_position: None, observed: vec![false] },
            RoundOutcome { click_position: None, observed: vec![false; 4] },
            RoundOutcome { click_position: Some(0), observed: vec![] },
            RoundOutcome { click_position: Some(2), observed: vec![true, true] },
        ];
        for outcome in bad {
            assert!(outcome.validate(3).is_err(), "{outcome:?}");
        }
    }

    #[test]
    fn regret_examples() {
        let instance = inst(&[0.5, 0.25], 1);
        assert_eq!(regret_increment(&instance, &act(&[1])), 0.0);
        assert_abs_diff_eq!(regret_increment(&instance, &act(&[2])), 0.25);

        // two-level: K items at p, rest at p - delta
        let (p, delta, k) = (0.2, 0.05, 3);
        let mut w = vec![p; k];
        w.extend(vec![p - delta; 4]);
        let instance = inst(&w, k);
        let expected = (1.0f64 - p + delta).powi(k as i32) - (1.0f64 - p).powi(k as i32);
        assert_abs_diff_eq!(regret_increment(&instance, &act(&[4, 5, 6])), expected, epsilon = 1e-15);
    }

    #[test]
    fn doc_regret_examples() {
        let instance = inst(&[0.5, 0.25, 0.25], 2);
        assert_eq!(doc_regret_increment(&instance, &act(&[2, 1])), 0.0);
        assert_abs_diff_eq!(doc_regret_increment(&instance, &act(&[2, 3])), 0.25);
    }

    #[test]
    fn permutation_invariance() {
        let instance = inst(&[0.1, 0.7, 0.3, 0.45], 3);
        let a = act(&[1, 3, 4]);
        let b = act(&[4, 1, 3]);
        assert_abs_diff_eq!(
            click_probability(&instance, &a).value(),
            click_probability(&instance, &b).value(),
            epsilon = 1e-16
        );
        assert_abs_diff_eq!(regret_increment(&instance, &a), regret_increment(&instance, &b), epsilon = 1e-16);
    }
}
