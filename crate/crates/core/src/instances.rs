//! Generators for the problem families used in the experiments.
//!
//! * two-level: K items at `p`, the rest at `p - delta`;
//! * `theorem3`: the hard instance for CascadeUCB1, K items at `1/(2K)` and
//!   the rest `sqrt(L / (chi n K))` lower;
//! * lower-bound family: K groups of `N = L/K` items, each group with one
//!   item lifted by half a gap, indexed by `m` in `[N]^K`.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::Instance;
use crate::error::{Error, Result};

/// Default `chi` for experiments.
pub const DEFAULT_CHI: f64 = 4.0;
/// Largest family that [`enumerate_family`] will list exhaustively.
pub const FAMILY_ENUMERATION_LIMIT: u128 = 1_000_000;

fn default_chi() -> f64 {
    DEFAULT_CHI
}

/// Serializable description of an instance, discriminated by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    TwoLevel {
        #[serde(rename = "L")]
        num_items: usize,
        #[serde(rename = "K")]
        list_size: usize,
        p: f64,
        delta: f64,
    },
    Theorem3 {
        #[serde(rename = "L")]
        num_items: usize,
        #[serde(rename = "K")]
        list_size: usize,
        /// Horizon the gap is tuned to; defaults to the run horizon.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n: Option<u64>,
        #[serde(default = "default_chi")]
        chi: f64,
    },
    LowerBoundFamily {
        #[serde(rename = "L")]
        num_items: usize,
        #[serde(rename = "K")]
        list_size: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n: Option<u64>,
        /// 1-based position of the lifted item inside each group.
        m: Vec<usize>,
    },
    Explicit {
        #[serde(rename = "K")]
        list_size: usize,
        weights: Vec<f64>,
    },
}

/// An instance together with any theorem hypotheses it violates.
#[derive(Debug, Clone)]
pub struct Generated {
    pub instance: Instance,
    pub warnings: Vec<String>,
}

/// Axis along which a sweep varies the base configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "K")]
    K,
    #[serde(rename = "n")]
    N,
    #[serde(rename = "L")]
    L,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::K => "K",
            SweepAxis::N => "n",
            SweepAxis::L => "L",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" => Ok(SweepAxis::K),
            "n" | "N" => Ok(SweepAxis::N),
            "L" | "l" => Ok(SweepAxis::L),
            other => Err(Error::InvalidConfig(format!("unknown sweep axis {other:?}; expected K, n or L"))),
        }
    }
}

impl InstanceSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            InstanceSpec::TwoLevel { .. } => "two_level",
            InstanceSpec::Theorem3 { .. } => "theorem3",
            InstanceSpec::LowerBoundFamily { .. } => "lower_bound_family",
            InstanceSpec::Explicit { .. } => "explicit",
        }
    }

    pub fn num_items(&self) -> usize {
        match self {
            InstanceSpec::TwoLevel { num_items, .. }
            | InstanceSpec::Theorem3 { num_items, .. }
            | InstanceSpec::LowerBoundFamily { num_items, .. } => *num_items,
            InstanceSpec::Explicit { weights, .. } => weights.len(),
        }
    }

    pub fn list_size(&self) -> usize {
        match self {
            InstanceSpec::TwoLevel { list_size, .. }
            | InstanceSpec::Theorem3 { list_size, .. }
            | InstanceSpec::LowerBoundFamily { list_size, .. }
            | InstanceSpec::Explicit { list_size, .. } => *list_size,
        }
    }

    pub fn chi(&self) -> Option<f64> {
        match self {
            InstanceSpec::Theorem3 { chi, .. } => Some(*chi),
            _ => None,
        }
    }

    /// Builds the instance; `horizon` fills in an omitted `n`.
    pub fn build(&self, horizon: u64) -> Result<Generated> {
        match self {
            &InstanceSpec::TwoLevel { num_items, list_size, p, delta } => {
                Ok(Generated { instance: gen_two_level(num_items, list_size, p, delta)?, warnings: Vec::new() })
            }
            &InstanceSpec::Theorem3 { num_items, list_size, n, chi } => {
                let n = n.unwrap_or(horizon);
                Ok(Generated {
                    instance: gen_theorem3(num_items, list_size, n, chi)?,
                    warnings: theorem3_hypothesis_warnings(num_items, list_size, n, chi),
                })
            }
            InstanceSpec::LowerBoundFamily { num_items, list_size, n, m } => Ok(Generated {
                instance: gen_lowerbound_member(*num_items, *list_size, n.unwrap_or(horizon), m)?,
                warnings: Vec::new(),
            }),
            InstanceSpec::Explicit { list_size, weights } => {
                Ok(Generated { instance: Instance::from_weights(weights, *list_size)?, warnings: Vec::new() })
            }
        }
    }

    /// A copy with one sweep coordinate replaced. Sweeping `n` resets an
    /// explicit instance-level `n` so the instance follows the horizon.
    pub fn with_axis(&self, axis: SweepAxis, value: u64) -> Result<InstanceSpec> {
        let value_usize = usize::try_from(value)
            .map_err(|_| Error::InvalidConfig(format!("sweep value {value} does not fit in usize")))?;
        let mut spec = self.clone();
        match (axis, &mut spec) {
            (SweepAxis::N, InstanceSpec::Theorem3 { n, .. } | InstanceSpec::LowerBoundFamily { n, .. }) => {
                *n = None;
            }
            (SweepAxis::N, _) => {}
            (
                SweepAxis::K,
                InstanceSpec::TwoLevel { list_size, .. }
                | InstanceSpec::Theorem3 { list_size, .. }
                | InstanceSpec::Explicit { list_size, .. },
            ) => *list_size = value_usize,
            (SweepAxis::L, InstanceSpec::TwoLevel { num_items, .. } | InstanceSpec::Theorem3 { num_items, .. }) => {
                *num_items = value_usize
            }
            (axis, spec) => {
                return Err(Error::InvalidInstance(format!(
                    "a {} instance cannot be swept along {}",
                    spec.kind_name(),
                    axis.as_str()
                )))
            }
        }
        Ok(spec)
    }
}

/// Items `1..=K` at `p`, items `K+1..=L` at `p - delta`.
pub fn gen_two_level(num_items: usize, list_size: usize, p: f64, delta: f64) -> Result<Instance> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInstance(format!("p = {p} must lie in [0, 1]")));
    }
    if delta.is_nan() || delta < 0.0 {
        return Err(Error::InvalidInstance(format!("delta = {delta} must be nonnegative")));
    }
    if p - delta < 0.0 {
        return Err(Error::InvalidInstance(format!("p - delta = {} must be >= 0", p - delta)));
    }
    let weights: Vec<f64> = (0..num_items).map(|e| if e < list_size { p } else { p - delta }).collect();
    Instance::from_weights(&weights, list_size)
}

/// `(epsilon, delta)` of the UCB1 hard instance: `1/(2K)` and
/// `sqrt(L / (chi n K))`.
pub fn theorem3_levels(num_items: usize, list_size: usize, n: u64, chi: f64) -> (f64, f64) {
    let k = list_size as f64;
    let epsilon = 1.0 / (2.0 * k);
    let delta = (num_items as f64 / (chi * n as f64 * k)).sqrt();
    (epsilon, delta)
}

/// The hard instance for CascadeUCB1: optimal items `1..=K` at `1/(2K)`,
/// the rest at `1/(2K) - sqrt(L / (chi n K))`.
pub fn gen_theorem3(num_items: usize, list_size: usize, n: u64, chi: f64) -> Result<Instance> {
    if list_size == 0 || list_size > num_items {
        return Err(Error::InvalidInstance(format!("K={list_size} must satisfy 1 <= K <= L={num_items}")));
    }
    if n == 0 {
        return Err(Error::InvalidInstance("n must be positive".into()));
    }
    if !(chi > 0.0 && chi.is_finite()) {
        return Err(Error::InvalidInstance(format!("chi = {chi} must be positive and finite")));
    }
    let (epsilon, delta) = theorem3_levels(num_items, list_size, n, chi);
    if epsilon < delta {
        return Err(Error::InvalidInstance(format!(
            "gap {delta} exceeds epsilon = 1/(2K) = {epsilon}; suboptimal weights would be negative (increase n or chi)"
        )));
    }
    let weights: Vec<f64> = (0..num_items).map(|e| if e < list_size { epsilon } else { epsilon - delta }).collect();
    Instance::from_weights(&weights, list_size)
}

/// Hypotheses of the UCB1 lower bound that `(L, K, n, chi)` fails. These are
/// reported, never enforced.
pub fn theorem3_hypothesis_warnings(num_items: usize, list_size: usize, n: u64, chi: f64) -> Vec<String> {
    let (l, k, n) = (num_items as u128, list_size as u128, n as u128);
    let mut warnings = Vec::new();
    if n < l * k {
        warnings.push(format!("n = {n} < L K = {}", l * k));
    }
    if n < 49 * k.pow(4) {
        warnings.push(format!("n = {n} < 49 K^4 = {}", 49 * k.pow(4)));
    }
    if l < 800 * k {
        warnings.push(format!("L = {l} < 800 K = {}", 800 * k));
    }
    if chi < 4.0 {
        warnings.push(format!("chi = {chi} < 4"));
    }
    warnings
}

/// The constant `1 / (log 200 ((1 - sqrt(5/6)) sqrt(9/2) - sqrt(1/32))^2)`
/// above which the UCB1 hard instance is certified.
pub fn theorem3_chi_constant() -> f64 {
    let margin = theorem3_chi_margin();
    1.0 / (200f64.ln() * margin * margin)
}

/// `(1 - sqrt(5/6)) sqrt(9/2) - sqrt(1/32)`, which must be positive.
pub fn theorem3_chi_margin() -> f64 {
    (1.0 - (5.0f64 / 6.0).sqrt()) * 4.5f64.sqrt() - (1.0f64 / 32.0).sqrt()
}

/// Parameters shared by every member of the lower-bound family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyShape {
    pub num_items: usize,
    pub list_size: usize,
    pub group_size: usize,
    pub epsilon: f64,
    pub delta: f64,
}

impl FamilyShape {
    pub fn new(num_items: usize, list_size: usize, n: u64) -> Result<Self> {
        if list_size == 0 || !num_items.is_multiple_of(list_size) {
            return Err(Error::InvalidInstance(format!("N = L/K must be an integer (L={num_items}, K={list_size})")));
        }
        let group_size = num_items / list_size;
        if group_size < 4 {
            return Err(Error::InvalidInstance(format!("N = L/K = {group_size} must be at least 4")));
        }
        if n < num_items as u64 {
            return Err(Error::InvalidInstance(format!("n = {n} must be at least L = {num_items}")));
        }
        let k = list_size as f64;
        let epsilon = 1.0 / (2.0 * k);
        let delta = (num_items as f64 / (4.0 * n as f64 * k * k)).sqrt();
        Ok(FamilyShape { num_items, list_size, group_size, epsilon, delta })
    }

    /// Number of members, `N^K` (saturating).
    pub fn size(&self) -> u128 {
        (self.group_size as u128).saturating_pow(self.list_size as u32)
    }

    /// 1-based ids of the lifted items, in group order.
    pub fn lifted_items(&self, m: &[usize]) -> Result<Vec<usize>> {
        if m.len() != self.list_size {
            return Err(Error::InvalidInstance(format!("m has {} entries, expected K = {}", m.len(), self.list_size)));
        }
        m.iter()
            .enumerate()
            .map(|(group, &choice)| {
                if (1..=self.group_size).contains(&choice) {
                    Ok(group * self.group_size + choice)
                } else {
                    Err(Error::InvalidInstance(format!(
                        "m({}) = {choice} outside [1, N = {}]",
                        group + 1,
                        self.group_size
                    )))
                }
            })
            .collect()
    }

    pub fn member(&self, m: &[usize]) -> Result<Instance> {
        let lifted = self.lifted_items(m)?;
        let base = self.epsilon / 2.0;
        let high = (self.epsilon + self.delta) / 2.0;
        let mut weights = vec![base; self.num_items];
        for id in lifted {
            weights[id - 1] = high;
        }
        Instance::from_weights(&weights, self.list_size)
    }

    fn decode(&self, mut code: u128) -> Vec<usize> {
        let n = self.group_size as u128;
        let mut m = vec![0; self.list_size];
        for slot in m.iter_mut().rev() {
            *slot = (code % n) as usize + 1;
            code /= n;
        }
        m
    }
}

/// Member `m` of the lower-bound family: weights `(eps + delta 1[e lifted]) / 2`
/// with `eps = 1/(2K)` and `delta = sqrt(L / (4 n K^2))`.
pub fn gen_lowerbound_member(num_items: usize, list_size: usize, n: u64, m: &[usize]) -> Result<Instance> {
    FamilyShape::new(num_items, list_size, n)?.member(m)
}

/// Seeded subset request for [`enumerate_family`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FamilySample {
    pub count: usize,
    pub seed: u64,
}

/// Every member `(m, instance)` of the lower-bound family in lexicographic
/// order of `m`, or a seeded subset of distinct members.
pub fn enumerate_family(
    num_items: usize,
    list_size: usize,
    n: u64,
    sample: Option<FamilySample>,
) -> Result<Vec<(Vec<usize>, Instance)>> {
    let shape = FamilyShape::new(num_items, list_size, n)?;
    let size = shape.size();
    let codes: Vec<u128> = match sample {
        None => {
            if size > FAMILY_ENUMERATION_LIMIT {
                return Err(Error::FamilyTooLarge { size, limit: FAMILY_ENUMERATION_LIMIT });
            }
            (0..size).collect()
        }
        Some(FamilySample { count, seed }) => {
            if count as u128 > size {
                return Err(Error::InvalidConfig(format!("cannot sample {count} distinct members from {size}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut codes: Vec<u128> = if size <= FAMILY_ENUMERATION_LIMIT {
                index::sample(&mut rng, size as usize, count).into_iter().map(|c| c as u128).collect()
            } else {
                let mut seen = BTreeSet::new();
                while seen.len() < count {
                    seen.insert(rng.random_range(0..size));
                }
                seen.into_iter().collect()
            };
            codes.sort_unstable();
            codes
        }
    };
    codes
        .into_iter()
        .map(|code| {
            let m = shape.decode(code);
            shape.member(&m).map(|instance| (m, instance))
        })
        .collect()
}
