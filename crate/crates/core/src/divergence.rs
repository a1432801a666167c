//! Bernoulli KL-divergence and the two upper-confidence indices built on it.
//!
//! Everything here is a pure function of its arguments. Divergences are in
//! nats throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize)]
#[serde(transparent)]
#[repr(transparent)]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const ONE: Probability = Probability(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(Error::InvalidProbability(value))
        }
    }

    /// Clamps `value` into `[0, 1]`. NaN maps to 0.
    pub fn saturating(value: f64) -> Self {
        if value.is_nan() {
            Probability(0.0)
        } else {
            Probability(value.clamp(0.0, 1.0))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl<'de> Deserialize<'de> for Probability {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        Probability::new(value).map_err(serde::de::Error::custom)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Per-round exploration budget (nats) that is divided by an item's
/// observation count to obtain the KL-UCB confidence radius.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct ExplorationThreshold(f64);

impl ExplorationThreshold {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value >= 0.0 {
            Ok(ExplorationThreshold(value))
        } else {
            Err(Error::InvalidThreshold(value))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Which exploration function feeds the KL-UCB index.
///
/// The default `t (log t)^3` variant is the one used for every experiment.
/// `IteratedLog` evaluates the formula where `f(t)` itself is already a
/// logarithm, so the threshold becomes `log log (t (log t)^3)`; it is kept
/// only so the two readings can be compared side by side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    #[default]
    LogTLogCubed,
    LogT,
    IteratedLog,
}

impl ThresholdRule {
    pub fn threshold(self, round: f64) -> ExplorationThreshold {
        let raw = match self {
            ThresholdRule::LogTLogCubed => log_t_log_cubed(round),
            ThresholdRule::LogT => round.ln(),
            ThresholdRule::IteratedLog => log_t_log_cubed(round).ln(),
        };
        ExplorationThreshold(clamp_threshold(raw))
    }
}

fn log_t_log_cubed(t: f64) -> f64 {
    let log_t = t.ln();
    // log(t (log t)^3) = log t + 3 log log t, with log log t = -inf at t = 1
    if log_t <= 0.0 {
        f64::NEG_INFINITY
    } else {
        log_t + 3.0 * log_t.ln()
    }
}

fn clamp_threshold(raw: f64) -> f64 {
    if raw.is_nan() || raw <= 0.0 {
        0.0
    } else {
        raw
    }
}

/// `max(log(t (log t)^3), 0)` for an integer round.
pub fn exploration_threshold(round: u64) -> ExplorationThreshold {
    exploration_threshold_at(round as f64)
}

/// Real-valued form of [`exploration_threshold`].
pub fn exploration_threshold_at(round: f64) -> ExplorationThreshold {
    ThresholdRule::LogTLogCubed.threshold(round)
}

/// Bernoulli KL-divergence `d(p, q)` in nats.
///
/// Uses `0 log 0 = 0`; returns `+inf` exactly when `q` is 0 or 1 and `p != q`.
pub fn bernoulli_kl(p: Probability, q: Probability) -> f64 {
    kl(p.0, q.0)
}

#[inline]
pub(crate) fn kl(p: f64, q: f64) -> f64 {
    if p == q {
        return 0.0;
    }
    if q <= 0.0 || q >= 1.0 {
        return f64::INFINITY;
    }
    let mut total = 0.0;
    if p > 0.0 {
        total += p * (p / q).ln();
    }
    if p < 1.0 {
        total += (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
    }
    // rounding can push d below zero when p and q are adjacent floats
    total.max(0.0)
}

/// Absolute tolerance guaranteed on the returned index.
pub const KLUCB_TOLERANCE: f64 = 1e-9;
/// Iteration cap of the root finder.
pub const KLUCB_MAX_ITERATIONS: usize = 200;

/// KL-UCB index: the largest `u` in `[mean, 1]` with
/// `d(mean, u) <= threshold / count`.
///
/// `count == 0` gives 1. The root is found by Halley iteration in
/// `y = -log(1 - u)`, where `y -> d(mean, 1 - exp(-y))` is increasing and
/// convex, started from an upper bound on the root. Working in `y` keeps full resolution when the
/// root is within a few ulps of 1.
pub fn klucb_index(mean: Probability, count: u64, threshold: ExplorationThreshold) -> Probability {
    if count == 0 {
        return Probability::ONE;
    }
    Probability(klucb_upper(mean.0, threshold.0 / count as f64))
}

pub(crate) fn klucb_upper(mean: f64, radius: f64) -> f64 {
    if mean >= 1.0 {
        return 1.0;
    }
    if radius <= 0.0 {
        return mean;
    }
    if mean <= 0.0 {
        // d(0, u) = -log(1 - u)
        return -(-radius).exp_m1();
    }

    let log_mean = mean.ln();
    let log_one_minus_mean = (-mean).ln_1p();
    let y_floor = -log_one_minus_mean;
    // two upper bounds on the root: d >= (1 - mean)(y + log(1 - mean)) + mean log(mean),
    // and d(p, q) >= (q - p)^2 / (2q) for q > p
    let linear = (radius - mean * log_mean) / (1.0 - mean) + y_floor;
    let quadratic_u = mean + radius + (radius * (radius + 2.0 * mean)).sqrt();
    let mut y = if quadratic_u < 1.0 { linear.min(-(-quadratic_u).ln_1p()) } else { linear };

    // Halley steps on a convex increasing function, started right of the root
    for _ in 0..KLUCB_MAX_ITERATIONS {
        let (u, miss) = if y < 1.0 {
            let u = -(-y).exp_m1();
            (u, 1.0 - u)
        } else {
            let miss = (-y).exp();
            (1.0 - miss, miss)
        };
        let value = mean * (log_mean - u.ln()) + (1.0 - mean) * (log_one_minus_mean + y) - radius;
        let slope = (1.0 - mean) - mean * miss / u;
        let curvature = mean * miss / (u * u);
        if value <= 0.0 || slope <= 0.0 {
            break;
        }
        let next = (y - 2.0 * value * slope / (2.0 * slope * slope - value * curvature)).max(y_floor);
        let step = y - next;
        y = next;
        if step <= HALLEY_STEP_TOLERANCE * y {
            break;
        }
    }
    (-(-y).exp_m1()).clamp(mean, 1.0)
}

/// Derivative of `d(mean, .)` at `u`.
#[inline]
pub(crate) fn kl_slope(mean: f64, u: f64) -> f64 {
    (u - mean) / (u * (1.0 - u))
}

const HALLEY_STEP_TOLERANCE: f64 = 1e-8;

/// UCB1 index `min(mean + sqrt(scale * log(round) / count), 1)`; 1 when
/// `count == 0`.
pub fn ucb1_index(mean: Probability, count: u64, round: f64, scale: f64) -> Probability {
    if count == 0 {
        return Probability::ONE;
    }
    Probability(ucb1_upper(mean.0, count as f64, round.ln(), scale))
}

#[inline]
pub(crate) fn ucb1_upper(mean: f64, count: f64, log_round: f64, scale: f64) -> f64 {
    let width = (scale * log_round.max(0.0) / count).sqrt();
    (mean + width).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p(x: f64) -> Probability {
        Probability::new(x).unwrap()
    }

    #[test]
    fn probability_rejects_out_of_range() {
        assert!(Probability::new(-0.1).is_err());
        assert!(Probability::new(1.0 + 1e-12).is_err());
        assert!(Probability::new(f64::NAN).is_err());
        assert_eq!(Probability::saturating(2.0).value(), 1.0);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(bernoulli_kl(p(0.3), p(0.3)), 0.0);
        // mpmath, 40 digits
        assert_abs_diff_eq!(bernoulli_kl(p(0.0), p(0.5)), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(bernoulli_kl(p(0.25), p(0.5)), 0.130_812_035_941_136_96, epsilon = 1e-15);
    }

    #[test]
    fn kl_boundaries() {
        assert_eq!(bernoulli_kl(p(0.0), p(0.0)), 0.0);
        assert_eq!(bernoulli_kl(p(1.0), p(1.0)), 0.0);
        assert_eq!(bernoulli_kl(p(0.2), p(0.0)), f64::INFINITY);
        assert_eq!(bernoulli_kl(p(0.2), p(1.0)), f64::INFINITY);
        assert_eq!(bernoulli_kl(p(0.0), p(1.0)), f64::INFINITY);
        assert!(bernoulli_kl(p(1.0), p(0.5)).is_finite());
        assert!(bernoulli_kl(p(0.0), p(0.999)).is_finite());
    }

    #[test]
    fn klucb_examples() {
        assert_eq!(klucb_index(p(1.0), 5, exploration_threshold(1000)).value(), 1.0);
        assert_eq!(klucb_index(p(0.4), 3, ExplorationThreshold::new(0.0).unwrap()).value(), 0.4);
        let log2 = ExplorationThreshold::new(std::f64::consts::LN_2).unwrap();
        assert_abs_diff_eq!(klucb_index(p(0.0), 1, log2).value(), 0.5, epsilon = 1e-12);
        assert_eq!(klucb_index(p(0.3), 0, log2).value(), 1.0);
    }

    #[test]
    fn klucb_matches_reference_values() {
        // 30-digit bisection in mpmath
        let cases = [
            (0.1, 0.2, 0.378_391_548_847_894_14),
            (0.5, 0.2, 0.787_088_816_381_081_2),
            (0.9, 0.2, 0.994_489_489_379_310_5),
            (0.1, 0.9, 0.734_715_064_211_168_5),
        ];
        for (mean, radius, expected) in cases {
            assert_abs_diff_eq!(klucb_upper(mean, radius), expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn klucb_saturates_for_huge_radius() {
        assert_eq!(klucb_upper(0.5, 1e3), 1.0);
        let u = klucb_upper(0.5, 10.0);
        let expected_gap = (-(10.0 - 0.5 * 0.5f64.ln()) / 0.5 + 0.5f64.ln()).exp();
        assert!((1.0 - u - expected_gap).abs() < 1e-15, "{u}");
    }

    #[test]
    fn ucb1_examples() {
        assert_abs_diff_eq!(ucb1_index(p(0.2), 6, std::f64::consts::E, 1.5).value(), 0.7, epsilon = 1e-12);
        assert_eq!(ucb1_index(p(0.9), 1, 100.0, 1.5).value(), 1.0);
        assert_eq!(ucb1_index(p(0.5), 4, 1.0, 1.5).value(), 0.5);
        assert_eq!(ucb1_index(p(0.5), 0, 10.0, 1.5).value(), 1.0);
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(exploration_threshold(1).value(), 0.0);
        assert_eq!(exploration_threshold(2).value(), 0.0);
        let t = std::f64::consts::E.powf(std::f64::consts::E);
        assert_abs_diff_eq!(exploration_threshold_at(t).value(), std::f64::consts::E + 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(exploration_threshold(10).value(), 4.804_682_428_737_913, epsilon = 1e-12);
    }

    #[test]
    fn threshold_rules_differ() {
        let t = 1000.0;
        let main = ThresholdRule::LogTLogCubed.threshold(t).value();
        assert_abs_diff_eq!(ThresholdRule::LogT.threshold(t).value(), t.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ThresholdRule::IteratedLog.threshold(t).value(), main.ln(), epsilon = 1e-12);
        assert_eq!(ThresholdRule::IteratedLog.threshold(2.0).value(), 0.0);
    }

    proptest! {
        #[test]
        fn klucb_certificate(mean in 0.0f64..1.0, count in 1u64..10_000, theta in 1e-6f64..25.0) {
            let u = klucb_index(p(mean), count, ExplorationThreshold::new(theta).unwrap()).value();
            prop_assert!(u >= mean && u <= 1.0);
            let radius = theta / count as f64;
            if u < 1.0 - 1e-6 {
                prop_assert!((kl(mean, u) - radius).abs() <= 1e-8, "mean={mean} u={u} d={} r={radius}", kl(mean, u));
            }
        }

        #[test]
        fn klucb_monotone(mean in 0.0f64..1.0, count in 1u64..1000, a in 0.0f64..20.0, b in 0.0f64..20.0) {
            let (small, large) = if a <= b { (a, b) } else { (b, a) };
            let t = |x| ExplorationThreshold::new(x).unwrap();
            let lo = klucb_index(p(mean), count, t(small)).value();
            let hi = klucb_index(p(mean), count, t(large)).value();
            prop_assert!(lo <= hi + 1e-12);
            let fewer = klucb_index(p(mean), count, t(large)).value();
            let more = klucb_index(p(mean), count + 1, t(large)).value();
            prop_assert!(more <= fewer + 1e-12);
        }

        #[test]
        fn indices_lie_between_mean_and_one(mean in 0.0f64..=1.0, count in 0u64..500, round in 1u64..1_000_000) {
            let k = klucb_index(p(mean), count, exploration_threshold(round)).value();
            let u = ucb1_index(p(mean), count, round as f64, 1.5).value();
            prop_assert!(k >= mean && k <= 1.0);
            prop_assert!(u >= mean && u <= 1.0);
        }
    }
}
