//! Numerical certificates for the inequalities the regret analysis leans on:
//! the KL-divergence bounds, the product bound, the choice of `chi` for the
//! UCB1 hard instance, and the tail sum of the failure probabilities.
//!
//! Each check scans a grid (or a seeded random sample), records the worst
//! slack, and passes when that slack clears the tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::divergence::kl;
use crate::error::{Error, Result};
use crate::instances::theorem3_chi_constant;

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimCheck {
    pub name: String,
    pub passed: bool,
    /// Smallest `lhs - rhs` found (relative for the tail sum).
    pub worst_slack: f64,
    pub evaluations: u64,
    pub detail: String,
}

/// Knobs of the suite. `kl_lower_constant` exists so the suite can be
/// mutation-tested; anything below about 1.84 breaks the lower bound on the
/// default grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub grid: usize,
    pub tolerance: f64,
    pub kl_lower_constant: f64,
    pub product_samples: usize,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { grid: 200, tolerance: 1e-12, kl_lower_constant: 12.0, product_samples: 100_000, seed: 0 }
    }
}

/// Interior grid `i / (size + 1)`, `i = 1..=size`.
pub fn interior_grid(size: usize) -> Vec<f64> {
    (1..=size).map(|i| i as f64 / (size + 1) as f64).collect()
}

#[derive(Debug)]
struct Scan {
    worst: f64,
    at: String,
    count: u64,
}

impl Scan {
    fn new() -> Self {
        Scan { worst: f64::INFINITY, at: String::new(), count: 0 }
    }

    fn record(&mut self, slack: f64, at: impl FnOnce() -> String) {
        self.count += 1;
        if slack < self.worst || slack.is_nan() {
            self.worst = if slack.is_nan() { f64::NEG_INFINITY } else { slack };
            self.at = at();
        }
    }

    fn finish(self, name: &str, tolerance: f64) -> ClaimCheck {
        ClaimCheck {
            name: name.to_string(),
            passed: self.worst >= -tolerance,
            worst_slack: self.worst,
            evaluations: self.count,
            detail: format!("worst at {}", self.at),
        }
    }
}

fn kl_table(grid: &[f64]) -> Vec<Vec<f64>> {
    grid.iter().map(|&p| grid.iter().map(|&q| kl(p, q)).collect()).collect()
}

/// `d(p, q) >= 0`, with `d(p, p) = 0` and `d(p, q) > 0` off the diagonal.
pub fn check_kl_nonnegative(grid: &[f64], tolerance: f64) -> ClaimCheck {
    let mut scan = Scan::new();
    let mut diagonal_ok = true;
    for &p in grid {
        for &q in grid {
            let d = kl(p, q);
            if p == q {
                diagonal_ok &= d == 0.0;
                scan.count += 1;
            } else {
                scan.record(d, || format!("p={p}, q={q}"));
            }
        }
    }
    let mut check = scan.finish("kl_nonnegative", tolerance);
    check.passed = diagonal_ok && check.worst_slack > 0.0;
    check
}

/// `d(p, .)` is convex: `d(p, lq1 + (1-l)q2) <= l d(p,q1) + (1-l) d(p,q2)`.
pub fn check_kl_convexity(grid: &[f64], tolerance: f64) -> ClaimCheck {
    let table = kl_table(grid);
    let mut scan = Scan::new();
    for (i, &p) in grid.iter().enumerate() {
        for a in 0..grid.len() {
            for b in a + 1..grid.len() {
                for lambda in [0.25, 0.5, 0.75] {
                    let mid = lambda * grid[a] + (1.0 - lambda) * grid[b];
                    let chord = lambda * table[i][a] + (1.0 - lambda) * table[i][b];
                    scan.record(chord - kl(p, mid), || {
                        format!("p={p}, q1={}, q2={}, lambda={lambda}", grid[a], grid[b])
                    });
                }
            }
        }
    }
    scan.finish("kl_convexity", tolerance)
}

/// Pinsker: `d(p, q) >= 2 (q - p)^2`.
pub fn check_pinsker(grid: &[f64], tolerance: f64) -> ClaimCheck {
    let mut scan = Scan::new();
    for &p in grid {
        for &q in grid {
            scan.record(kl(p, q) - 2.0 * (q - p).powi(2), || format!("p={p}, q={q}"));
        }
    }
    scan.finish("pinsker", tolerance)
}

/// `d(p, r) >= d(p, q) + d(q, r)` for `p < q < r`.
pub fn check_kl_chain(grid: &[f64], tolerance: f64) -> ClaimCheck {
    let table = kl_table(grid);
    let mut scan = Scan::new();
    for i in 0..grid.len() {
        for j in i + 1..grid.len() {
            for k in j + 1..grid.len() {
                let slack = table[i][k] - table[i][j] - table[j][k];
                scan.record(slack, || format!("p={}, q={}, r={}", grid[i], grid[j], grid[k]));
            }
        }
    }
    scan.finish("kl_chain", tolerance)
}

/// `d(p, q) > (q - p)^2 / (c q)` for `0 < p < q < 1`; the stated constant is
/// `c = 12`.
pub fn check_kl_lower_bound(grid: &[f64], constant: f64, tolerance: f64) -> ClaimCheck {
    let mut scan = Scan::new();
    for &p in grid {
        for &q in grid.iter().filter(|&&q| q > p) {
            scan.record(kl(p, q) - (q - p).powi(2) / (constant * q), || format!("p={p}, q={q}"));
        }
    }
    let mut check = scan.finish("kl_lower_bound", tolerance);
    check.detail = format!("constant {constant}; {}", check.detail);
    check
}

/// `d(p, q) <= (p - q)^2 / (q (1 - q))`.
pub fn check_kl_upper_bound(grid: &[f64], tolerance: f64) -> ClaimCheck {
    let mut scan = Scan::new();
    for &p in grid {
        for &q in grid {
            scan.record((p - q).powi(2) / (q * (1.0 - q)) - kl(p, q), || format!("p={p}, q={q}"));
        }
    }
    scan.finish("kl_upper_bound", tolerance)
}

/// `(q - p) / d(p, q) >= (r - p) / d(p, r)` for `0 < p < q < r < 1`, checked
/// in the cross-multiplied form `(q - p) d(p, r) >= (r - p) d(p, q)`.
pub fn check_kl_ratio(grid: &[f64], tolerance: f64) -> ClaimCheck {
    let table = kl_table(grid);
    let mut scan = Scan::new();
    for i in 0..grid.len() {
        for j in i + 1..grid.len() {
            for k in j + 1..grid.len() {
                let (p, q, r) = (grid[i], grid[j], grid[k]);
                let slack = (q - p) * table[i][k] - (r - p) * table[i][j];
                scan.record(slack, || format!("p={p}, q={q}, r={r}"));
            }
        }
    }
    scan.finish("kl_ratio_monotone", tolerance)
}

/// `prod x - prod y >= delta^(K-1) sum (x - y)` whenever
/// `x_k >= y_k >= delta`, on random vectors with `K` up to 20.
pub fn check_product_bound(samples: usize, seed: u64, tolerance: f64) -> ClaimCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scan = Scan::new();
    for _ in 0..samples {
        let k = rng.random_range(1..=20usize);
        let delta: f64 = rng.random_range(1e-6..1.0);
        let mut xs = Vec::with_capacity(k);
        let mut ys = Vec::with_capacity(k);
        for _ in 0..k {
            let y = rng.random_range(delta..1.0);
            let x = if rng.random_bool(0.1) { y } else { rng.random_range(y..1.0) };
            xs.push(x);
            ys.push(y);
        }
        let gap = xs.iter().product::<f64>() - ys.iter().product::<f64>();
        let sum: f64 = xs.iter().zip(&ys).map(|(x, y)| x - y).sum();
        scan.record(gap - delta.powi(k as i32 - 1) * sum, || format!("K={k}, delta={delta}"));
    }
    scan.finish("product_bound", tolerance)
}

/// `c_{t,s} = sqrt(1.5 log t / s)`.
pub fn ucb1_width(t: f64, s: f64) -> f64 {
    (1.5 * t.ln() / s).sqrt()
}

/// Result of [`check_chi_constant`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiCheck {
    pub passed: bool,
    pub min_slack: f64,
    /// `(t, s)` where the slack is smallest.
    pub worst_point: (u64, u64),
    /// Smallest `chi` for which the inequality holds on the grid.
    pub empirical_threshold: f64,
    pub points: usize,
}

fn spread(lo: u64, hi: u64, count: usize) -> Vec<u64> {
    let mut values: Vec<u64> =
        (0..count).map(|i| lo + ((hi - lo) as f64 * i as f64 / (count - 1) as f64).round() as u64).collect();
    values.dedup();
    values
}

/// Checks `(1 - sqrt(5/6)) c_{t,s} - 2 c_{t, ceil(n/4)-1} > sqrt(L / (chi n K))`
/// on a 20x20 grid of `t` in `[ceil(n/4), n]` and `s` in `[1, floor(nK/(3L))]`.
/// Requires `n >= L K` and `L >= 800 K`.
pub fn check_chi_constant(n: u64, list_size: usize, num_items: usize, chi: f64) -> Result<ChiCheck> {
    let (l, k) = (num_items as u64, list_size as u64);
    if k == 0 || n < l * k || l < 800 * k {
        return Err(Error::Hypothesis(format!("need n >= L K and L >= 800 K (n={n}, L={l}, K={k})")));
    }
    let quarter = n.div_ceil(4);
    let s_max = (n * k) / (3 * l);
    if s_max == 0 {
        return Err(Error::Hypothesis(format!("floor(nK / 3L) = 0 for n={n}, L={l}, K={k}")));
    }
    let rhs = (num_items as f64 / (chi * n as f64 * list_size as f64)).sqrt();
    let shrink = 1.0 - (5.0f64 / 6.0).sqrt();
    let mut min_lhs = f64::INFINITY;
    let mut worst_point = (quarter, 1);
    let mut points = 0;
    for t in spread(quarter, n, 20) {
        for s in spread(1, s_max, 20) {
            let lhs = shrink * ucb1_width(t as f64, s as f64) - 2.0 * ucb1_width(t as f64, (quarter - 1) as f64);
            points += 1;
            if lhs < min_lhs {
                min_lhs = lhs;
                worst_point = (t, s);
            }
        }
    }
    let min_slack = min_lhs - rhs;
    let empirical_threshold = if min_lhs > 0.0 {
        num_items as f64 / (n as f64 * list_size as f64 * min_lhs * min_lhs)
    } else {
        f64::INFINITY
    };
    Ok(ChiCheck { passed: min_slack > 0.0, min_slack, worst_point, empirical_threshold, points })
}

/// Last term summed explicitly by [`check_tail_sum`].
pub const TAIL_SUM_CUTOFF: u64 = 10_000_000;

/// Result of [`check_tail_sum`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailSumCheck {
    pub passed: bool,
    /// Upper estimate of the series: partial sum plus integral remainder.
    pub total: f64,
    pub bound: f64,
    /// `1 - total / bound`.
    pub relative_slack: f64,
}

/// `sum_{t >= ceil(n/4)} (t^-3 + t^-5/2) <= 10 n^-3/2`, with the series
/// summed to [`TAIL_SUM_CUTOFF`] and the rest bounded by its integral.
pub fn check_tail_sum(n: u64) -> Result<TailSumCheck> {
    if n < 800 {
        return Err(Error::Hypothesis(format!("tail-sum bound needs n >= 800, got {n}")));
    }
    let start = n.div_ceil(4);
    // smallest terms first
    let partial: f64 = (start..=TAIL_SUM_CUTOFF.max(start))
        .rev()
        .map(|t| {
            let t = t as f64;
            1.0 / (t * t * t) + 1.0 / (t * t * t.sqrt())
        })
        .sum();
    let m = TAIL_SUM_CUTOFF.max(start) as f64;
    let remainder = m.powi(-2) / 2.0 + m.powf(-1.5) / 1.5;
    let total = partial + remainder;
    let bound = 10.0 * (n as f64).powf(-1.5);
    Ok(TailSumCheck { passed: total <= bound, total, bound, relative_slack: 1.0 - total / bound })
}

/// Horizons at which the tail sum is certified.
pub const TAIL_SUM_HORIZONS: [u64; 3] = [800, 10_000, 1_000_000];

/// The full suite, in a fixed order.
pub fn run_suite(options: &SuiteOptions) -> Vec<ClaimCheck> {
    let grid = interior_grid(options.grid);
    let tol = options.tolerance;
    let mut checks = vec![
        check_kl_nonnegative(&grid, tol),
        check_kl_convexity(&grid, tol),
        check_pinsker(&grid, tol),
        check_kl_chain(&grid, tol),
        check_kl_lower_bound(&grid, options.kl_lower_constant, tol),
        check_kl_upper_bound(&grid, tol),
        check_kl_ratio(&grid, tol),
        check_product_bound(options.product_samples, options.seed, tol),
    ];

    let margin = crate::instances::theorem3_chi_margin();
    checks.push(ClaimCheck {
        name: "chi_margin_positive".into(),
        passed: margin > 0.0,
        worst_slack: margin,
        evaluations: 1,
        detail: format!("(1 - sqrt(5/6)) sqrt(9/2) - sqrt(1/32) = {margin:e}"),
    });

    let chi = theorem3_chi_constant();
    checks.push(match check_chi_constant(3200, 2, 1600, chi) {
        Ok(c) => ClaimCheck {
            name: "chi_constant".into(),
            passed: c.passed,
            worst_slack: c.min_slack,
            evaluations: c.points as u64,
            detail: format!(
                "chi={chi:.6} at n=3200 K=2 L=1600; worst (t, s)={:?}; grid threshold {:.6}",
                c.worst_point, c.empirical_threshold
            ),
        },
        Err(e) => failed("chi_constant", e),
    });

    for n in TAIL_SUM_HORIZONS {
        let name = format!("tail_sum_n{n}");
        checks.push(match check_tail_sum(n) {
            Ok(c) => ClaimCheck {
                name,
                passed: c.passed,
                worst_slack: c.relative_slack,
                evaluations: TAIL_SUM_CUTOFF - n.div_ceil(4) + 1,
                detail: format!("sum {:e} vs bound {:e}", c.total, c.bound),
            },
            Err(e) => failed(&name, e),
        });
    }
    checks
}

fn failed(name: &str, error: Error) -> ClaimCheck {
    ClaimCheck {
        name: name.into(),
        passed: false,
        worst_slack: f64::NEG_INFINITY,
        evaluations: 0,
        detail: error.to_string(),
    }
}
