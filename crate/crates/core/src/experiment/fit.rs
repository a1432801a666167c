use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Power law `y = exp(intercept) x^exponent` fitted by least squares on
/// `(log x, log y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

/// Ordinary least squares in log-log space. Needs at least two points with
/// distinct `x`, all coordinates positive.
pub fn fit_scaling(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 2 {
        return Err(Error::Fit(format!("need at least 2 points, got {}", points.len())));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::Fit(format!("point ({x}, {y}) is not strictly positive")));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("all x values are equal".into()));
    }
    let exponent = sxy / sxx;
    let intercept = mean_y - exponent * mean_x;
    let residual: f64 = logs.iter().map(|p| (p.1 - intercept - exponent * p.0).powi(2)).sum();
    // a constant response is fitted exactly by a zero slope
    let r_squared = if syy <= f64::EPSILON * n { 1.0 } else { (1.0 - residual / syy).clamp(0.0, 1.0) };
    Ok(ScalingFit { exponent, intercept, r_squared, points_used: points.len() })
}
