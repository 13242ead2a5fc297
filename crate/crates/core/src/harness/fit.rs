use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Least-squares line `y ≈ intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares over `(x, y)` pairs. A perfectly flat `y` has
/// `r² = 1`.
pub fn ols(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(invalid("points", "need at least two points"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(invalid("points", "x values are all equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).min(1.0)
    } else {
        1.0
    };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Fits `ln regret = intercept + slope ln T`.
pub fn fit_scaling_exponent(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 3 {
        return Err(invalid("points", format!("need at least 3 points, got {}", points.len())));
    }
    for (i, &(t, r)) in points.iter().enumerate() {
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid("T", format!("point {i}: T = {t} must be positive")));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(invalid("regret", format!("point {i}: regret {r} must be positive")));
        }
        if points[..i].iter().any(|p| p.0 == t) {
            return Err(invalid("T", format!("point {i}: duplicate T = {t}")));
        }
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(t, r)| (t.ln(), r.ln())).collect();
    ols(&logs)
}
