//! Communication grids for the finite-arm policy and the dyadic diameter
//! schedule for the Lipschitz policy.
//!
//! All logarithms are natural. Grid points are floored (values within a
//! relative 1e-9 of an integer snap onto it), deduplicated, and the final
//! point is pinned to the horizon.

use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use crate::error::{invalid, Result};
use crate::estimators::HeavyTailSpec;
use crate::util::snap_floor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Minimax,
    Geometric,
    Explicit,
}

/// Strictly increasing time points `0 = t_0 < t_1 < … < t_M = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub kind: GridKind,
    pub horizon: u64,
    /// Batch count asked for; may exceed [`Grid::batches`] after deduplication.
    pub requested_batches: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub points: Vec<u64>,
}

impl Grid {
    /// Grid from user-supplied points, which must already satisfy the invariants.
    pub fn explicit(points: Vec<u64>) -> Result<Self> {
        let grid = Self {
            kind: GridKind::Explicit,
            horizon: points.last().copied().unwrap_or(0),
            requested_batches: points.len().saturating_sub(1),
            epsilon: None,
            points,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 || self.points[0] != 0 {
            return Err(invalid("grid", "must start at 0 and contain at least one batch"));
        }
        if self.points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("grid", "points must be strictly increasing"));
        }
        if *self.points.last().unwrap() != self.horizon {
            return Err(invalid("grid", "final point must equal the horizon"));
        }
        Ok(())
    }

    /// Effective number of batches `M`.
    pub fn batches(&self) -> usize {
        self.points.len() - 1
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    /// `(t_{m-1}, t_m)` for `m = 1..=M`.
    pub fn batch_bounds(&self, m: usize) -> (u64, u64) {
        (self.points[m - 1], self.points[m])
    }
}

fn check_horizon_batches(horizon: u64, batches: usize) -> Result<()> {
    if horizon < 2 {
        return Err(invalid("T", format!("{horizon} < 2")));
    }
    if batches < 1 || batches as u64 > horizon {
        return Err(invalid("M", format!("{batches} not in 1..={horizon}")));
    }
    Ok(())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon <= 1.0 {
        Ok(())
    } else {
        Err(invalid("epsilon", format!("{epsilon} not in (0, 1]")))
    }
}

fn assemble(raw: &[f64], horizon: u64) -> Vec<u64> {
    let mut points = vec![0u64];
    for &x in &raw[..raw.len() - 1] {
        let p = snap_floor(x) as u64;
        if p > *points.last().unwrap() && p < horizon {
            points.push(p);
        }
    }
    points.push(horizon);
    points
}

/// Exponent `1 + ε - ε (ε/(1+ε))^{m-1}`.
fn minimax_exponent(m: usize, epsilon: f64) -> f64 {
    1.0 + epsilon - epsilon * (epsilon / (1.0 + epsilon)).powi(m as i32 - 1)
}

/// Base scaling factor `l = T^{1 / (1 + ε - ε (ε/(1+ε))^{M-1})}`.
pub fn minimax_base(horizon: u64, batches: usize, epsilon: f64) -> f64 {
    (horizon as f64).powf(1.0 / minimax_exponent(batches, epsilon))
}

/// Unrounded `t_1 … t_M` by the recursion `t_m = l · t_{m-1}^{ε/(1+ε)}`.
pub fn minimax_points_recursive(horizon: u64, batches: usize, epsilon: f64) -> Vec<f64> {
    let l = minimax_base(horizon, batches, epsilon);
    let p = epsilon / (1.0 + epsilon);
    let mut out = Vec::with_capacity(batches);
    let mut t = l;
    out.push(t);
    for _ in 2..=batches {
        t = l * t.powf(p);
        out.push(t);
    }
    out
}

/// Unrounded `t_m = l^{1 + ε - ε (ε/(1+ε))^{m-1}}`.
pub fn minimax_point_closed_form(horizon: u64, batches: usize, epsilon: f64, m: usize) -> f64 {
    minimax_base(horizon, batches, epsilon).powf(minimax_exponent(m, epsilon))
}

/// The minimax grid used for instance-independent regret.
pub fn static_minimax_grid(horizon: u64, batches: usize, epsilon: f64) -> Result<Grid> {
    check_horizon_batches(horizon, batches)?;
    check_epsilon(epsilon)?;
    let raw = minimax_points_recursive(horizon, batches, epsilon);
    Ok(Grid {
        kind: GridKind::Minimax,
        horizon,
        requested_batches: batches,
        epsilon: Some(epsilon),
        points: assemble(&raw, horizon),
    })
}

/// The geometric grid `t_m = T^{m/M}` used for instance-dependent regret.
pub fn static_geometric_grid(horizon: u64, batches: usize) -> Result<Grid> {
    check_horizon_batches(horizon, batches)?;
    let tf = horizon as f64;
    let raw: Vec<f64> = (1..=batches)
        .map(|m| tf.powf(m as f64 / batches as f64))
        .collect();
    Ok(Grid {
        kind: GridKind::Geometric,
        horizon,
        requested_batches: batches,
        epsilon: None,
        points: assemble(&raw, horizon),
    })
}

/// Order-level batch budget `ceil(ln ln T / ln((1+ε)/ε)) + 1` at which the
/// minimax grid reaches the fully sequential exponent.
///
/// Takes a real horizon; requires `T > e` so that `ln ln T > 0`.
pub fn min_batches_minimax(horizon: f64, epsilon: f64) -> Result<usize> {
    check_epsilon(epsilon)?;
    if !(horizon > std::f64::consts::E) {
        return Err(invalid("T", format!("{horizon} must exceed e")));
    }
    let x = horizon.ln().ln() / ((1.0 + epsilon) / epsilon).ln();
    Ok(x.ceil() as usize + 1)
}

fn check_dims(d: usize, d_z: f64) -> Result<()> {
    if d < 1 {
        return Err(invalid("d", "ambient dimension must be at least 1"));
    }
    if !(d_z >= 0.0 && d_z <= d as f64) {
        return Err(invalid("d_z", format!("{d_z} not in [0, {d}]")));
    }
    Ok(())
}

/// `η = (d + 1 - d_z) / (d + 1 + 1/ε)`.
pub fn diameter_ratio(d: usize, d_z: f64, epsilon: f64) -> f64 {
    (d as f64 + 1.0 - d_z) / (d as f64 + 1.0 + 1.0 / epsilon)
}

/// Batch count `ceil(ln ln(T / ln T) / ln((d+1+1/ε)/(d+1-d_z)) + 1)`, at least 1.
pub fn default_lipschitz_batches(horizon: f64, d: usize, d_z: f64, epsilon: f64) -> Result<usize> {
    check_dims(d, d_z)?;
    check_epsilon(epsilon)?;
    if !(horizon > 1.0) {
        return Err(invalid("T", format!("{horizon} must exceed 1")));
    }
    let inner = (horizon / horizon.ln()).ln();
    if !(inner > 0.0) {
        return Ok(1);
    }
    let x = inner.ln() / (1.0 / diameter_ratio(d, d_z, epsilon)).ln() + 1.0;
    Ok((x.ceil() as usize).max(1))
}

/// Dyadic edge lengths `r_1 > … > r_{M+1}` with per-cube sample budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiameterSchedule {
    pub horizon: u64,
    pub d: usize,
    pub d_z: f64,
    pub epsilon: f64,
    pub batches: usize,
    pub c1: f64,
    pub eta: f64,
    /// `r_m = 2^{-levels[m]}`.
    pub levels: Vec<u32>,
    pub r: Vec<f64>,
    pub n: Vec<u64>,
}

impl DiameterSchedule {
    /// Partition factor `r_m / r_{m+1}` (0-based `m`).
    pub fn factor(&self, m: usize) -> u64 {
        1u64 << (self.levels[m + 1] - self.levels[m])
    }

    /// Upper bound on total pulls if no cube were ever eliminated.
    pub fn planned_pull_bound(&self) -> f64 {
        self.levels
            .iter()
            .zip(&self.n)
            .map(|(&l, &n)| 2f64.powi((l as usize * self.d) as i32) * n as f64)
            .sum()
    }
}

/// Builds the diameter schedule: `c_1 = (d_z + 1/ε) / ((d+1+1/ε)(d_z+1+1/ε)) · ln(T / ln T)`,
/// `c_{i+1} = η c_i`, `r_m = 2^{-round(Σ_{i≤m} c_i / ln 2)}` forced strictly
/// decreasing, and `n_m = ceil(3 c v^{1/ε} ln T · r_m^{-(1+ε)/ε})`.
pub fn diameter_schedule(
    horizon: u64,
    d: usize,
    d_z: f64,
    epsilon: f64,
    batches: usize,
    spec: &HeavyTailSpec,
) -> Result<DiameterSchedule> {
    check_dims(d, d_z)?;
    check_epsilon(epsilon)?;
    spec.validate()?;
    if batches < 1 {
        return Err(invalid("M", "need at least one batch"));
    }
    if horizon < 16 {
        return Err(invalid("T", format!("{horizon} < 16")));
    }
    let tf = horizon as f64;
    let inv_eps = 1.0 / epsilon;
    let df = d as f64;
    let c1 = (d_z + inv_eps) / ((df + 1.0 + inv_eps) * (d_z + 1.0 + inv_eps)) * (tf / tf.ln()).ln();
    let eta = diameter_ratio(d, d_z, epsilon);

    let mut levels: Vec<u32> = Vec::with_capacity(batches + 1);
    let mut c = c1;
    let mut cumulative = 0.0;
    for _ in 0..=batches {
        cumulative += c;
        c *= eta;
        let rounded = (cumulative / LN_2).round().max(0.0) as u32;
        let level = match levels.last() {
            Some(&prev) => rounded.max(prev + 1),
            None => rounded,
        };
        levels.push(level);
    }
    let r: Vec<f64> = levels.iter().map(|&l| 2f64.powi(-(l as i32))).collect();
    let base = 3.0 * spec.c * spec.v.powf(inv_eps) * tf.ln();
    let n = r
        .iter()
        .map(|&rm| {
            let x = base * rm.powf(-(1.0 + epsilon) / epsilon);
            ((x - 1e-9 * x).ceil() as u64).max(1)
        })
        .collect();
    Ok(DiameterSchedule {
        horizon,
        d,
        d_z,
        epsilon,
        batches,
        c1,
        eta,
        levels,
        r,
        n,
    })
}
