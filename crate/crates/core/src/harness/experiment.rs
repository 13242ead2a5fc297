use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::estimators::HeavyTailSpec;
use crate::finite_arm::run_base_h_with;
use crate::grids::{
    default_lipschitz_batches, diameter_schedule, static_geometric_grid, static_minimax_grid,
    DiameterSchedule, Grid,
};
use crate::harness::{RegretTrace, SimOptions};
use crate::lipschitz::{run_blin_h_with, LipschitzInstance};
use crate::rewards::FiniteArmInstance;
use crate::util::mix64;

/// Maximum number of points kept in an averaged regret curve.
pub const CURVE_POINTS: usize = 1024;

/// Communication grid for BaSE-H.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    Minimax { batches: usize },
    Geometric { batches: usize },
    Explicit { points: Vec<u64> },
}

impl GridSpec {
    pub fn build(&self, horizon: u64, epsilon: f64) -> Result<Grid> {
        let grid = match self {
            Self::Minimax { batches } => static_minimax_grid(horizon, *batches, epsilon)?,
            Self::Geometric { batches } => static_geometric_grid(horizon, *batches)?,
            Self::Explicit { points } => Grid::explicit(points.clone())?,
        };
        if grid.horizon() != horizon {
            return Err(invalid(
                "grid",
                format!("grid ends at {} but the horizon is {horizon}", grid.horizon()),
            ));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum PolicySpec {
    BaseH {
        grid: GridSpec,
    },
    /// Unset fields default to the instance's analytic zooming dimension and
    /// the matching batch count.
    BlinH {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        batches: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        zooming_dim: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InstanceSpec {
    Finite(FiniteArmInstance),
    Lipschitz(LipschitzInstance),
}

fn yes() -> bool {
    true
}

/// A complete, reproducible experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub policy: PolicySpec,
    pub instance: InstanceSpec,
    pub horizon: u64,
    pub spec: HeavyTailSpec,
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Keep an averaged cumulative-regret curve.
    #[serde(default)]
    pub curve: bool,
    /// Reject instances whose moments exceed `spec.v`.
    #[serde(default = "yes")]
    pub certify: bool,
}

/// What a replication actually runs.
#[derive(Debug, Clone)]
pub enum Prepared {
    Finite {
        instance: FiniteArmInstance,
        grid: Grid,
    },
    Lipschitz {
        instance: LipschitzInstance,
        schedule: DiameterSchedule,
    },
}

impl ExperimentConfig {
    /// Hex SHA-256 of the config's JSON encoding.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Validates the config and builds the grid or schedule.
    pub fn prepare(&self) -> Result<Prepared> {
        self.spec.validate()?;
        if self.replications < 1 {
            return Err(invalid("replications", "need at least one replication"));
        }
        match (&self.policy, &self.instance) {
            (PolicySpec::BaseH { grid }, InstanceSpec::Finite(instance)) => {
                if self.certify {
                    instance.certify(&self.spec)?;
                }
                let grid = grid.build(self.horizon, self.spec.epsilon)?;
                Ok(Prepared::Finite {
                    instance: instance.clone(),
                    grid,
                })
            }
            (
                PolicySpec::BlinH {
                    batches,
                    zooming_dim,
                },
                InstanceSpec::Lipschitz(instance),
            ) => {
                if self.certify {
                    instance.certify(&self.spec)?;
                }
                let d = instance.dim();
                let d_z = zooming_dim.unwrap_or_else(|| instance.d_z_analytic());
                let eps = self.spec.epsilon;
                let m = match batches {
                    Some(m) => *m,
                    None => default_lipschitz_batches(self.horizon as f64, d, d_z, eps)?,
                };
                let schedule = diameter_schedule(self.horizon, d, d_z, eps, m, &self.spec)?;
                Ok(Prepared::Lipschitz {
                    instance: instance.clone(),
                    schedule,
                })
            }
            _ => Err(invalid(
                "policy",
                "base_h needs a finite instance and blin_h a lipschitz one",
            )),
        }
    }

    pub fn seed(&self, replication: usize) -> u64 {
        self.base_seed.wrapping_add(replication as u64)
    }
}

impl Prepared {
    pub fn horizon(&self) -> u64 {
        match self {
            Self::Finite { grid, .. } => grid.horizon(),
            Self::Lipschitz { schedule, .. } => schedule.horizon,
        }
    }

    /// Final regret and, if asked, the cumulative regret at `curve_times`.
    pub fn run(
        &self,
        spec: &HeavyTailSpec,
        seed: u64,
        curve_times: Option<&[u64]>,
    ) -> Result<(f64, Option<Vec<f64>>)> {
        let opts = SimOptions::default();
        match self {
            Self::Finite { instance, grid } => {
                let (tr, _) = run_base_h_with(instance, grid, spec, seed, &opts)?;
                Ok(summarize(&tr, curve_times))
            }
            Self::Lipschitz { instance, schedule } => {
                let run = run_blin_h_with(instance, schedule, spec, seed, &opts)?;
                Ok(summarize(&run.trace, curve_times))
            }
        }
    }
}

fn summarize<A>(tr: &RegretTrace<A>, curve_times: Option<&[u64]>) -> (f64, Option<Vec<f64>>) {
    let curve = curve_times.map(|times| {
        let cum = tr.cumulative();
        times.iter().map(|&t| cum[t as usize - 1]).collect()
    });
    (tr.cumulative_final, curve)
}

/// Seed for item `index` of a family of runs sharing `seed`. Depends only
/// on the pair, so adding items never changes earlier ones.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index))
}

/// At most [`CURVE_POINTS`] evenly spread times in `1..=horizon`, ending at `horizon`.
pub fn curve_times(horizon: u64) -> Vec<u64> {
    let k = CURVE_POINTS as u64;
    if horizon <= k {
        return (1..=horizon).collect();
    }
    (1..=k)
        .map(|i| ((i as u128 * horizon as u128) / k as u128) as u64)
        .collect()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySamples);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            mean,
            std,
            q05: quantile(&sorted, 0.05),
            q50: quantile(&sorted, 0.5),
            q95: quantile(&sorted, 0.95),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: u64,
    pub mean_cum_regret: f64,
    pub p5: f64,
    pub p95: f64,
}

/// Aggregated outcome of [`replicate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub final_regrets: Vec<f64>,
    pub stats: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<Vec<CurvePoint>>,
}

impl RunRecord {
    pub fn new(
        config_hash: String,
        seeds: Vec<u64>,
        final_regrets: Vec<f64>,
        curve: Option<Vec<CurvePoint>>,
    ) -> Result<Self> {
        if seeds.len() != final_regrets.len() {
            return Err(invalid("seeds", "one seed per final regret"));
        }
        let stats = Summary::of(&final_regrets)?;
        Ok(Self {
            config_hash,
            seeds,
            final_regrets,
            stats,
            curve,
        })
    }
}

fn average_curves(times: &[u64], curves: &[Vec<f64>]) -> Vec<CurvePoint> {
    let n = curves.len() as f64;
    times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut col: Vec<f64> = curves.iter().map(|c| c[i]).collect();
            let mean = col.iter().sum::<f64>() / n;
            col.sort_by(f64::total_cmp);
            CurvePoint {
                t,
                mean_cum_regret: mean,
                p5: quantile(&col, 0.05),
                p95: quantile(&col, 0.95),
            }
        })
        .collect()
}

/// Runs every replication of `config` on `jobs` worker threads (0 picks a
/// default). Results are joined in replication order, so the record does
/// not depend on `jobs`.
pub fn replicate(config: &ExperimentConfig, jobs: usize) -> Result<RunRecord> {
    let prepared = config.prepare()?;
    let times = config.curve.then(|| curve_times(prepared.horizon()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| invalid("jobs", e.to_string()))?;
    let outcomes: Vec<Result<(f64, Option<Vec<f64>>)>> = pool.install(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|r| {
                prepared
                    .run(&config.spec, config.seed(r), times.as_deref())
                    .map_err(|e| Error::Replication {
                        replication: r,
                        source: Box::new(e),
                    })
            })
            .collect()
    });
    let mut finals = Vec::with_capacity(outcomes.len());
    let mut curves = Vec::new();
    for o in outcomes {
        let (f, c) = o?;
        finals.push(f);
        curves.extend(c);
    }
    let curve = times.map(|t| average_curves(&t, &curves));
    let seeds = (0..config.replications).map(|r| config.seed(r)).collect();
    RunRecord::new(config.hash(), seeds, finals, curve)
}
