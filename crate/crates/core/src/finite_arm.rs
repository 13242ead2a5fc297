//! Batched successive elimination for heavy-tailed finite-arm bandits.
//!
//! Each batch plays the active arms round-robin, keeping pull counts within
//! one of each other. At a batch boundary every active arm is estimated by
//! median-of-means over the first `τ` samples, where `τ` is the smallest
//! active pull count, and arms trailing the best estimate by at least
//! [`elimination_threshold`] are dropped. After the penultimate batch the
//! policy commits to the empirically best arm for the rest of the horizon.

use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::estimators::{median_of_means, HeavyTailSpec};
use crate::grids::Grid;
use crate::harness::{simulate, BatchPolicy, Environment, RegretTrace, SimOptions};
use crate::rewards::FiniteArmInstance;

/// `2^{(1+2ε)/(1+ε)} v^{1/(1+ε)} (c ln(TK) / τ)^{ε/(1+ε)}`.
pub fn elimination_threshold(
    tau: u64,
    spec: &HeavyTailSpec,
    horizon: u64,
    arms: usize,
) -> Result<f64> {
    if tau == 0 {
        return Err(invalid("tau", "pull count must be at least 1"));
    }
    let eps = spec.epsilon;
    let tk = horizon as f64 * arms as f64;
    Ok(2f64.powf((1.0 + 2.0 * eps) / (1.0 + eps))
        * spec.v.powf(1.0 / (1.0 + eps))
        * (spec.c * tk.ln() / tau as f64).powf(eps / (1.0 + eps)))
}

/// Per-estimate confidence `(TK)^{-2}`.
pub fn estimate_confidence(horizon: u64, arms: usize) -> f64 {
    (horizon as f64 * arms as f64).powi(-2)
}

/// Mutable state of one BaSE-H run.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseHState {
    /// Active arms in ascending order.
    pub active: Vec<usize>,
    pub pulls: Vec<u64>,
    /// Rewards per arm in the order received.
    pub buffers: Vec<Vec<f64>>,
    pub committed: Option<usize>,
    /// Arm pulled last; round-robin ties resume after it.
    pub cursor: Option<usize>,
    /// Common sample count `τ(t_m)` used at the last elimination.
    pub last_tau: Option<u64>,
    /// Estimates from the last elimination step, indexed by arm.
    pub last_estimates: Vec<Option<f64>>,
}

impl BaseHState {
    pub fn new(arms: usize) -> Result<Self> {
        if arms == 0 {
            return Err(invalid("K", "need at least one arm"));
        }
        Ok(Self {
            active: (0..arms).collect(),
            pulls: vec![0; arms],
            buffers: vec![Vec::new(); arms],
            committed: None,
            cursor: None,
            last_tau: None,
            last_estimates: vec![None; arms],
        })
    }

    pub fn arms(&self) -> usize {
        self.pulls.len()
    }

    /// `max - min` of the pull counts over the active set.
    pub fn imbalance(&self) -> u64 {
        let counts = self.active.iter().map(|&i| self.pulls[i]);
        counts.clone().max().unwrap_or(0) - counts.min().unwrap_or(0)
    }
}

/// Actions for steps `t_start + 1 ..= t_end`, computed from `state` alone.
///
/// Once committed every step plays the committed arm. Otherwise each step
/// picks the active arm with the fewest pulls, breaking ties cyclically
/// starting after the previously pulled arm.
pub fn plan_batch(state: &BaseHState, t_start: u64, t_end: u64) -> Result<Vec<usize>> {
    if t_end <= t_start {
        return Err(invalid("batch", format!("empty batch ({t_start}, {t_end}]")));
    }
    let len = (t_end - t_start) as usize;
    if let Some(arm) = state.committed {
        return Ok(vec![arm; len]);
    }
    if state.active.is_empty() {
        return Err(invalid("active", "active set is empty"));
    }
    let active = &state.active;
    let mut counts: Vec<u64> = active.iter().map(|&i| state.pulls[i]).collect();
    // position in `active` of the first arm after the cursor
    let mut next = match state.cursor {
        Some(c) => active.iter().position(|&i| i > c).unwrap_or(0),
        None => 0,
    };
    let mut plan = Vec::with_capacity(len);
    for _ in 0..len {
        let low = *counts.iter().min().unwrap();
        let pos = (0..active.len())
            .map(|o| (next + o) % active.len())
            .find(|&p| counts[p] == low)
            .unwrap();
        plan.push(active[pos]);
        counts[pos] += 1;
        next = (pos + 1) % active.len();
    }
    Ok(plan)
}

/// Appends the batch's rewards, then (unless committed) runs the
/// elimination step. With `is_penultimate` it also commits to the arm with
/// the highest estimate over all of its samples (lowest index on ties).
pub fn ingest_batch(
    state: &mut BaseHState,
    schedule: &[usize],
    rewards: &[f64],
    spec: &HeavyTailSpec,
    horizon: u64,
    is_penultimate: bool,
) -> Result<()> {
    if schedule.len() != rewards.len() {
        return Err(Error::RewardMismatch {
            expected: schedule.len(),
            got: rewards.len(),
        });
    }
    for (&arm, &y) in schedule.iter().zip(rewards) {
        state.buffers[arm].push(y);
        state.pulls[arm] += 1;
    }
    if let Some(&last) = schedule.last() {
        state.cursor = Some(last);
    }
    if state.committed.is_some() {
        return Ok(());
    }

    let k = state.arms();
    let delta = estimate_confidence(horizon, k);
    let tau = state.active.iter().map(|&i| state.pulls[i]).min().unwrap_or(0);
    state.last_estimates = vec![None; k];
    state.last_tau = None;
    if tau > 0 {
        for &i in &state.active {
            let est = median_of_means(&state.buffers[i][..tau as usize], delta)?;
            state.last_estimates[i] = Some(est);
        }
        let best = state
            .active
            .iter()
            .filter_map(|&i| state.last_estimates[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let threshold = elimination_threshold(tau, spec, horizon, k)?;
        let estimates = &state.last_estimates;
        state
            .active
            .retain(|&i| best - estimates[i].expect("estimated") < threshold);
        state.last_tau = Some(tau);
    }

    if is_penultimate {
        let mut choice: Option<(usize, f64)> = None;
        for &i in &state.active {
            if state.buffers[i].is_empty() {
                continue;
            }
            let est = median_of_means(&state.buffers[i], delta)?;
            if choice.is_none_or(|(_, b)| est > b) {
                choice = Some((i, est));
            }
        }
        state.committed = choice.map(|(i, _)| i);
    }
    Ok(())
}

/// BaSE-H over a fixed grid.
#[derive(Debug, Clone)]
pub struct BaseH {
    grid: Grid,
    spec: HeavyTailSpec,
    state: BaseHState,
    /// 1-based index of the next batch.
    batch: usize,
    pending: Vec<usize>,
}

impl BaseH {
    pub fn new(arms: usize, grid: Grid, spec: HeavyTailSpec) -> Result<Self> {
        grid.validate()?;
        spec.validate()?;
        Ok(Self {
            state: BaseHState::new(arms)?,
            grid,
            spec,
            batch: 1,
            pending: Vec::new(),
        })
    }

    pub fn state(&self) -> &BaseHState {
        &self.state
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
}

impl BatchPolicy for BaseH {
    type Action = usize;

    fn plan(&mut self, t: u64) -> Result<Vec<usize>> {
        if self.batch > self.grid.batches() {
            return Ok(Vec::new());
        }
        let (start, end) = self.grid.batch_bounds(self.batch);
        if start != t {
            return Err(invalid(
                "t",
                format!("engine at t = {t} but batch {} starts at {start}", self.batch),
            ));
        }
        self.pending = plan_batch(&self.state, start, end)?;
        Ok(self.pending.clone())
    }

    fn observe(&mut self, rewards: &[f64]) -> Result<()> {
        let m = self.batch;
        let big_m = self.grid.batches();
        let schedule = std::mem::take(&mut self.pending);
        if m < big_m {
            ingest_batch(
                &mut self.state,
                &schedule,
                rewards,
                &self.spec,
                self.grid.horizon(),
                m + 1 == big_m,
            )?;
        } else {
            // clean-up batch: record only
            if schedule.len() != rewards.len() {
                return Err(Error::RewardMismatch {
                    expected: schedule.len(),
                    got: rewards.len(),
                });
            }
            for (&arm, &y) in schedule.iter().zip(rewards) {
                self.state.buffers[arm].push(y);
                self.state.pulls[arm] += 1;
            }
        }
        self.batch += 1;
        Ok(())
    }
}

/// Engine view of a finite-arm instance; arm `i` draws from stream `i`.
pub struct FiniteEnvironment<'a> {
    instance: &'a FiniteArmInstance,
}

impl<'a> FiniteEnvironment<'a> {
    pub fn new(instance: &'a FiniteArmInstance) -> Self {
        Self { instance }
    }
}

impl Environment for FiniteEnvironment<'_> {
    type Action = usize;

    fn mean(&self, a: &usize) -> f64 {
        self.instance.means()[*a]
    }
    fn best_mean(&self) -> f64 {
        self.instance.best_mean()
    }
    fn stream(&self, a: &usize) -> u64 {
        *a as u64
    }
    fn sample(&self, a: &usize, rng: &mut ChaCha8Rng) -> f64 {
        self.instance.arms()[*a].sample(rng)
    }
}

/// Runs BaSE-H on `instance` over `grid`.
pub fn run_base_h(
    instance: &FiniteArmInstance,
    grid: &Grid,
    spec: &HeavyTailSpec,
    seed: u64,
) -> Result<RegretTrace<usize>> {
    run_base_h_with(instance, grid, spec, seed, &SimOptions::default()).map(|(tr, _)| tr)
}

/// As [`run_base_h`], also returning the final policy state.
pub fn run_base_h_with(
    instance: &FiniteArmInstance,
    grid: &Grid,
    spec: &HeavyTailSpec,
    seed: u64,
    options: &SimOptions,
) -> Result<(RegretTrace<usize>, BaseHState)> {
    let mut policy = BaseH::new(instance.len(), grid.clone(), *spec)?;
    let env = FiniteEnvironment::new(instance);
    let trace = simulate(&mut policy, &env, grid.horizon(), seed, options)?;
    Ok((trace, policy.state))
}
