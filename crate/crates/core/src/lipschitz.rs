//! Lipschitz bandits on `[0,1]^d` under the sup norm.
//!
//! [`BlinH`] narrows a dyadic partition of the cube: every active cube's
//! center is pulled `n_m` times, cubes whose median-of-means estimate trails
//! the best by `4 r_m` or more are dropped, and the survivors are split for
//! the next batch. Batch ends are adaptive and follow from the survivor
//! count. Once the schedule runs out, the center of the best cube is played
//! for the rest of the horizon.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::{median_of_means, HeavyTailSpec};
use crate::grids::DiameterSchedule;
use crate::harness::{simulate, BatchPolicy, Environment, RegretTrace, SimOptions};
use crate::rewards::RewardDistribution;
use crate::util::mix64;

/// Dyadic cube `∏_i [index_i 2^{-level}, (index_i + 1) 2^{-level}]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cube {
    pub level: u32,
    pub index: Vec<u64>,
}

impl Cube {
    /// `[0,1]^d` itself.
    pub fn root(d: usize) -> Self {
        Self {
            level: 0,
            index: vec![0; d],
        }
    }

    /// All `2^{level d}` cubes of the given level, in lexicographic order.
    pub fn tiling(d: usize, level: u32) -> Result<Vec<Cube>> {
        if level == 0 {
            return Ok(vec![Self::root(d)]);
        }
        Self::root(d).partition(1u64 << level)
    }

    pub fn dim(&self) -> usize {
        self.index.len()
    }

    pub fn edge(&self) -> f64 {
        2f64.powi(-(self.level as i32))
    }

    pub fn corner(&self) -> Vec<f64> {
        let e = self.edge();
        self.index.iter().map(|&i| i as f64 * e).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        let e = self.edge();
        self.index.iter().map(|&i| (i as f64 + 0.5) * e).collect()
    }

    /// Whether `x` lies in the closed cube.
    pub fn contains(&self, x: &[f64]) -> bool {
        let e = self.edge();
        self.index
            .iter()
            .zip(x)
            .all(|(&i, &xi)| xi >= i as f64 * e && xi <= (i + 1) as f64 * e)
    }

    /// Splits into `factor^d` subcubes of edge `edge / factor`.
    pub fn partition(&self, factor: u64) -> Result<Vec<Cube>> {
        if factor < 2 || !factor.is_power_of_two() {
            return Err(invalid("factor", format!("{factor} is not a power of 2 >= 2")));
        }
        let level = self.level + factor.trailing_zeros();
        if level > 62 {
            return Err(invalid("factor", format!("level {level} too deep")));
        }
        let d = self.dim();
        let count = (factor as usize)
            .checked_pow(d as u32)
            .ok_or_else(|| invalid("factor", "too many subcubes"))?;
        let mut out = Vec::with_capacity(count);
        let mut offset = vec![0u64; d];
        for _ in 0..count {
            out.push(Cube {
                level,
                index: self
                    .index
                    .iter()
                    .zip(&offset)
                    .map(|(&p, &o)| p * factor + o)
                    .collect(),
            });
            // odometer, last coordinate fastest
            for o in offset.iter_mut().rev() {
                *o += 1;
                if *o < factor {
                    break;
                }
                *o = 0;
            }
        }
        Ok(out)
    }

    /// Stream identifier for this cube's rewards.
    pub fn key(&self) -> u64 {
        self.index
            .iter()
            .fold(mix64(self.level as u64), |h, &i| mix64(h ^ i))
    }
}

/// Indices of cubes whose estimate is within `4 r` of the best.
pub fn eliminate_cubes(estimates: &[f64], r: f64) -> Vec<usize> {
    let best = estimates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..estimates.len())
        .filter(|&i| best - estimates[i] < 4.0 * r)
        .collect()
}

/// `t + factor^d · survivors · n_next`, saturating.
pub fn next_batch_end(t: u64, factor: u64, survivors: usize, n_next: u64, d: usize) -> u64 {
    factor
        .saturating_pow(d as u32)
        .saturating_mul(survivors as u64)
        .saturating_mul(n_next)
        .saturating_add(t)
}

/// One executed exploration batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BlinBatch {
    pub cubes: Vec<Cube>,
    pub estimates: Vec<f64>,
    /// Indices into `cubes` kept after elimination.
    pub survivors: Vec<usize>,
    pub r: f64,
    pub n: u64,
    pub end: u64,
}

#[derive(Debug, Clone)]
enum Phase {
    Explore { m: usize, cubes: Vec<Cube> },
    CleanUp(Vec<Cube>),
    Done,
}

/// BLiN-H driven by a precomputed [`DiameterSchedule`].
#[derive(Debug, Clone)]
pub struct BlinH {
    schedule: DiameterSchedule,
    horizon: u64,
    delta: f64,
    phase: Phase,
    planned: usize,
    log: Vec<BlinBatch>,
    committed: Option<Cube>,
}

impl BlinH {
    pub fn new(schedule: DiameterSchedule, spec: &HeavyTailSpec) -> Result<Self> {
        spec.validate()?;
        let horizon = schedule.horizon;
        let d = schedule.d;
        let first = Cube::tiling(d, schedule.levels[0])?;
        let phase = if schedule.batches <= 1 {
            Phase::CleanUp(first)
        } else {
            let pulls = (first.len() as u64).saturating_mul(schedule.n[0]);
            if pulls > horizon {
                return Err(invalid(
                    "T",
                    format!("first batch needs {pulls} pulls but the horizon is {horizon}"),
                ));
            }
            Phase::Explore { m: 0, cubes: first }
        };
        Ok(Self {
            delta: (horizon as f64).powi(-3),
            schedule,
            horizon,
            phase,
            planned: 0,
            log: Vec::new(),
            committed: None,
        })
    }

    pub fn batches(&self) -> &[BlinBatch] {
        &self.log
    }

    /// Cube played during clean-up, if clean-up committed to one.
    pub fn committed(&self) -> Option<&Cube> {
        self.committed.as_ref()
    }

    pub fn schedule(&self) -> &DiameterSchedule {
        &self.schedule
    }
}

impl BatchPolicy for BlinH {
    type Action = Cube;

    fn plan(&mut self, t: u64) -> Result<Vec<Cube>> {
        let left = self.horizon.saturating_sub(t) as usize;
        let plan: Vec<Cube> = match &self.phase {
            Phase::Explore { m, cubes } => {
                let n = self.schedule.n[*m] as usize;
                cubes
                    .iter()
                    .flat_map(|c| std::iter::repeat_n(c, n))
                    .take(left)
                    .cloned()
                    .collect()
            }
            Phase::CleanUp(cubes) => cubes.iter().cycle().take(left).cloned().collect(),
            Phase::Done => Vec::new(),
        };
        self.planned = plan.len();
        Ok(plan)
    }

    fn observe(&mut self, rewards: &[f64]) -> Result<()> {
        if rewards.len() != self.planned {
            return Err(Error::RewardMismatch {
                expected: self.planned,
                got: rewards.len(),
            });
        }
        let phase = std::mem::replace(&mut self.phase, Phase::Done);
        let Phase::Explore { m, cubes } = phase else {
            return Ok(());
        };
        let n = self.schedule.n[m] as usize;
        let end = self.log.last().map_or(0, |b| b.end) + rewards.len() as u64;
        if rewards.len() < cubes.len() * n {
            // horizon cut the batch short
            return Ok(());
        }
        let estimates = rewards
            .chunks_exact(n)
            .map(|chunk| median_of_means(chunk, self.delta))
            .collect::<Result<Vec<f64>>>()?;
        let r = self.schedule.r[m];
        let survivors = eliminate_cubes(&estimates, r);
        let best = survivors
            .iter()
            .copied()
            .fold(survivors[0], |b, i| if estimates[i] > estimates[b] { i } else { b });

        let factor = self.schedule.factor(m);
        let next_end = next_batch_end(
            end,
            factor,
            survivors.len(),
            self.schedule.n[m + 1],
            self.schedule.d,
        );
        self.phase = if m + 2 >= self.schedule.batches || next_end >= self.horizon {
            self.committed = Some(cubes[best].clone());
            Phase::CleanUp(vec![cubes[best].clone()])
        } else {
            let mut next = Vec::with_capacity(survivors.len() * factor.pow(self.schedule.d as u32) as usize);
            for &i in &survivors {
                next.extend(cubes[i].partition(factor)?);
            }
            Phase::Explore { m: m + 1, cubes: next }
        };
        self.log.push(BlinBatch {
            cubes,
            estimates,
            survivors,
            r,
            n: n as u64,
            end,
        });
        Ok(())
    }
}

fn default_height() -> f64 {
    1.0
}

/// Mean-reward families on `[0,1]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LipschitzFamily {
    /// `max(h - ‖x - x*‖∞, h - w)`.
    Peak {
        center: Vec<f64>,
        #[serde(default = "default_height")]
        height: f64,
        width: f64,
    },
    /// Flat top of sup-radius `radius` around `center`, then a cone of depth `width`.
    Plateau {
        center: Vec<f64>,
        radius: f64,
        #[serde(default = "default_height")]
        height: f64,
        width: f64,
    },
    Constant { d: usize, value: f64 },
    /// Instance `I_{k,i}` of the static-grid lower bound built from the
    /// previous grid point `t_{k-1}`.
    StaticLowerbound {
        d: usize,
        d_z: f64,
        epsilon: f64,
        prev_time: f64,
        index: usize,
    },
    /// Instance `I_{j,k}` (or `I_M` when `j = M`) of the adaptive-grid lower
    /// bound. Means only.
    AdaptiveLowerbound {
        d: usize,
        d_z: f64,
        epsilon: f64,
        horizon: f64,
        batches: usize,
        j: usize,
        #[serde(default)]
        k: usize,
    },
}

/// Peaks of a max-of-cones function: `μ(x) = max(floor, max_u(μ(u) - ‖x - u‖∞))`.
#[derive(Debug, Clone, PartialEq)]
struct Cones {
    floor: f64,
    peaks: Vec<(Vec<f64>, f64)>,
    /// Packing pitch, kept for the sampler.
    r: f64,
}

impl Cones {
    fn eval(&self, x: &[f64]) -> f64 {
        self.peaks
            .iter()
            .map(|(u, h)| h - sup_dist(x, u))
            .fold(self.floor, f64::max)
    }

    fn argmax(&self) -> (Vec<f64>, f64) {
        let mut best = &self.peaks[0];
        for p in &self.peaks[1..] {
            if p.1 > best.1 {
                best = p;
            }
        }
        best.clone()
    }
}

fn sup_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// First `count` points of the pitch-`r` lattice in `[0,1]^d`, row-major.
fn lattice_points(d: usize, r: f64, count: usize) -> Result<Vec<Vec<f64>>> {
    let per_axis = (1.0 / r + 1e-9).floor() as usize + 1;
    let capacity = per_axis.checked_pow(d as u32).unwrap_or(usize::MAX);
    if count > capacity {
        return Err(invalid(
            "packing",
            format!("{count} points at spacing {r} do not fit in [0,1]^{d} (room for {capacity})"),
        ));
    }
    let mut out = Vec::with_capacity(count);
    let mut idx = vec![0usize; d];
    for _ in 0..count {
        out.push(idx.iter().map(|&i| i as f64 * r).collect());
        for i in idx.iter_mut().rev() {
            *i += 1;
            if *i < per_axis {
                break;
            }
            *i = 0;
        }
    }
    Ok(out)
}

fn packing_size(r: f64, d_z: f64) -> usize {
    (r.powf(-d_z) + 1e-9).floor().max(1.0) as usize
}

fn check_dz(d: usize, d_z: f64, epsilon: f64) -> Result<()> {
    if d == 0 {
        return Err(invalid("d", "dimension must be at least 1"));
    }
    if !(d_z >= 0.0 && d_z <= d as f64) {
        return Err(invalid("d_z", format!("{d_z} not in [0, {d}]")));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(invalid("epsilon", format!("{epsilon} not in (0, 1]")));
    }
    Ok(())
}

impl LipschitzFamily {
    pub fn dim(&self) -> usize {
        match self {
            Self::Peak { center, .. } | Self::Plateau { center, .. } => center.len(),
            Self::Constant { d, .. }
            | Self::StaticLowerbound { d, .. }
            | Self::AdaptiveLowerbound { d, .. } => *d,
        }
    }

    fn cones(&self) -> Result<Option<Cones>> {
        match *self {
            Self::StaticLowerbound {
                d,
                d_z,
                epsilon,
                prev_time,
                index,
            } => {
                check_dz(d, d_z, epsilon)?;
                if !(prev_time >= 1.0 && prev_time.is_finite()) {
                    return Err(invalid("prev_time", format!("{prev_time} < 1")));
                }
                let r = prev_time.powf(-1.0 / (d_z + 1.0 + 1.0 / epsilon));
                let count = packing_size(r, d_z);
                if index < 1 || index > count {
                    return Err(invalid("index", format!("{index} not in 1..={count}")));
                }
                let peaks = lattice_points(d, r, count)?
                    .into_iter()
                    .enumerate()
                    .map(|(i, u)| {
                        let h = if i == 0 {
                            0.75 * r
                        } else if i + 1 == index {
                            0.875 * r
                        } else {
                            0.625 * r
                        };
                        (u, h)
                    })
                    .collect();
                Ok(Some(Cones {
                    floor: 0.5 * r,
                    peaks,
                    r,
                }))
            }
            Self::AdaptiveLowerbound {
                d,
                d_z,
                epsilon,
                horizon,
                batches,
                j,
                k,
            } => {
                check_dz(d, d_z, epsilon)?;
                if batches < 2 {
                    return Err(invalid("batches", "need at least 2 batches"));
                }
                if !(horizon > 1.0 && horizon.is_finite()) {
                    return Err(invalid("horizon", format!("{horizon} must exceed 1")));
                }
                if j < 1 || j > batches {
                    return Err(invalid("j", format!("{j} not in 1..={batches}")));
                }
                let radii = adaptive_radii(d_z, epsilon, horizon, batches);
                let (r1, rm) = (radii[0], radii[batches - 1]);
                let anchor = vec![0.0; d];
                let base = 0.5 * r1 + rm / 16.0;
                let mut peaks = vec![(anchor, base)];
                if j < batches {
                    let rj = radii[j - 1];
                    let count = packing_size(rj, d_z);
                    if count < 2 {
                        return Err(invalid(
                            "d_z",
                            format!("packing at r_{j} = {rj} has {count} point; need at least 2"),
                        ));
                    }
                    if k < 1 || k > count - 1 {
                        return Err(invalid("k", format!("{k} not in 1..={}", count - 1)));
                    }
                    // lattice point 0 is the shared anchor
                    let u = lattice_points(d, rj, count)?.swap_remove(k);
                    peaks.push((u, base + rj / 16.0));
                }
                Ok(Some(Cones {
                    floor: 0.5 * r1,
                    peaks,
                    r: r1,
                }))
            }
            _ => Ok(None),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |c: &[f64]| c.iter().all(|x| (0.0..=1.0).contains(x));
        match self {
            Self::Peak { center, height, width } => {
                if center.is_empty() || !in_unit(center) {
                    return Err(invalid("center", "must be a point of [0,1]^d, d >= 1"));
                }
                if !(width.is_finite() && *width >= 0.0) || !height.is_finite() {
                    return Err(invalid("width", "height and width must be finite, width >= 0"));
                }
            }
            Self::Plateau {
                center,
                radius,
                height,
                width,
            } => {
                if center.is_empty() || !in_unit(center) {
                    return Err(invalid("center", "must be a point of [0,1]^d, d >= 1"));
                }
                if !(*radius >= 0.0 && *width >= 0.0 && width.is_finite() && height.is_finite()) {
                    return Err(invalid("radius", "radius and width must be nonnegative"));
                }
            }
            Self::Constant { d, value } => {
                if *d == 0 || !value.is_finite() {
                    return Err(invalid("d", "need d >= 1 and a finite value"));
                }
            }
            _ => {
                self.cones()?;
            }
        }
        Ok(())
    }

    /// Zooming dimension of the family, where known in closed form.
    pub fn d_z_analytic(&self) -> f64 {
        match self {
            Self::Peak { .. } => 0.0,
            Self::Plateau { center, radius, .. } => {
                if *radius > 0.0 {
                    center.len() as f64
                } else {
                    0.0
                }
            }
            Self::Constant { d, .. } => *d as f64,
            Self::StaticLowerbound { d_z, .. } | Self::AdaptiveLowerbound { d_z, .. } => *d_z,
        }
    }
}

/// `r_j = 1 / (T_{j-1}^a M)` with `a = 1/(d_z + 1 + 1/ε)` and
/// `T_j = T^{(1 - a^j)/(1 - a^M)}`.
pub fn adaptive_radii(d_z: f64, epsilon: f64, horizon: f64, batches: usize) -> Vec<f64> {
    let a = 1.0 / (d_z + 1.0 + 1.0 / epsilon);
    let denom = 1.0 - a.powi(batches as i32);
    (1..=batches)
        .map(|j| {
            let prev = horizon.powf((1.0 - a.powi(j as i32 - 1)) / denom);
            1.0 / (prev.powf(a) * batches as f64)
        })
        .collect()
}

/// A Lipschitz instance: a mean function plus a reward law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceDoc", into = "InstanceDoc")]
pub struct LipschitzInstance {
    family: LipschitzFamily,
    noise: Option<RewardDistribution>,
    cones: Option<Cones>,
}

/// Serialized form: family tag and parameters, plus the optional noise law.
#[derive(Serialize, Deserialize)]
struct InstanceDoc {
    #[serde(flatten)]
    family: LipschitzFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise: Option<RewardDistribution>,
}

impl TryFrom<InstanceDoc> for LipschitzInstance {
    type Error = Error;
    fn try_from(doc: InstanceDoc) -> Result<Self> {
        Self::new(doc.family, doc.noise)
    }
}

impl From<LipschitzInstance> for InstanceDoc {
    fn from(inst: LipschitzInstance) -> Self {
        InstanceDoc {
            family: inst.family,
            noise: inst.noise,
        }
    }
}

impl LipschitzInstance {
    /// `noise` is centered and added to the mean. The lower-bound families
    /// carry their own reward laws and ignore it.
    pub fn new(family: LipschitzFamily, noise: Option<RewardDistribution>) -> Result<Self> {
        family.validate()?;
        if let Some(n) = &noise {
            n.validate()?;
        }
        let cones = family.cones()?;
        Ok(Self {
            family,
            noise,
            cones,
        })
    }

    pub fn family(&self) -> &LipschitzFamily {
        &self.family
    }

    pub fn noise(&self) -> Option<&RewardDistribution> {
        self.noise.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn d_z_analytic(&self) -> f64 {
        self.family.d_z_analytic()
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        match &self.family {
            LipschitzFamily::Peak {
                center,
                height,
                width,
            } => height - sup_dist(x, center).min(*width),
            LipschitzFamily::Plateau {
                center,
                radius,
                height,
                width,
            } => height - (sup_dist(x, center) - radius).clamp(0.0, *width),
            LipschitzFamily::Constant { value, .. } => *value,
            _ => self.cones.as_ref().expect("validated").eval(x),
        }
    }

    pub fn mu_star(&self) -> f64 {
        self.mean(&self.maximizer())
    }

    /// A point attaining the supremum of the mean.
    pub fn maximizer(&self) -> Vec<f64> {
        match &self.family {
            LipschitzFamily::Peak { center, .. } | LipschitzFamily::Plateau { center, .. } => {
                center.clone()
            }
            LipschitzFamily::Constant { d, .. } => vec![0.5; *d],
            _ => self.cones.as_ref().expect("validated").argmax().0,
        }
    }

    pub fn has_sampler(&self) -> bool {
        !matches!(self.family, LipschitzFamily::AdaptiveLowerbound { .. })
    }

    /// Checks that every pull has a `(1+ε)`-th centered moment of at most `v`.
    pub fn certify(&self, spec: &HeavyTailSpec) -> Result<()> {
        let order = spec.order();
        let moment = match &self.family {
            LipschitzFamily::StaticLowerbound { .. } => {
                // the worst case over x is at the highest mean
                let cones = self.cones.as_ref().expect("validated");
                let gamma = (1.5 * cones.r).powf(1.0 / spec.epsilon);
                let p = gamma * self.mu_star();
                two_point_moment(p, 1.0 / gamma, order)
            }
            LipschitzFamily::AdaptiveLowerbound { .. } => {
                return Err(Error::NoSampler(
                    "adaptive lower-bound instances have no reward law".into(),
                ))
            }
            _ => match &self.noise {
                Some(n) => n.centered_moment(order)?,
                None => 0.0,
            },
        };
        if moment > spec.v * (1.0 + 1e-12) {
            return Err(Error::Certificate {
                arm: 0,
                order,
                moment,
                bound: spec.v,
            });
        }
        Ok(())
    }

    /// One reward at `x`.
    pub fn sample(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
        let mu = self.mean(x);
        match &self.family {
            LipschitzFamily::StaticLowerbound { epsilon, .. } => {
                let r = self.cones.as_ref().expect("validated").r;
                let gamma = (1.5 * r).powf(1.0 / epsilon);
                Ok(if rng.random::<f64>() < gamma * mu {
                    1.0 / gamma
                } else {
                    0.0
                })
            }
            LipschitzFamily::AdaptiveLowerbound { .. } => Err(Error::NoSampler(
                "adaptive lower-bound instances have no reward law".into(),
            )),
            _ => Ok(match &self.noise {
                Some(n) => mu + n.sample(rng) - n.mean(),
                None => mu,
            }),
        }
    }
}

fn two_point_moment(p: f64, high: f64, order: f64) -> f64 {
    let mean = p * high;
    p * (high - mean).abs().powf(order) + (1.0 - p) * mean.abs().powf(order)
}

/// Engine view of a Lipschitz instance; each cube owns one reward stream.
pub struct LipschitzEnvironment<'a> {
    instance: &'a LipschitzInstance,
    mu_star: f64,
    means: std::cell::RefCell<HashMap<Cube, f64>>,
}

impl<'a> LipschitzEnvironment<'a> {
    pub fn new(instance: &'a LipschitzInstance) -> Result<Self> {
        if !instance.has_sampler() {
            return Err(Error::NoSampler(
                "adaptive lower-bound instances have no reward law".into(),
            ));
        }
        Ok(Self {
            instance,
            mu_star: instance.mu_star(),
            means: Default::default(),
        })
    }
}

impl Environment for LipschitzEnvironment<'_> {
    type Action = Cube;

    fn mean(&self, c: &Cube) -> f64 {
        if let Some(&m) = self.means.borrow().get(c) {
            return m;
        }
        let m = self.instance.mean(&c.center());
        self.means.borrow_mut().insert(c.clone(), m);
        m
    }
    fn best_mean(&self) -> f64 {
        self.mu_star
    }
    fn stream(&self, c: &Cube) -> u64 {
        c.key()
    }
    fn sample(&self, c: &Cube, rng: &mut ChaCha8Rng) -> f64 {
        self.instance
            .sample(&c.center(), rng)
            .expect("checked at construction")
    }
}

/// Outcome of one BLiN-H run.
#[derive(Debug, Clone)]
pub struct BlinRun {
    pub trace: RegretTrace<Cube>,
    pub batches: Vec<BlinBatch>,
    pub committed: Option<Cube>,
}

pub fn run_blin_h(
    instance: &LipschitzInstance,
    schedule: &DiameterSchedule,
    spec: &HeavyTailSpec,
    seed: u64,
) -> Result<RegretTrace<Cube>> {
    run_blin_h_with(instance, schedule, spec, seed, &SimOptions::default()).map(|r| r.trace)
}

pub fn run_blin_h_with(
    instance: &LipschitzInstance,
    schedule: &DiameterSchedule,
    spec: &HeavyTailSpec,
    seed: u64,
    options: &SimOptions,
) -> Result<BlinRun> {
    if schedule.d != instance.dim() {
        return Err(invalid(
            "d",
            format!("schedule has d = {}, instance has d = {}", schedule.d, instance.dim()),
        ));
    }
    let env = LipschitzEnvironment::new(instance)?;
    let mut policy = BlinH::new(schedule.clone(), spec)?;
    let trace = simulate(&mut policy, &env, schedule.horizon, seed, options)?;
    Ok(BlinRun {
        trace,
        batches: policy.log,
        committed: policy.committed,
    })
}

/// Slope of `ln N_r` against `ln(1/r)`, where `N_r` is a greedy `r`-packing
/// of `{x : μ_⋆ - μ(x) <= 16 r}` drawn from a fine lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoomingEstimate {
    pub slope: f64,
    /// `(r, N_r)` pairs.
    pub points: Vec<(f64, usize)>,
}

/// Resolutions `2^{-5}, …, 2^{-10}`.
pub fn default_zooming_resolutions() -> Vec<f64> {
    (5..=10).map(|k| 2f64.powi(-k)).collect()
}

pub fn estimate_zooming_dimension(
    instance: &LipschitzInstance,
    resolutions: &[f64],
) -> Result<ZoomingEstimate> {
    let d = instance.dim();
    if d > 2 {
        return Err(invalid("d", format!("packing search supports d <= 2, got {d}")));
    }
    if resolutions.len() < 2 {
        return Err(invalid("resolutions", "need at least two resolutions"));
    }
    if resolutions
        .iter()
        .any(|&r| !(r > 0.0 && r < 1.0))
        || resolutions.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(invalid("resolutions", "must be decreasing values in (0, 1)"));
    }
    let mu_star = instance.mu_star();
    let mut points = Vec::with_capacity(resolutions.len());
    for &r in resolutions {
        points.push((r, greedy_packing(instance, mu_star, r)));
    }
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|&(r, n)| ((1.0 / r).ln(), (n as f64).ln()))
        .collect();
    let slope = crate::harness::ols(&xy)?.slope;
    Ok(ZoomingEstimate { slope, points })
}

fn greedy_packing(instance: &LipschitzInstance, mu_star: f64, r: f64) -> usize {
    let d = instance.dim();
    // lattice pitch r / q
    let q: usize = if d == 1 { 8 } else { 2 };
    let steps = (q as f64 / r).ceil() as usize;
    let pitch = 1.0 / steps as f64;
    let mut chosen: HashMap<Vec<i64>, Vec<Vec<f64>>> = HashMap::new();
    let mut count = 0;
    let mut idx = vec![0usize; d];
    let total = (steps + 1).pow(d as u32);
    for _ in 0..total {
        let x: Vec<f64> = idx.iter().map(|&i| i as f64 * pitch).collect();
        for i in idx.iter_mut().rev() {
            *i += 1;
            if *i <= steps {
                break;
            }
            *i = 0;
        }
        if mu_star - instance.mean(&x) > 16.0 * r + 1e-12 {
            continue;
        }
        let cell: Vec<i64> = x.iter().map(|v| (v / r).floor() as i64).collect();
        let mut clash = false;
        let mut offset = vec![-1i64; d];
        'scan: loop {
            let key: Vec<i64> = cell.iter().zip(&offset).map(|(c, o)| c + o).collect();
            if let Some(list) = chosen.get(&key) {
                if list.iter().any(|y| sup_dist(&x, y) < r - 1e-12) {
                    clash = true;
                    break 'scan;
                }
            }
            let mut k = d;
            loop {
                if k == 0 {
                    break 'scan;
                }
                k -= 1;
                offset[k] += 1;
                if offset[k] <= 1 {
                    break;
                }
                offset[k] = -1;
            }
        }
        if !clash {
            chosen.entry(cell).or_default().push(x);
            count += 1;
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::diameter_schedule;
    use rand::SeedableRng;

    fn peak(d: usize, x: f64) -> LipschitzInstance {
        LipschitzInstance::new(
            LipschitzFamily::Peak {
                center: vec![x; d],
                height: 1.0,
                width: 1.0,
            },
            None,
        )
        .unwrap()
    }

    #[test]
    fn partition_examples() {
        let half = Cube {
            level: 1,
            index: vec![1],
        };
        let kids = half.partition(2).unwrap();
        assert_eq!(kids.len(), 2);
        assert!(kids.iter().all(|c| c.edge() == 0.25));
        assert_eq!(kids[0].corner(), vec![0.5]);

        let sq = Cube::root(2).partition(2).unwrap();
        let vol: f64 = sq.iter().map(|c| c.edge().powi(2)).sum();
        assert_eq!(sq.len(), 4);
        assert_eq!(vol, 1.0);

        let quarter = Cube {
            level: 2,
            index: vec![1, 3],
        };
        let fine = quarter.partition(4).unwrap();
        assert_eq!(fine.len(), 16);
        for c in &fine {
            assert_eq!(c.edge(), 1.0 / 16.0);
            for x in c.corner() {
                assert_eq!((x * 16.0).fract(), 0.0);
            }
            assert!(quarter.contains(&c.center()));
        }
        let mut corners: Vec<Vec<u64>> = fine.iter().map(|c| c.index.clone()).collect();
        corners.dedup();
        assert_eq!(corners.len(), 16);
        assert!(quarter.partition(3).is_err());
        assert!(quarter.partition(1).is_err());
    }

    #[test]
    fn tiling_and_center() {
        let t = Cube::tiling(2, 3).unwrap();
        assert_eq!(t.len(), 64);
        assert_eq!(Cube::tiling(1, 0).unwrap(), vec![Cube::root(1)]);
        assert_eq!(t[0].center(), vec![1.0 / 16.0, 1.0 / 16.0]);
        let keys: std::collections::HashSet<u64> = t.iter().map(Cube::key).collect();
        assert_eq!(keys.len(), 64);
    }

    #[test]
    fn elimination_examples() {
        assert_eq!(eliminate_cubes(&[0.4, 0.4, 0.4], 0.01), vec![0, 1, 2]);
        assert_eq!(eliminate_cubes(&[1.0, 0.0], 0.2), vec![0]);
        assert_eq!(eliminate_cubes(&[1.0, 0.3, 0.21], 0.2), vec![0, 1, 2]);
    }

    #[test]
    fn batch_end_examples() {
        assert_eq!(next_batch_end(100, 2, 1, 10, 1), 120);
        assert_eq!(next_batch_end(7, 2, 3, 5, 2), 67);
        assert_eq!(next_batch_end(0, 4, 6, 9, 1) - 0, 2 * next_batch_end(0, 4, 3, 9, 1));
        assert_eq!(next_batch_end(5, 1 << 40, 10, u64::MAX, 3), u64::MAX);
    }

    #[test]
    fn peak_values_and_lipschitz() {
        let p = peak(1, 0.5);
        assert_eq!(p.mean(&[0.5]), 1.0);
        assert!((p.mean(&[0.3]) - 0.8).abs() < 1e-15);
        assert!((p.mean(&[0.7]) - 0.8).abs() < 1e-15);
        let clipped = LipschitzInstance::new(
            LipschitzFamily::Peak {
                center: vec![0.5],
                height: 2.0,
                width: 0.1,
            },
            None,
        )
        .unwrap();
        assert_eq!(clipped.mean(&[0.0]), 1.9);
        assert_eq!(clipped.mu_star(), 2.0);
    }

    fn all_families() -> Vec<LipschitzInstance> {
        let fams = vec![
            LipschitzFamily::Peak {
                center: vec![0.3, 0.8],
                height: 1.0,
                width: 0.6,
            },
            LipschitzFamily::Plateau {
                center: vec![0.5],
                radius: 0.1,
                height: 0.5,
                width: 0.3,
            },
            LipschitzFamily::Constant { d: 2, value: 0.2 },
            LipschitzFamily::StaticLowerbound {
                d: 2,
                d_z: 1.0,
                epsilon: 0.5,
                prev_time: 1000.0,
                index: 3,
            },
            LipschitzFamily::AdaptiveLowerbound {
                d: 2,
                d_z: 2.0,
                epsilon: 1.0,
                horizon: 1e6,
                batches: 3,
                j: 2,
                k: 5,
            },
        ];
        fams.into_iter()
            .map(|f| LipschitzInstance::new(f, None).unwrap())
            .collect()
    }

    #[test]
    fn every_family_is_one_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for inst in all_families() {
            let d = inst.dim();
            let star = inst.mu_star();
            for _ in 0..2000 {
                let x: Vec<f64> = (0..d).map(|_| rng.random()).collect();
                let y: Vec<f64> = (0..d).map(|_| rng.random()).collect();
                let (a, b) = (inst.mean(&x), inst.mean(&y));
                assert!((a - b).abs() <= sup_dist(&x, &y) + 1e-12, "{:?}", inst.family);
                assert!(a <= star + 1e-15);
            }
        }
    }

    #[test]
    fn static_lowerbound_peaks() {
        let mk = |index| {
            LipschitzInstance::new(
                LipschitzFamily::StaticLowerbound {
                    d: 1,
                    d_z: 1.0,
                    epsilon: 1.0,
                    prev_time: 256.0,
                    index,
                },
                None,
            )
        };
        // r = 256^{-1/3}, M = floor(1/r) = 6
        let r = 256f64.powf(-1.0 / 3.0);
        let one = mk(1).unwrap();
        assert!((one.mean(&[0.0]) - 0.75 * r).abs() < 1e-15);
        assert!((one.mean(&[r]) - 0.625 * r).abs() < 1e-15);
        assert!((one.mean(&[0.5 * r]) - 0.5 * r).abs() < 1e-15);
        let third = mk(3).unwrap();
        assert!((third.mean(&[2.0 * r]) - 0.875 * r).abs() < 1e-15);
        assert!((third.mean(&[0.0]) - 0.75 * r).abs() < 1e-15);
        assert!((third.mu_star() - 0.875 * r).abs() < 1e-15);
        assert!(mk(6).is_ok());
        assert!(mk(7).is_err());
        assert!(mk(0).is_err());
    }

    #[test]
    fn static_lowerbound_sampler_mean() {
        let inst = LipschitzInstance::new(
            LipschitzFamily::StaticLowerbound {
                d: 1,
                d_z: 1.0,
                epsilon: 0.5,
                prev_time: 64.0,
                index: 2,
            },
            None,
        )
        .unwrap();
        let x = inst.maximizer();
        let mu = inst.mean(&x);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 400_000;
        let draws: Vec<f64> = (0..n).map(|_| inst.sample(&x, &mut rng).unwrap()).collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|y| (y - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((m - mu).abs() < 4.0 * sd / (n as f64).sqrt());
        let v = two_point_moment(
            (1.5 * inst.cones.as_ref().unwrap().r).powf(2.0) * mu,
            1.0 / (1.5 * inst.cones.as_ref().unwrap().r).powf(2.0),
            1.5,
        );
        assert!(inst.certify(&HeavyTailSpec::new(0.5, v, 12.0).unwrap()).is_ok());
        assert!(inst.certify(&HeavyTailSpec::new(0.5, v * 0.9, 12.0).unwrap()).is_err());
    }

    #[test]
    fn adaptive_lowerbound_means() {
        let radii = adaptive_radii(1.0, 1.0, 1e6, 3);
        assert!((radii[0] - 1.0 / 3.0).abs() < 1e-15);
        let (r1, r3) = (radii[0], radii[2]);
        let mk = |j, k| {
            LipschitzInstance::new(
                LipschitzFamily::AdaptiveLowerbound {
                    d: 1,
                    d_z: 1.0,
                    epsilon: 1.0,
                    horizon: 1e6,
                    batches: 3,
                    j,
                    k,
                },
                None,
            )
        };
        let last = mk(3, 0).unwrap();
        assert!((last.mean(&[0.0]) - (r1 / 2.0 + r3 / 16.0)).abs() < 1e-15);
        assert!((last.mean(&[0.9]) - r1 / 2.0).abs() < 1e-15);
        let two = mk(2, 1).unwrap();
        let r2 = radii[1];
        assert!((two.mean(&[r2]) - (r1 / 2.0 + r2 / 16.0 + r3 / 16.0)).abs() < 1e-15);
        assert!((two.mean(&[0.0]) - (r1 / 2.0 + r3 / 16.0)).abs() < 1e-15);
        assert_eq!(two.maximizer(), vec![r2]);
        assert!(!two.has_sampler());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(two.sample(&[0.1], &mut rng), Err(Error::NoSampler(_))));
        assert!(LipschitzEnvironment::new(&two).is_err());
        assert!(mk(4, 1).is_err());
        assert!(mk(2, 0).is_err());
    }

    #[test]
    fn packing_feasibility_is_checked() {
        assert!(lattice_points(1, 0.5, 3).is_ok());
        assert!(lattice_points(1, 0.5, 4).is_err());
        assert_eq!(lattice_points(2, 0.5, 4).unwrap()[3], vec![0.5, 0.0]);
    }

    #[test]
    fn instance_json_round_trip() {
        for inst in all_families() {
            let text = serde_json::to_string(&inst).unwrap();
            let back: LipschitzInstance = serde_json::from_str(&text).unwrap();
            assert_eq!(back, inst);
        }
        let with_noise = LipschitzInstance::new(
            LipschitzFamily::Constant { d: 1, value: 0.0 },
            Some(RewardDistribution::PointMass { value: 3.0 }),
        )
        .unwrap();
        let text = serde_json::to_string(&with_noise).unwrap();
        assert!(text.contains("\"family\":\"constant\""));
        let back: LipschitzInstance = serde_json::from_str(&text).unwrap();
        assert_eq!(back, with_noise);
    }

    fn schedule(horizon: u64, d: usize, batches: usize, v: f64) -> (DiameterSchedule, HeavyTailSpec) {
        let spec = HeavyTailSpec::new(1.0, v, 12.0).unwrap();
        (diameter_schedule(horizon, d, 0.0, 1.0, batches, &spec).unwrap(), spec)
    }

    #[test]
    fn deterministic_peak_keeps_optimal_cube() {
        let inst = peak(1, 0.5);
        let (s, spec) = schedule(1 << 18, 1, 4, 1e-3);
        let run = run_blin_h_with(&inst, &s, &spec, 1, &SimOptions::default()).unwrap();
        assert!(!run.batches.is_empty());
        for b in &run.batches {
            let kept: Vec<&Cube> = b.survivors.iter().map(|&i| &b.cubes[i]).collect();
            assert!(kept.iter().any(|c| c.contains(&[0.5])));
            for (c, &e) in b.cubes.iter().zip(&b.estimates) {
                assert_eq!(e, inst.mean(&c.center()));
            }
            for (i, c) in b.cubes.iter().enumerate() {
                if !b.survivors.contains(&i) {
                    assert!(inst.mean(&c.center()) < 1.0);
                }
            }
        }
    }

    #[test]
    fn constant_reward_has_zero_regret() {
        let inst = LipschitzInstance::new(
            LipschitzFamily::Constant { d: 2, value: 0.4 },
            Some(RewardDistribution::ParetoShifted {
                shape: 3.0,
                scale: 0.1,
                shift: 0.0,
            }),
        )
        .unwrap();
        let (s, spec) = schedule(1 << 14, 2, 3, 1e-3);
        let tr = run_blin_h(&inst, &s, &spec, 2).unwrap();
        assert_eq!(tr.cumulative_final, 0.0);
        assert_eq!(tr.horizon(), 1 << 14);
    }

    #[test]
    fn batch_sizes_follow_budget() {
        let inst = LipschitzInstance::new(
            LipschitzFamily::Peak {
                center: vec![0.37],
                height: 1.0,
                width: 1.0,
            },
            Some(RewardDistribution::ParetoShifted {
                shape: 3.0,
                scale: 0.1,
                shift: 0.0,
            }),
        )
        .unwrap();
        let (s, spec) = schedule(1 << 16, 1, 4, 0.01);
        let run = run_blin_h_with(&inst, &s, &spec, 3, &SimOptions::default()).unwrap();
        let mut t = 0;
        for (m, b) in run.batches.iter().enumerate() {
            assert_eq!(b.end - t, b.cubes.len() as u64 * s.n[m]);
            assert_eq!(b.cubes[0].edge(), s.r[m]);
            t = b.end;
        }
        assert_eq!(run.trace.batch_ends[..run.batches.len()], run.batches.iter().map(|b| b.end).collect::<Vec<_>>()[..]);
        let again = run_blin_h(&inst, &s, &spec, 3).unwrap();
        assert_eq!(again, run.trace);
    }

    #[test]
    fn oversized_first_batch_is_rejected() {
        let (s, spec) = schedule(64, 1, 3, 10.0);
        assert!(BlinH::new(s, &spec).is_err());
    }

    #[test]
    fn single_batch_round_robins_first_tiling() {
        let inst = peak(1, 0.5);
        let (s, spec) = schedule(1000, 1, 1, 1.0);
        let run = run_blin_h_with(&inst, &s, &spec, 0, &SimOptions::traced()).unwrap();
        let first = Cube::tiling(1, s.levels[0]).unwrap();
        let acts = run.trace.actions.unwrap();
        assert_eq!(acts[..first.len()], first[..]);
        assert!(run.batches.is_empty());
    }

    #[test]
    fn zooming_dimension_examples() {
        let res: Vec<f64> = (5..=9).map(|k| 2f64.powi(-k)).collect();
        let z = estimate_zooming_dimension(&peak(1, 0.5), &res).unwrap();
        assert!(z.slope.abs() < 0.3, "{z:?}");
        let flat = LipschitzInstance::new(LipschitzFamily::Constant { d: 1, value: 0.0 }, None).unwrap();
        let z = estimate_zooming_dimension(&flat, &res).unwrap();
        assert!((z.slope - 1.0).abs() < 0.3, "{z:?}");
        let plateau = LipschitzInstance::new(
            LipschitzFamily::Plateau {
                center: vec![0.5],
                radius: 0.4,
                height: 1.0,
                width: 1.0,
            },
            None,
        )
        .unwrap();
        let z = estimate_zooming_dimension(&plateau, &res).unwrap();
        assert!((z.slope - 1.0).abs() < 0.3, "{z:?}");
        let three = LipschitzInstance::new(LipschitzFamily::Constant { d: 3, value: 0.0 }, None).unwrap();
        assert!(estimate_zooming_dimension(&three, &res).is_err());
    }
}
