//! Samplable heavy-tailed reward laws and finite-arm problem instances,
//! including the two-point and three-point constructions used by the
//! lower-bound instance families.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::HeavyTailSpec;
use crate::util::snap_floor;

/// Relative tolerance of the numeric moment quadrature.
pub const MOMENT_RELATIVE_TOLERANCE: f64 = 1e-8;

/// A reward law with a closed-form mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardDistribution {
    /// Two atoms on `{0, 1/γ}` with `γ = (2 Δ₀)^{1/ε}` and upper mass
    /// `γ^{1+ε} - Δ₀γ + Δγ`; the mean is `Δ₀ + Δ`.
    TwoPointNu {
        delta0: f64,
        delta: f64,
        epsilon: f64,
    },
    /// Two atoms on `{0, 1/r}` with upper mass `r^{1+ε} - multiplier·Δ·r`,
    /// where `Δ = r^ε / 3`. Multipliers 0, 1, 2 give the laws with means
    /// `3Δ`, `2Δ` and `Δ`.
    ThreePointV { r: f64, multiplier: u8, epsilon: f64 },
    /// `shift + Y` where `Y` is Pareto with minimum `scale` and tail index `shape`.
    ParetoShifted { shape: f64, scale: f64, shift: f64 },
    PointMass { value: f64 },
}

impl RewardDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::TwoPointNu {
                delta0,
                delta,
                epsilon,
            } => {
                check_epsilon(epsilon)?;
                if !(delta0 > 0.0 && delta0 < 0.5) {
                    return Err(invalid("delta0", format!("{delta0} not in (0, 1/2)")));
                }
                if !(delta >= 0.0 && delta < 0.5) {
                    return Err(invalid("delta", format!("{delta} not in [0, 1/2)")));
                }
                self.check_masses()
            }
            Self::ThreePointV {
                r,
                multiplier,
                epsilon,
            } => {
                check_epsilon(epsilon)?;
                if !(r > 0.0 && r <= 1.0) {
                    return Err(invalid("r", format!("{r} not in (0, 1]")));
                }
                if multiplier > 2 {
                    return Err(invalid("multiplier", format!("{multiplier} not in {{0, 1, 2}}")));
                }
                self.check_masses()
            }
            Self::ParetoShifted { shape, scale, shift } => {
                if !(shape > 1.0 && shape.is_finite()) {
                    return Err(invalid("shape", format!("{shape} must exceed 1")));
                }
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(invalid("scale", format!("{scale} must be positive")));
                }
                if !shift.is_finite() {
                    return Err(invalid("shift", "must be finite"));
                }
                Ok(())
            }
            Self::PointMass { value } => {
                if value.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("value", "must be finite"))
                }
            }
        }
    }

    fn check_masses(&self) -> Result<()> {
        let atoms = self.atoms().expect("discrete law");
        for &(_, p) in &atoms {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid("masses", format!("mass {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// `(value, probability)` pairs of a discrete law; `None` for Pareto.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match *self {
            Self::TwoPointNu {
                delta0,
                delta,
                epsilon,
            } => {
                let gamma = (2.0 * delta0).powf(1.0 / epsilon);
                let upper = gamma.powf(1.0 + epsilon) - delta0 * gamma + delta * gamma;
                Some(vec![(0.0, 1.0 - upper), (1.0 / gamma, upper)])
            }
            Self::ThreePointV {
                r,
                multiplier,
                epsilon,
            } => {
                let gap = r.powf(epsilon) / 3.0;
                let upper = r.powf(1.0 + epsilon) - f64::from(multiplier) * gap * r;
                Some(vec![(0.0, 1.0 - upper), (1.0 / r, upper)])
            }
            Self::PointMass { value } => Some(vec![(value, 1.0)]),
            Self::ParetoShifted { .. } => None,
        }
    }

    /// Closed-form mean.
    pub fn mean(&self) -> f64 {
        match *self {
            Self::TwoPointNu { delta0, delta, .. } => delta0 + delta,
            Self::ThreePointV {
                r,
                multiplier,
                epsilon,
            } => r.powf(epsilon) * (1.0 - f64::from(multiplier) / 3.0),
            Self::ParetoShifted { shape, scale, shift } => shift + scale * shape / (shape - 1.0),
            Self::PointMass { value } => value,
        }
    }

    /// `E|X - μ|^order`: exact for discrete laws, adaptive quadrature for Pareto.
    pub fn centered_moment(&self, order: f64) -> Result<f64> {
        if !(order > 0.0 && order.is_finite()) {
            return Err(invalid("order", format!("{order} must be positive")));
        }
        if let Some(atoms) = self.atoms() {
            let mu = self.mean();
            return Ok(atoms
                .iter()
                .map(|&(x, p)| p * (x - mu).abs().powf(order))
                .sum());
        }
        let Self::ParetoShifted { shape, scale, .. } = *self else {
            unreachable!()
        };
        if shape <= order {
            return Err(Error::InfiniteMoment { shape, order });
        }
        Ok(scale.powf(order) * pareto_unit_moment(shape, order)?)
    }

    /// One draw. Uses a single uniform from `rng` for non-degenerate laws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::PointMass { value } => value,
            Self::ParetoShifted { shape, scale, shift } => {
                let u: f64 = 1.0 - rng.random::<f64>();
                shift + scale * u.powf(-1.0 / shape)
            }
            _ => {
                let atoms = self.atoms().expect("discrete law");
                let (top, p) = atoms[1];
                if rng.random::<f64>() < p {
                    top
                } else {
                    atoms[0].0
                }
            }
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon <= 1.0 {
        Ok(())
    } else {
        Err(invalid("epsilon", format!("{epsilon} not in (0, 1]")))
    }
}

/// `E|Y - E Y|^p` for a unit-scale Pareto `Y` with tail index `a > p`.
///
/// Substituting `Y = u^{-1/a}` maps the law onto `u ∈ (0, 1]`. The kink at
/// `Y = E Y` splits the range; the `u^{-p/a}` endpoint singularity on the
/// left piece is removed by `u = u_m w^q` with `q = 1 / (1 - p/a)`.
fn pareto_unit_moment(a: f64, p: f64) -> Result<f64> {
    let m = a / (a - 1.0);
    let u_m = ((a - 1.0) / a).powf(a);
    let q = 1.0 / (1.0 - p / a);
    let h = move |u: f64| (u.powf(-1.0 / a) - m).abs().powf(p);
    let left = move |w: f64| {
        if w <= 0.0 {
            // limit of h(u_m w^q) * u_m q w^{q-1} as w -> 0
            return u_m.powf(1.0 - p / a) * q;
        }
        h(u_m * w.powf(q)) * u_m * q * w.powf(q - 1.0)
    };
    let a_part = integrate_adaptive(&left, 0.0, 1.0, MOMENT_RELATIVE_TOLERANCE)?;
    let b_part = integrate_adaptive(&h, u_m, 1.0, MOMENT_RELATIVE_TOLERANCE)?;
    Ok(a_part + b_part)
}

/// Double-exponential quadrature with recursive bisection until the error
/// estimate falls below `rel_tol` of the integral.
fn integrate_adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    let coarse = quadrature::integrate(f, a, b, 1e-6).integral.abs().max(1e-300);
    let target = rel_tol * coarse;
    let (value, err) = bisect(f, a, b, target, 0);
    if err <= target {
        Ok(value)
    } else {
        Err(Error::Quadrature {
            tolerance: rel_tol,
            estimate: err / coarse,
        })
    }
}

fn bisect(f: &dyn Fn(f64) -> f64, a: f64, b: f64, target: f64, depth: u32) -> (f64, f64) {
    let out = quadrature::integrate(f, a, b, 0.25 * target);
    if out.error_estimate <= target || depth >= 24 {
        return (out.integral, out.error_estimate);
    }
    let mid = 0.5 * (a + b);
    let (l, el) = bisect(f, a, mid, 0.5 * target, depth + 1);
    let (r, er) = bisect(f, mid, b, 0.5 * target, depth + 1);
    (l + r, el + er)
}

/// Finite-arm problem: reward laws plus cached means, optimal arm and gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArmList", into = "ArmList")]
pub struct FiniteArmInstance {
    arms: Vec<RewardDistribution>,
    means: Vec<f64>,
    star: usize,
    gaps: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ArmList {
    arms: Vec<RewardDistribution>,
}

impl TryFrom<ArmList> for FiniteArmInstance {
    type Error = Error;
    fn try_from(doc: ArmList) -> Result<Self> {
        Self::new(doc.arms)
    }
}

impl From<FiniteArmInstance> for ArmList {
    fn from(inst: FiniteArmInstance) -> Self {
        ArmList { arms: inst.arms }
    }
}

impl FiniteArmInstance {
    pub fn new(arms: Vec<RewardDistribution>) -> Result<Self> {
        if arms.is_empty() {
            return Err(invalid("arms", "instance needs at least one arm"));
        }
        for a in &arms {
            a.validate()?;
        }
        let means: Vec<f64> = arms.iter().map(RewardDistribution::mean).collect();
        let mut star = 0;
        for (i, &m) in means.iter().enumerate() {
            if m > means[star] {
                star = i;
            }
        }
        let best = means[star];
        let gaps = means.iter().map(|&m| best - m).collect();
        Ok(Self {
            arms,
            means,
            star,
            gaps,
        })
    }

    /// Builds the instance and checks `E|X - μ|^{1+ε} <= v` for every arm.
    pub fn new_certified(arms: Vec<RewardDistribution>, spec: &HeavyTailSpec) -> Result<Self> {
        let inst = Self::new(arms)?;
        inst.certify(spec)?;
        Ok(inst)
    }

    pub fn certify(&self, spec: &HeavyTailSpec) -> Result<()> {
        let order = spec.order();
        for (arm, dist) in self.arms.iter().enumerate() {
            let moment = dist.centered_moment(order)?;
            if moment > spec.v {
                return Err(Error::Certificate {
                    arm,
                    order,
                    moment,
                    bound: spec.v,
                });
            }
        }
        Ok(())
    }

    /// Largest centered `order`-th moment over the arms.
    pub fn max_centered_moment(&self, order: f64) -> Result<f64> {
        self.arms
            .iter()
            .map(|a| a.centered_moment(order))
            .try_fold(0.0f64, |acc, m| Ok(acc.max(m?)))
    }

    pub fn arms(&self) -> &[RewardDistribution] {
        &self.arms
    }
    pub fn means(&self) -> &[f64] {
        &self.means
    }
    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }
    /// Index of a maximal mean (lowest index on ties).
    pub fn star(&self) -> usize {
        self.star
    }
    pub fn len(&self) -> usize {
        self.arms.len()
    }
    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }
    pub fn best_mean(&self) -> f64 {
        self.means[self.star]
    }
}

/// The two-point law with mean `delta0 + delta`.
pub fn nu_law(delta0: f64, delta: f64, epsilon: f64) -> Result<RewardDistribution> {
    let dist = RewardDistribution::TwoPointNu {
        delta0,
        delta,
        epsilon,
    };
    dist.validate()?;
    Ok(dist)
}

/// `K` instances for the static-grid lower bound. Instance 0 plays the
/// 2Δ-mean law on arm 0 and the Δ-mean law elsewhere; instance `i >= 1`
/// additionally swaps arm `i` to the 3Δ-mean law. Arm `i` is the unique
/// optimum of instance `i` and every other arm trails it by at least Δ.
pub fn make_static_lowerbound_family(
    k: usize,
    delta: f64,
    epsilon: f64,
) -> Result<Vec<FiniteArmInstance>> {
    check_epsilon(epsilon)?;
    if k < 2 {
        return Err(invalid("K", "need at least two arms"));
    }
    if !(delta > 0.0 && 3.0 * delta <= 1.0) {
        return Err(invalid("delta", format!("{delta} not in (0, 1/3]")));
    }
    let r = (3.0 * delta).powf(1.0 / epsilon);
    let v = |multiplier| {
        let d = RewardDistribution::ThreePointV {
            r,
            multiplier,
            epsilon,
        };
        d.validate().map(|_| d)
    };
    let (v1, v2, v3) = (v(0)?, v(1)?, v(2)?);
    (0..k)
        .map(|i| {
            let arms = (0..k)
                .map(|j| match j {
                    0 => v2,
                    j if j == i => v1,
                    _ => v3,
                })
                .collect();
            FiniteArmInstance::new(arms)
        })
        .collect()
}

/// Instances and reference schedules for the adaptive-grid lower bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveLowerBoundFamily {
    pub arms: usize,
    pub batches: usize,
    pub horizon: u64,
    pub epsilon: f64,
    pub delta0: f64,
    /// `T_1, …, T_M`.
    pub times: Vec<u64>,
    /// `Δ_1, …, Δ_M`.
    pub gaps: Vec<f64>,
    /// `instances[j][k]` is `P_{j+1,k+1}` for `j < M - 1`, `k < K - 1`.
    pub instances: Vec<Vec<FiniteArmInstance>>,
    /// `P_M`: only the last arm is lifted, by `Δ_M`.
    pub terminal: FiniteArmInstance,
    /// Indices `j` (1-based) with `T_j == T_{j-1}` after flooring.
    pub collisions: Vec<usize>,
}

/// Builds `P_{j,k}` and `P_M` together with the `T_j` and `Δ_j` schedules.
pub fn make_adaptive_lowerbound_family(
    k: usize,
    m: usize,
    horizon: u64,
    epsilon: f64,
    delta0: f64,
) -> Result<AdaptiveLowerBoundFamily> {
    check_epsilon(epsilon)?;
    if k < 2 {
        return Err(invalid("K", "need at least two arms"));
    }
    if m < 1 {
        return Err(invalid("M", "need at least one batch"));
    }
    if horizon < 2 {
        return Err(invalid("T", "horizon must be at least 2"));
    }
    let eps = epsilon;
    let ratio = eps / (1.0 + eps);
    let denom = 1.0 + eps - eps * ratio.powi(m as i32 - 1);
    let tf = horizon as f64;
    let alpha = 6.0 * 2f64.powf(1.0 / eps);
    let cap = (k as f64).powf(ratio);
    let scale = (12.0 * alpha.sqrt() * m as f64).powf(2.0 * ratio)
        * 2f64.powf((3.0 * eps + 1.0) / (1.0 + eps));

    let times: Vec<u64> = (1..=m)
        .map(|j| {
            let e = (1.0 + eps - eps * ratio.powi(j as i32 - 1)) / denom;
            snap_floor(tf.powf(e)) as u64
        })
        .collect();
    let gaps: Vec<f64> = (1..=m)
        .map(|j| {
            let e = (1.0 + eps - eps * ratio.powi(j as i32 - 2)) / denom;
            cap * tf.powf(-ratio * e) / scale
        })
        .collect();
    for (j, &g) in gaps.iter().enumerate() {
        if !(g > 0.0 && g <= cap) {
            return Err(invalid(
                "gaps",
                format!("Δ_{} = {g} outside (0, K^(ε/(1+ε))]", j + 1),
            ));
        }
    }
    let collisions = (1..m).filter(|&j| times[j] == times[j - 1]).map(|j| j + 1).collect();

    let last = gaps[m - 1];
    let base = nu_law(delta0, 0.0, eps)?;
    let lifted_last = nu_law(delta0, last, eps)?;
    let instances = (0..m.saturating_sub(1))
        .map(|j| {
            let top = nu_law(delta0, gaps[j] + last, eps)?;
            (0..k - 1)
                .map(|kk| {
                    let arms = (0..k)
                        .map(|i| match i {
                            i if i == k - 1 => lifted_last,
                            i if i == kk => top,
                            _ => base,
                        })
                        .collect();
                    FiniteArmInstance::new(arms)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let terminal = FiniteArmInstance::new(
        (0..k)
            .map(|i| if i == k - 1 { lifted_last } else { base })
            .collect(),
    )?;
    Ok(AdaptiveLowerBoundFamily {
        arms: k,
        batches: m,
        horizon,
        epsilon,
        delta0,
        times,
        gaps,
        instances,
        terminal,
        collisions,
    })
}

/// Serializable instance family document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InstanceFamily {
    StaticLowerbound {
        arms: usize,
        delta: f64,
        epsilon: f64,
        instances: Vec<FiniteArmInstance>,
    },
    AdaptiveLowerbound(AdaptiveLowerBoundFamily),
}
