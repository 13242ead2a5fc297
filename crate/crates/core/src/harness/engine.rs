use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A policy under the batch protocol: it commits to a whole batch of
/// actions up front and only sees their rewards once the batch is over.
///
/// Policies never receive means, gaps, or the optimal action.
pub trait BatchPolicy {
    type Action: Clone;

    /// Actions for steps `t + 1, t + 2, …`. An empty plan means the policy
    /// has nothing left to play.
    fn plan(&mut self, t: u64) -> Result<Vec<Self::Action>>;

    /// Rewards for the last plan, in plan order, revealed at the batch end.
    fn observe(&mut self, rewards: &[f64]) -> Result<()>;
}

/// The engine's view of a problem instance.
pub trait Environment {
    type Action;

    fn mean(&self, action: &Self::Action) -> f64;
    fn best_mean(&self) -> f64;
    /// Identifier of the random stream feeding `action`'s rewards.
    fn stream(&self, action: &Self::Action) -> u64;
    fn sample(&self, action: &Self::Action, rng: &mut ChaCha8Rng) -> f64;
}

/// Per-step pseudo-regret of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace<A> {
    /// `μ_⋆ - μ_{x_t}` for `t = 1..=T`.
    pub instantaneous: Vec<f64>,
    pub cumulative_final: f64,
    /// Times `t_1 < … < t_M` at which rewards were revealed.
    pub batch_ends: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<A>>,
}

impl<A> RegretTrace<A> {
    pub fn horizon(&self) -> u64 {
        self.instantaneous.len() as u64
    }

    /// Running sum of the instantaneous regret.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.instantaneous
            .iter()
            .map(|r| {
                acc += r;
                acc
            })
            .collect()
    }
}

/// Adds `offset` to the reward drawn at time `step` (1-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub step: u64,
    pub offset: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    pub record_actions: bool,
    pub perturbation: Option<Perturbation>,
}

impl SimOptions {
    pub fn traced() -> Self {
        Self {
            record_actions: true,
            perturbation: None,
        }
    }
}

/// Rewards for stream `s` come from ChaCha8 seeded with the run seed on
/// stream `s`, consumed in draw order. The `k`-th reward of an arm is
/// therefore fixed by `(seed, arm, k)` regardless of how pulls interleave.
struct RewardStreams {
    seed: u64,
    streams: HashMap<u64, ChaCha8Rng>,
}

impl RewardStreams {
    fn new(seed: u64) -> Self {
        Self {
            seed,
            streams: HashMap::new(),
        }
    }

    fn get(&mut self, id: u64) -> &mut ChaCha8Rng {
        let seed = self.seed;
        self.streams.entry(id).or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        })
    }
}

/// Runs `policy` against `env` for `horizon` steps under the batch protocol.
pub fn simulate<P, E>(
    policy: &mut P,
    env: &E,
    horizon: u64,
    seed: u64,
    options: &SimOptions,
) -> Result<RegretTrace<P::Action>>
where
    P: BatchPolicy,
    E: Environment<Action = P::Action>,
{
    let best = env.best_mean();
    let mut streams = RewardStreams::new(seed);
    let mut instantaneous = Vec::with_capacity(horizon as usize);
    let mut actions = options.record_actions.then(|| Vec::with_capacity(horizon as usize));
    let mut batch_ends = Vec::new();
    let mut t = 0u64;
    let mut rewards = Vec::new();
    while t < horizon {
        let plan = policy.plan(t)?;
        if plan.is_empty() {
            return Err(Error::PolicyStalled { t, horizon });
        }
        if t + plan.len() as u64 > horizon {
            return Err(Error::HorizonOverrun {
                t,
                planned: plan.len(),
                horizon,
            });
        }
        rewards.clear();
        for (i, a) in plan.iter().enumerate() {
            let step = t + i as u64 + 1;
            let mut y = env.sample(a, streams.get(env.stream(a)));
            if let Some(p) = options.perturbation {
                if p.step == step {
                    y += p.offset;
                }
            }
            rewards.push(y);
            instantaneous.push((best - env.mean(a)).max(0.0));
        }
        t += plan.len() as u64;
        batch_ends.push(t);
        if let Some(log) = actions.as_mut() {
            log.extend(plan);
        }
        policy.observe(&rewards)?;
    }
    let cumulative_final = instantaneous.iter().sum();
    Ok(RegretTrace {
        instantaneous,
        cumulative_final,
        batch_ends,
        actions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    struct TwoArms;
    impl Environment for TwoArms {
        type Action = usize;
        fn mean(&self, a: &usize) -> f64 {
            [1.0, 0.25][*a]
        }
        fn best_mean(&self) -> f64 {
            1.0
        }
        fn stream(&self, a: &usize) -> u64 {
            *a as u64
        }
        fn sample(&self, a: &usize, rng: &mut ChaCha8Rng) -> f64 {
            self.mean(a) + rng.random::<f64>()
        }
    }

    /// Plays fixed-size batches alternating arms, recording what it saw.
    struct Fixed {
        batch: usize,
        seen: Vec<f64>,
    }
    impl BatchPolicy for Fixed {
        type Action = usize;
        fn plan(&mut self, _t: u64) -> Result<Vec<usize>> {
            Ok((0..self.batch).map(|i| i % 2).collect())
        }
        fn observe(&mut self, rewards: &[f64]) -> Result<()> {
            self.seen.extend_from_slice(rewards);
            Ok(())
        }
    }

    #[test]
    fn regret_from_true_means() {
        let mut p = Fixed {
            batch: 4,
            seen: vec![],
        };
        let tr = simulate(&mut p, &TwoArms, 12, 3, &SimOptions::traced()).unwrap();
        assert_eq!(tr.batch_ends, vec![4, 8, 12]);
        assert_eq!(tr.cumulative_final, 6.0 * 0.75);
        assert_eq!(p.seen.len(), 12);
        let from_log: f64 = tr.actions.unwrap().iter().map(|&a| [0.0, 0.75][a]).sum();
        assert_eq!(from_log, tr.cumulative_final);
    }

    #[test]
    fn overrun_and_stall_are_errors() {
        let mut p = Fixed {
            batch: 5,
            seen: vec![],
        };
        assert!(matches!(
            simulate(&mut p, &TwoArms, 12, 3, &SimOptions::default()),
            Err(Error::HorizonOverrun { t: 10, .. })
        ));
        let mut q = Fixed {
            batch: 0,
            seen: vec![],
        };
        assert!(matches!(
            simulate(&mut q, &TwoArms, 12, 3, &SimOptions::default()),
            Err(Error::PolicyStalled { t: 0, .. })
        ));
    }

    #[test]
    fn arm_streams_do_not_depend_on_interleaving() {
        struct Order(Vec<usize>, Vec<f64>);
        impl BatchPolicy for Order {
            type Action = usize;
            fn plan(&mut self, _t: u64) -> Result<Vec<usize>> {
                Ok(self.0.clone())
            }
            fn observe(&mut self, r: &[f64]) -> Result<()> {
                self.1.extend_from_slice(r);
                Ok(())
            }
        }
        let mut a = Order(vec![0, 0, 1, 1], vec![]);
        let mut b = Order(vec![1, 0, 1, 0], vec![]);
        simulate(&mut a, &TwoArms, 4, 77, &SimOptions::default()).unwrap();
        simulate(&mut b, &TwoArms, 4, 77, &SimOptions::default()).unwrap();
        assert_eq!(a.1[0], b.1[1]);
        assert_eq!(a.1[1], b.1[3]);
        assert_eq!(a.1[2], b.1[0]);
        assert_eq!(a.1[3], b.1[2]);
    }
}
