use htbandits::estimators::HeavyTailSpec;
use htbandits::finite_arm::{ingest_batch, plan_batch, run_base_h_with, BaseHState};
use htbandits::grids::{diameter_schedule, static_geometric_grid, static_minimax_grid};
use htbandits::harness::SimOptions;
use htbandits::lipschitz::{run_blin_h_with, Cube, LipschitzFamily, LipschitzInstance};
use htbandits::rewards::{nu_law, FiniteArmInstance, RewardDistribution};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arm_strategy() -> impl Strategy<Value = RewardDistribution> {
    prop_oneof![
        (1.5f64..4.0, 0.05f64..1.0, 0.0f64..1.0)
            .prop_map(|(shape, scale, shift)| RewardDistribution::ParetoShifted { shape, scale, shift }),
        (0.0f64..0.45).prop_map(|d| nu_law(0.25, d, 1.0).unwrap()),
        (-1.0f64..1.0).prop_map(|value| RewardDistribution::PointMass { value }),
    ]
}

fn instance_strategy() -> impl Strategy<Value = FiniteArmInstance> {
    prop::collection::vec(arm_strategy(), 1..7).prop_map(|arms| FiniteArmInstance::new(arms).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn base_h_keeps_pulls_balanced_and_active_set_shrinking(
        inst in instance_strategy(),
        horizon in 50u64..3000,
        m in 1usize..6,
        v in 0.01f64..2.0,
        seed in any::<u64>(),
    ) {
        let grid = static_geometric_grid(horizon, m).unwrap();
        let spec = HeavyTailSpec::new(1.0, v, 12.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = BaseHState::new(inst.len()).unwrap();
        let points = &grid.points;
        let batches = points.len() - 1;
        for b in 0..batches {
            let plan = plan_batch(&state, points[b], points[b + 1]).unwrap();
            if state.committed.is_none() {
                prop_assert!(plan.iter().all(|a| state.active.contains(a)));
            }
            let rewards: Vec<f64> = plan.iter().map(|&a| inst.arms()[a].sample(&mut rng)).collect();
            let before = state.active.clone();
            if b + 1 == batches {
                break;
            }
            ingest_batch(&mut state, &plan, &rewards, &spec, horizon, b + 2 == batches).unwrap();
            prop_assert!(!state.active.is_empty());
            prop_assert!(state.active.iter().all(|a| before.contains(a)));
            prop_assert!(state.imbalance() <= 1);
        }
    }

    #[test]
    fn base_h_regret_matches_action_log(
        inst in instance_strategy(),
        horizon in 20u64..2000,
        m in 1usize..5,
        seed in any::<u64>(),
    ) {
        let grid = static_minimax_grid(horizon, m, 1.0).unwrap();
        let spec = HeavyTailSpec::new(1.0, 1.0, 12.0).unwrap();
        let (trace, _) = run_base_h_with(&inst, &grid, &spec, seed, &SimOptions::traced()).unwrap();
        let actions = trace.actions.as_ref().unwrap();
        prop_assert_eq!(actions.len() as u64, horizon);
        let total: f64 = actions.iter().map(|&a| inst.gaps()[a]).sum();
        prop_assert!((total - trace.cumulative_final).abs() <= 1e-9 * total.max(1.0));
        prop_assert_eq!(*trace.batch_ends.last().unwrap(), horizon);
    }

    #[test]
    fn base_h_is_deterministic_per_seed(inst in instance_strategy(), seed in any::<u64>()) {
        let grid = static_geometric_grid(800, 3).unwrap();
        let spec = HeavyTailSpec::new(1.0, 0.5, 12.0).unwrap();
        let a = run_base_h_with(&inst, &grid, &spec, seed, &SimOptions::traced()).unwrap();
        let b = run_base_h_with(&inst, &grid, &spec, seed, &SimOptions::traced()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn cube_partition_nests_and_tiles(
        d in 1usize..4,
        level in 0u32..4,
        shift in 1u32..3,
        pick in any::<prop::sample::Index>(),
    ) {
        let tiles = Cube::tiling(d, level).unwrap();
        prop_assert_eq!(tiles.len(), 1usize << (level as usize * d));
        let parent = pick.get(&tiles);
        let factor = 1u64 << shift;
        let kids = parent.partition(factor).unwrap();
        prop_assert_eq!(kids.len() as u64, factor.pow(d as u32));
        let volume: f64 = kids.iter().map(|c| c.edge().powi(d as i32)).sum();
        prop_assert!((volume - parent.edge().powi(d as i32)).abs() < 1e-12);
        let mut keys: Vec<u64> = kids.iter().map(Cube::key).collect();
        keys.sort_unstable();
        keys.dedup();
        prop_assert_eq!(keys.len(), kids.len());
        for k in &kids {
            prop_assert!(parent.contains(&k.center()));
            prop_assert!(parent.contains(&k.corner()));
            prop_assert_eq!(k.edge() * factor as f64, parent.edge());
        }
    }

    #[test]
    fn blin_h_regret_matches_action_log(
        c in 0.0f64..1.0,
        e in 10u32..13,
        seed in any::<u64>(),
    ) {
        let inst = LipschitzInstance::new(
            LipschitzFamily::Peak { center: vec![c], height: 1.0, width: 1.0 },
            Some(RewardDistribution::ParetoShifted { shape: 3.0, scale: 0.1, shift: 0.0 }),
        ).unwrap();
        let spec = HeavyTailSpec::new(1.0, 0.01, 12.0).unwrap();
        let horizon = 1u64 << e;
        let schedule = diameter_schedule(horizon, 1, 0.0, 1.0, 4, &spec).unwrap();
        let run = run_blin_h_with(&inst, &schedule, &spec, seed, &SimOptions::traced()).unwrap();
        let actions = run.trace.actions.as_ref().unwrap();
        prop_assert_eq!(actions.len() as u64, horizon);
        let total: f64 = actions.iter().map(|cube| inst.mu_star() - inst.mean(&cube.center())).sum();
        prop_assert!((total - run.trace.cumulative_final).abs() <= 1e-9 * total.max(1.0));
        for pair in run.batches.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            // every cube played in a batch descends from a survivor of the previous one
            for cube in &next.cubes {
                prop_assert!(prev.survivors.iter().any(|&s| prev.cubes[s].contains(&cube.center())));
            }
        }
    }
}

#[test]
fn sampling_streams_are_isolated_per_arm() {
    // arm i draws from its own stream of the run seed
    let arms: Vec<_> = (0..3)
        .map(|i| RewardDistribution::ParetoShifted {
            shape: 2.5,
            scale: 0.2,
            shift: i as f64 * 0.1,
        })
        .collect();
    let full = FiniteArmInstance::new(arms.clone()).unwrap();
    let grid = static_geometric_grid(600, 1).unwrap();
    let spec = HeavyTailSpec::new(1.0, 1.0, 12.0).unwrap();
    let (_, st) = run_base_h_with(&full, &grid, &spec, 11, &SimOptions::default()).unwrap();
    assert_eq!(st.buffers[1].len(), 200);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    rng.set_stream(1);
    let direct: Vec<f64> = (0..st.buffers[1].len()).map(|_| arms[1].sample(&mut rng)).collect();
    assert_eq!(direct, st.buffers[1]);
}
