use climsurr_core::consistency::{evaluate, kendall_tau, replay_trace};
use climsurr_core::env::{AgentAction, ClimateEnv, EngineTag, ScenarioSpec, SimulatorBackend, TrajectoryStore};
use climsurr_core::scenario::baseline::{synthetic_baseline, BaselineConfig};
use climsurr_core::{default_registry, ClimateEngine, EngineParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// τ-b from its textbook definition over all pairs.
fn tau_b_by_pairs(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mut s, mut n1, mut n2, mut n0) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in 0..i {
            let a = (x[i] - x[j]).partial_cmp(&0.0).unwrap() as i32 as f64;
            let b = (y[i] - y[j]).partial_cmp(&0.0).unwrap() as i32 as f64;
            s += a * b;
            n0 += 1.0;
            n1 += f64::from(a == 0.0);
            n2 += f64::from(b == 0.0);
        }
    }
    let den = ((n0 - n1) * (n0 - n2)).sqrt();
    (den > 0.0).then(|| s / den)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tau_matches_brute_force_with_ties(seed: u64, levels in 2u32..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..1000).map(|_| rng.gen_range(0..levels) as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| if rng.gen_bool(0.3) { rng.gen_range(0..levels) as f64 } else { *v }).collect();
        let fast = kendall_tau(&x, &y).unwrap();
        let slow = tau_b_by_pairs(&x, &y);
        prop_assert_eq!(fast.is_some(), slow.is_some());
        if let (Some(a), Some(b)) = (fast, slow) {
            prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }
    }
}

#[test]
fn simulator_episodes_replay_bit_for_bit() {
    let reg = default_registry();
    let base = synthetic_baseline(&reg, &BaselineConfig::default()).unwrap();
    let spec = ScenarioSpec::homogeneous();
    let hist = base.slice_years(base.start_year(), spec.first_year - 1).unwrap();
    let params = EngineParams::default();
    let backend = SimulatorBackend::new(params.clone(), reg.clone(), &hist).unwrap();
    let mut env = ClimateEnv::new(spec.clone(), reg.clone(), base.clone(), Box::new(backend)).unwrap();
    let mut store = TrajectoryStore::new(EngineTag::Sim, "homogeneous", spec.first_year, 50, reg.len());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for episode in 0..6 {
        let schedule: Vec<Vec<AgentAction>> = (0..35)
            .map(|_| (0..spec.n_agents).map(|_| AgentAction::from_indices(std::array::from_fn(|_| rng.gen_range(0..3)))).collect())
            .collect();
        let rec = env.run_schedule(episode, &schedule).unwrap();
        store.push(episode, &rec).unwrap();
    }
    let template = ClimateEngine::new(params, reg, &hist).unwrap();
    for k in 0..store.len() {
        let (emissions, dt) = store.get(k);
        let replayed = replay_trace(&template, emissions, 50).unwrap();
        assert!(replayed.iter().zip(dt).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    let report = evaluate(&store, &template, 6, 1, 0.999).unwrap();
    assert_eq!(report.pooled_rmse, 0.0);
    assert_eq!(report.kendall_tau, Some(1.0));
}
