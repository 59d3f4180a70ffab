use climsurr_core::env::{AgentAction, ClimateEnv, MockBackend, ScenarioSpec, Shares};
use climsurr_core::scenario::baseline::{synthetic_baseline, BaselineConfig};
use climsurr_core::{default_registry, EmissionTrajectory, SpeciesRegistry};
use proptest::prelude::*;

fn setup() -> (SpeciesRegistry, EmissionTrajectory) {
    let reg = default_registry();
    let base = synthetic_baseline(&reg, &BaselineConfig::default()).unwrap();
    (reg, base)
}

fn actions(n_agents: usize, years: usize) -> impl Strategy<Value = Vec<Vec<AgentAction>>> {
    prop::collection::vec(
        prop::collection::vec(prop::array::uniform4(0u8..3).prop_map(AgentAction::from_indices), n_agents),
        years,
    )
}

/// Agent `i`'s share of gas `g`.
fn share(spec: &ScenarioSpec, i: usize, g: usize) -> f64 {
    match &spec.shares {
        Shares::PerAgent(s) => s[i],
        Shares::PerGas(s) => s[i][g],
    }
}

/// Global emissions per year rebuilt from the growth rule, independently of
/// the environment.
fn expected_emissions(
    reg: &SpeciesRegistry,
    base: &EmissionTrajectory,
    spec: &ScenarioSpec,
    schedule: &[Vec<AgentAction>],
) -> Vec<Vec<f64>> {
    let levels = [spec.levels.energy, spec.levels.methane, spec.levels.agriculture];
    let names = ["energy", "methane", "agriculture"];
    let g_all = reg.len();
    let mut agent: Vec<Vec<f64>> = (0..spec.n_agents)
        .map(|i| {
            let b = base.row(spec.first_year - 1).unwrap();
            (0..g_all).map(|g| share(spec, i, g) * b[g]).collect()
        })
        .collect();
    let mut out = Vec::new();
    let total_years = schedule.len() + spec.lookahead_years;
    for k in 0..total_years {
        let year = spec.first_year + k as i32;
        let (now, prev) = (base.row(year).unwrap(), base.row(year - 1).unwrap());
        for (i, e) in agent.iter_mut().enumerate() {
            for (g, v) in e.iter_mut().enumerate() {
                let mut dev = 0.0;
                if let Some(joint) = schedule.get(k) {
                    let idx = joint[i].indices();
                    for (lever, name) in names.iter().enumerate() {
                        let coef = spec.policy.get(*name).and_then(|r| r.get(&reg.species()[g].name)).copied().unwrap_or(0.0);
                        dev += levels[lever][idx[lever] as usize] * coef;
                    }
                }
                *v *= now[g] / prev[g] * (1.0 + dev);
            }
        }
        out.push((0..g_all).map(|g| agent.iter().map(|e| e[g]).sum()).collect());
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn invariants_hold_along_random_play(
        schedule in actions(10, 35),
        dt in 0.0f64..3.0,
        hetero: bool,
    ) {
        let (reg, base) = setup();
        let spec = if hetero { ScenarioSpec::heterogeneous() } else { ScenarioSpec::homogeneous() };
        let pmax = spec.prevention_max;
        let mut env = ClimateEnv::new(spec.clone(), reg.clone(), base.clone(), Box::new(MockBackend::constant(dt))).unwrap();
        let obs_len = env.observation_len();
        env.reset(0).unwrap();
        let schedule: Vec<Vec<AgentAction>> = schedule.into_iter().map(|j| j[..spec.n_agents].to_vec()).collect();
        for (k, joint) in schedule.iter().enumerate() {
            let out = env.step(joint).unwrap();
            prop_assert_eq!(out.observation.len(), obs_len);
            prop_assert!(out.rewards.iter().all(|r| *r <= 0.0 && r.is_finite()));
            prop_assert!(env.state().prevention.iter().all(|p| (0.0..=pmax).contains(p)));
            prop_assert!(env.state().emissions.iter().all(|e| *e >= 0.0));
            prop_assert_eq!(out.done, k + 1 == schedule.len());
        }
        let rec = env.take_record();
        prop_assert_eq!(rec.n_years(), 35 + 15);
        let want = expected_emissions(&reg, &base, &spec, &schedule);
        for (k, row) in want.iter().enumerate() {
            for (g, w) in row.iter().enumerate() {
                let got = rec.emission_row(k)[g];
                prop_assert!((got - w).abs() <= 1e-12 * w.abs().max(1.0), "year {} gas {}: {} vs {}", k, g, got, w);
            }
        }
    }

    #[test]
    fn identical_agents_with_identical_actions_earn_identical_rewards(
        schedule in actions(1, 35),
        dt in 0.5f64..2.5,
    ) {
        let (reg, base) = setup();
        let mut env = ClimateEnv::new(ScenarioSpec::homogeneous(), reg, base, Box::new(MockBackend::constant(dt))).unwrap();
        let joint: Vec<Vec<AgentAction>> = schedule.iter().map(|a| vec![a[0]; 4]).collect();
        let rec = env.run_schedule(3, &joint).unwrap();
        for r in &rec.rewards {
            prop_assert!(r.iter().all(|x| *x == r[0]));
        }
    }

    #[test]
    fn the_engine_sees_the_global_sum(schedule in actions(10, 35), w in 1e-6f64..1e-4) {
        let (reg, base) = setup();
        let mut weights = vec![0.0; reg.len()];
        weights[reg.index_of("CO2_FF").unwrap()] = w;
        weights[reg.index_of("CH4").unwrap()] = 0.1 * w;
        let mock = MockBackend { initial: 0.9, offset: 0.2, weights: weights.clone() };
        let mut env = ClimateEnv::new(ScenarioSpec::heterogeneous(), reg, base, Box::new(mock)).unwrap();
        let rec = env.run_schedule(0, &schedule).unwrap();
        for (k, dt) in rec.dt.iter().enumerate() {
            let want = 0.2 + weights.iter().zip(rec.emission_row(k)).map(|(a, b)| a * b).sum::<f64>();
            prop_assert!((dt - want).abs() < 1e-12);
        }
    }
}

#[test]
fn same_seed_resets_give_identical_observations() {
    let (reg, base) = setup();
    let c = reg.controllable().len();
    for spec in [ScenarioSpec::homogeneous(), ScenarioSpec::heterogeneous()] {
        let n = spec.n_agents;
        let mut env = ClimateEnv::new(spec, reg.clone(), base.clone(), Box::new(MockBackend::constant(1.0))).unwrap();
        let a = env.reset(5).unwrap();
        env.step(&vec![AgentAction::from_indices([2, 2, 2, 2]); n]).unwrap();
        assert_eq!(env.reset(5).unwrap(), a);
        // global year and temperature, then emissions and prevention per agent
        assert_eq!(a.len(), 2 + n * (2 * c + 1));
        if n == 4 {
            assert_eq!(a.len(), 46);
        }
    }
}
