use std::collections::BTreeSet;

use climsurr_core::dataset::{split_by_scenario, Dataset, DatasetConfig, Split};
use climsurr_core::engine::simulate_trajectory;
use climsurr_core::scenario::baseline::{synthetic_baseline, BaselineConfig};
use climsurr_core::scenario::ensemble::{generate_ensemble, PerturbationConfig};
use climsurr_core::{default_registry, EngineParams};
use proptest::prelude::*;

#[test]
fn windows_hold_the_raw_controllable_history_and_the_simulated_target() {
    let reg = default_registry();
    let base = synthetic_baseline(&reg, &BaselineConfig::default()).unwrap();
    let cfg = PerturbationConfig {
        n_scenarios: 20,
        seed: 3,
        ..PerturbationConfig::default()
    };
    let ens = generate_ensemble(&reg, &base, &cfg).unwrap();
    let params = EngineParams::default();
    let ds = Dataset::from_ensemble(&reg, &params, &ens, &DatasetConfig::default()).unwrap();
    assert_eq!(ds.samples_per_scenario(), 61);
    assert_eq!(ds.len(), 61 * 20);

    let controllable = ["CO2_FF", "CO2_AFOLU", "CH4", "N2O", "SO2"].map(|n| reg.index_of(n).unwrap());
    for split in [Split::Train, Split::Val, Split::Test] {
        for r in ds.samples(split).into_iter().step_by(37) {
            let s = ds.sample(r);
            let scenario = ens.scenarios.iter().find(|e| e.scenario_id == s.scenario_id).unwrap();
            let temps = simulate_trajectory(&params, &reg, scenario).unwrap();
            let t = s.target_year;
            assert_eq!(s.y, temps[(t - scenario.start_year()) as usize]);
            assert_eq!(s.x.len(), 66 * 5);
            for (k, year) in (t - 65..=t).enumerate() {
                let row = scenario.row(year).unwrap();
                for (j, &g) in controllable.iter().enumerate() {
                    assert_eq!(s.x[k * 5 + j], row[g]);
                }
            }
        }
    }
    let years: BTreeSet<i32> = ds.samples(Split::Train).iter().map(|r| r.target_year).collect();
    assert_eq!(years.first(), Some(&2015));
    assert_eq!(years.last(), Some(&2075));
}

proptest! {
    #[test]
    fn scenario_split_is_a_partition(n in 1usize..3000, seed: u64) {
        let ids: Vec<u64> = (1..=n as u64).map(|i| i * 7 + 1).collect();
        let m = split_by_scenario(&ids, (0.7, 0.15, 0.15), seed).unwrap();
        let sets: Vec<BTreeSet<u64>> = [Split::Train, Split::Val, Split::Test]
            .iter()
            .map(|s| m.ids(*s).into_iter().collect())
            .collect();
        prop_assert!(sets[0].is_disjoint(&sets[1]));
        prop_assert!(sets[0].is_disjoint(&sets[2]));
        prop_assert!(sets[1].is_disjoint(&sets[2]));
        let all: BTreeSet<u64> = sets.iter().flatten().copied().collect();
        prop_assert_eq!(all, ids.iter().copied().collect::<BTreeSet<_>>());
        prop_assert_eq!(sets[0].len(), (0.7 * n as f64).round() as usize);
        prop_assert_eq!(m.ids(Split::Train), split_by_scenario(&ids, (0.7, 0.15, 0.15), seed).unwrap().ids(Split::Train));
    }
}

#[test]
fn two_thousand_scenarios_split_seventy_fifteen_fifteen() {
    let ids: Vec<u64> = (1..=2000).collect();
    let m = split_by_scenario(&ids, (0.7, 0.15, 0.15), 0).unwrap();
    assert_eq!(m.ids(Split::Train).len(), 1400);
    assert_eq!(m.ids(Split::Val).len(), 300);
    assert_eq!(m.ids(Split::Test).len(), 300);
}

#[test]
fn round_trip_through_disk_keeps_everything() {
    let reg = default_registry();
    let base = synthetic_baseline(&reg, &BaselineConfig::default()).unwrap();
    let cfg = PerturbationConfig {
        n_scenarios: 4,
        ..PerturbationConfig::default()
    };
    let ens = generate_ensemble(&reg, &base, &cfg).unwrap();
    let ds = Dataset::from_ensemble(&reg, &EngineParams::default(), &ens, &DatasetConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.bin");
    ds.write(&path).unwrap();
    assert_eq!(Dataset::read(&path).unwrap(), ds);
}
