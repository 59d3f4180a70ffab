use climsurr_core::engine::simulate_trajectory;
use climsurr_core::scenario::baseline::{synthetic_baseline, BaselineConfig};
use climsurr_core::{default_registry, ClimateEngine, EmissionTrajectory, EngineParams, StepMode};
use proptest::prelude::*;

fn zeros(first: i32, years: usize) -> EmissionTrajectory {
    EmissionTrajectory::new(0, first, 40, vec![0.0; 40 * years]).unwrap()
}

#[test]
fn constant_forcing_settles_at_lambda_times_forcing() {
    let params = EngineParams {
        step_mode: StepMode::Incremental,
        ..EngineParams::default()
    };
    let lambda = 0.6063;
    for forcing in [1.0, 3.7] {
        let mut engine = ClimateEngine::new(params.clone(), default_registry(), &zeros(1, 1)).unwrap();
        engine.set_forcing_override(2, forcing);
        let mut t = 0.0;
        for year in 2..6000 {
            t = engine.step(year, &[0.0; 40]).unwrap();
        }
        let want = lambda * forcing;
        assert!((t - want).abs() / want < 0.01, "F={forcing}: {t} vs {want}");
    }
}

#[test]
fn no_emissions_means_no_warming_ever() {
    let params = EngineParams::default();
    let temps = simulate_trajectory(&params, &default_registry(), &zeros(1850, 300)).unwrap();
    assert_eq!(temps.len(), 300);
    assert!(temps.iter().all(|t| *t == 0.0));
}

#[test]
fn carbon_pulse_follows_the_impulse_response() {
    let reg = default_registry();
    let params = EngineParams {
        step_mode: StepMode::Incremental,
        ..EngineParams::default()
    };
    let mut pulse = vec![0.0; 40];
    pulse[reg.index_of("CO2_FF").unwrap()] = 10.0;
    let mut engine = ClimateEngine::new(params, reg.clone(), &zeros(2000, 1)).unwrap();
    engine.step(2001, &pulse).unwrap();
    // Joos et al. (2013) multi-model mean, 2.124 GtC per ppm
    let pools = [(0.2173, f64::INFINITY), (0.2240, 394.4), (0.2824, 36.54), (0.2763, 4.304)];
    let co2 = reg.index_of("CO2_FF").unwrap();
    for k in 1..=80 {
        engine.step(2001 + k, &[0.0; 40]).unwrap();
        let want = 10.0 / 2.124 * pools.iter().map(|(a, tau)| a * (-(k as f64) / tau).exp()).sum::<f64>();
        let got = engine.state().physical.concentrations[co2] - 278.0;
        assert!((got - want).abs() < 1e-9 * want, "year {k}: {got} vs {want}");
    }
}

#[test]
fn doubled_co2_forcing_is_near_the_textbook_value() {
    use climsurr_core::engine::forcing::co2_forcing;
    let f = co2_forcing(556.0, 270.0);
    assert!((f - 3.8).abs() < 0.05, "{f}");
    assert_eq!(co2_forcing(278.0, 270.0), 0.0);
}

fn baseline() -> EmissionTrajectory {
    synthetic_baseline(&default_registry(), &BaselineConfig::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn more_co2_is_never_cooler(
        cuts in prop::collection::vec(0.0f64..1.0, 60),
        extra in prop::collection::vec(0.0f64..0.5, 60),
    ) {
        let reg = default_registry();
        let base = baseline();
        let co2 = reg.index_of("CO2_FF").unwrap();
        let mut low = base.values().to_vec();
        let start = (2016 - base.start_year()) as usize;
        for (k, c) in cuts.iter().enumerate() {
            let i = (start + k) * 40 + co2;
            if i < low.len() {
                low[i] *= c;
            }
        }
        let mut high = low.clone();
        for (k, x) in extra.iter().enumerate() {
            let i = (start + k) * 40 + co2;
            if i < high.len() {
                high[i] += x * base.values()[i];
            }
        }
        let params = EngineParams::default();
        let a = simulate_trajectory(&params, &reg, &EmissionTrajectory::new(0, base.start_year(), 40, low).unwrap()).unwrap();
        let b = simulate_trajectory(&params, &reg, &EmissionTrajectory::new(0, base.start_year(), 40, high).unwrap()).unwrap();
        for (lo, hi) in a.iter().zip(&b) {
            prop_assert!(hi >= lo, "{} < {}", hi, lo);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn replay_is_bit_identical_to_incremental(scale in prop::collection::vec(0.5f64..1.5, 40), from in 1990i32..2040) {
        let reg = default_registry();
        let base = baseline();
        let past = base.slice_years(base.start_year(), from - 1).unwrap();
        let mut replay = ClimateEngine::new(EngineParams::default(), reg.clone(), &past).unwrap();
        let inc = EngineParams { step_mode: StepMode::Incremental, ..EngineParams::default() };
        let mut incremental = ClimateEngine::new(inc, reg, &past).unwrap();
        for year in from..from + 30 {
            let row: Vec<f64> = base.row(year).unwrap().iter().zip(&scale).map(|(e, s)| e * s).collect();
            prop_assert_eq!(replay.step(year, &row).unwrap().to_bits(), incremental.step(year, &row).unwrap().to_bits());
        }
    }
}
