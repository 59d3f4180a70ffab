use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rng::CounterRng;
use super::trajectory::EmissionTrajectory;
use crate::error::{Error, Result};
use crate::io::{read_container, write_container};
use crate::species::SpeciesRegistry;

pub const FIRST_SCENARIO_YEAR: i32 = 2016;
pub const LAST_SCENARIO_YEAR: i32 = 2075;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    pub n_scenarios: usize,
    pub alpha: f64,
    pub first_year: i32,
    pub last_year: i32,
    pub seed: u64,
    /// Multiplier bounds for controllable gases.
    pub controllable_bounds: (f64, f64),
    /// Multiplier bounds for every other gas.
    pub fixed_bounds: (f64, f64),
    /// Per-gas overrides by name.
    pub bound_overrides: BTreeMap<String, (f64, f64)>,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            n_scenarios: 2000,
            alpha: 0.8,
            first_year: FIRST_SCENARIO_YEAR,
            last_year: LAST_SCENARIO_YEAR,
            seed: 0,
            controllable_bounds: (0.925, 1.075),
            fixed_bounds: (1.0, 1.0),
            bound_overrides: BTreeMap::new(),
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.first_year > self.last_year {
            return Err(Error::Config("horizon first_year after last_year".into()));
        }
        let all = [self.controllable_bounds, self.fixed_bounds]
            .into_iter()
            .chain(self.bound_overrides.values().copied());
        for (lo, hi) in all {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(Error::Config(format!("invalid multiplier bounds ({lo}, {hi})")));
            }
        }
        Ok(())
    }

    /// Per-gas bounds in registry order.
    pub fn bounds(&self, registry: &SpeciesRegistry) -> Result<Vec<(f64, f64)>> {
        for name in self.bound_overrides.keys() {
            if registry.index_of(name).is_none() {
                return Err(Error::Config(format!("bound override for unknown gas {name}")));
            }
        }
        let mask = registry.controllable_mask();
        Ok(registry
            .names()
            .zip(mask)
            .map(|(name, controllable)| {
                self.bound_overrides.get(name).copied().unwrap_or(if controllable {
                    self.controllable_bounds
                } else {
                    self.fixed_bounds
                })
            })
            .collect())
    }
}

/// Year-over-year growth factors. Row `k` holds `E(first + k) / E(first + k - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthTable {
    pub first_year: i32,
    pub n_gases: usize,
    pub values: Vec<f64>,
}

impl GrowthTable {
    pub fn row(&self, year: i32) -> Option<&[f64]> {
        let k = year - self.first_year;
        if k < 0 || (k as usize + 1) * self.n_gases > self.values.len() {
            return None;
        }
        let k = k as usize;
        Some(&self.values[k * self.n_gases..(k + 1) * self.n_gases])
    }

    pub fn last_year(&self) -> i32 {
        self.first_year + (self.values.len() / self.n_gases) as i32 - 1
    }
}

pub fn baseline_growth(baseline: &EmissionTrajectory) -> Result<GrowthTable> {
    if let Some(v) = baseline.values().iter().find(|&&v| v <= 0.0) {
        return Err(Error::InvalidInput(format!(
            "baseline emissions must be strictly positive, found {v}"
        )));
    }
    if baseline.n_years() < 2 {
        return Err(Error::InvalidInput("baseline needs at least two years".into()));
    }
    let n = baseline.n_gases();
    let v = baseline.values();
    let values = (n..v.len()).map(|i| v[i] / v[i - n]).collect();
    Ok(GrowthTable {
        first_year: baseline.start_year() + 1,
        n_gases: n,
        values,
    })
}

/// Raw draws and smoothed multipliers for one gas over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
}

/// `ζ(t) = ζ(t-1)^α · ζ̃(t)^(1-α)` from `ζ = 1` in the year before the horizon,
/// with `ζ̃(t) ~ U(lo, hi)` drawn from the counter generator at
/// `(stream = scenario_id, lane = gas, index = t - first_year)`.
pub fn sample_smoothed_multipliers(
    config: &PerturbationConfig,
    scenario_id: u64,
    gas: usize,
    bounds: (f64, f64),
) -> Result<Multipliers> {
    let (lo, hi) = bounds;
    if lo > hi {
        return Err(Error::Config(format!("lower bound {lo} above upper bound {hi}")));
    }
    let n = (config.last_year - config.first_year + 1) as usize;
    let mut raw = vec![lo; n];
    if lo != hi {
        CounterRng::new(config.seed).fill_uniform(scenario_id, gas as u64, 0, &mut raw);
        for u in raw.iter_mut() {
            *u = lo + (hi - lo) * *u;
        }
    }
    let mut smoothed = Vec::with_capacity(n);
    let mut zeta = 1.0f64;
    for &r in &raw {
        zeta = zeta.powf(config.alpha) * r.powf(1.0 - config.alpha);
        smoothed.push(zeta);
    }
    Ok(Multipliers { raw, smoothed })
}

/// Inverts the smoothing: `ζ̃(t) = (ζ(t) / ζ(t-1)^α)^(1 / (1-α))`.
pub fn unsmooth(smoothed: &[f64], alpha: f64) -> Vec<f64> {
    let mut prev = 1.0f64;
    smoothed
        .iter()
        .map(|&z| {
            let raw = (z / prev.powf(alpha)).powf(1.0 / (1.0 - alpha));
            prev = z;
            raw
        })
        .collect()
}

/// Baseline before the horizon, `E(t) = E(t-1) · δ_base(t) · ζ(t)` within it,
/// evaluated as `E_base(t) · ζ(1) ⋯ ζ(t)`.
/// `zetas[g]` covers the horizon years of `config`.
pub fn build_scenario(
    baseline: &EmissionTrajectory,
    growth: &GrowthTable,
    zetas: &[Vec<f64>],
    first_year: i32,
    last_year: i32,
    scenario_id: u64,
) -> Result<EmissionTrajectory> {
    let n = baseline.n_gases();
    if zetas.len() != n {
        return Err(Error::Shape {
            what: "multiplier gas count",
            expected: n,
            got: zetas.len(),
        });
    }
    let horizon = (last_year - first_year + 1) as usize;
    if zetas.iter().any(|z| z.len() != horizon) {
        return Err(Error::InvalidInput("multiplier sequences do not cover the horizon".into()));
    }
    if !(baseline.contains_year(first_year - 1) && baseline.contains_year(last_year)) {
        return Err(Error::InvalidInput(format!(
            "baseline {}..={} does not cover {}..={last_year}",
            baseline.start_year(),
            baseline.end_year(),
            first_year - 1
        )));
    }
    if growth.row(first_year).is_none() || growth.row(last_year).is_none() {
        return Err(Error::InvalidInput("growth table does not cover the horizon".into()));
    }
    let prefix_end = (first_year - baseline.start_year()) as usize * n;
    let mut values = Vec::with_capacity(prefix_end + horizon * n);
    values.extend_from_slice(&baseline.values()[..prefix_end]);
    // The recursion telescopes to E_base(t) times the running product of ζ,
    // which keeps unperturbed gases bit-identical to the baseline.
    let mut cumulative = vec![1.0f64; n];
    for k in 0..horizon {
        let base_row = baseline.row(first_year + k as i32).expect("checked");
        for g in 0..n {
            cumulative[g] *= zetas[g][k];
            values.push(base_row[g] * cumulative[g]);
        }
    }
    EmissionTrajectory::new(scenario_id, baseline.start_year(), n, values)
}

pub fn generate_scenario(
    baseline: &EmissionTrajectory,
    growth: &GrowthTable,
    bounds: &[(f64, f64)],
    config: &PerturbationConfig,
    scenario_id: u64,
) -> Result<EmissionTrajectory> {
    let zetas = bounds
        .iter()
        .enumerate()
        .map(|(g, &b)| sample_smoothed_multipliers(config, scenario_id, g, b).map(|m| m.smoothed))
        .collect::<Result<Vec<_>>>()?;
    build_scenario(baseline, growth, &zetas, config.first_year, config.last_year, scenario_id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub seed: u64,
    pub alpha: f64,
    pub n_scenarios: usize,
    pub first_year: i32,
    pub last_year: i32,
    pub bounds: BTreeMap<String, (f64, f64)>,
    pub rng: String,
    pub registry_hash: String,
    pub baseline_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub baseline: EmissionTrajectory,
    pub scenarios: Vec<EmissionTrajectory>,
    pub manifest: EnsembleManifest,
}

pub const RNG_DESCRIPTION: &str = "chacha8 counter: key=seed LE, stream=scenario_id, word_pos=2*(gas<<32|year-first_year), u=(x>>11)*2^-53";

/// Scenarios `1..=S`; scenario 0 is reserved for the baseline.
pub fn generate_ensemble(
    registry: &SpeciesRegistry,
    baseline: &EmissionTrajectory,
    config: &PerturbationConfig,
) -> Result<Ensemble> {
    config.validate()?;
    if baseline.n_gases() != registry.len() {
        return Err(Error::Shape {
            what: "baseline gas count",
            expected: registry.len(),
            got: baseline.n_gases(),
        });
    }
    let growth = baseline_growth(baseline)?;
    let bounds = config.bounds(registry)?;
    let scenarios = (1..=config.n_scenarios as u64)
        .map(|id| generate_scenario(baseline, &growth, &bounds, config, id))
        .collect::<Result<Vec<_>>>()?;
    let manifest = EnsembleManifest {
        seed: config.seed,
        alpha: config.alpha,
        n_scenarios: config.n_scenarios,
        first_year: config.first_year,
        last_year: config.last_year,
        bounds: registry.names().map(str::to_string).zip(bounds).collect(),
        rng: RNG_DESCRIPTION.to_string(),
        registry_hash: registry.hash(),
        baseline_hash: trajectory_hash(baseline),
    };
    Ok(Ensemble {
        baseline: baseline.clone(),
        scenarios,
        manifest,
    })
}

pub fn trajectory_hash(t: &EmissionTrajectory) -> String {
    let mut bytes = Vec::with_capacity(8 * t.values().len() + 16);
    bytes.extend_from_slice(&t.start_year().to_le_bytes());
    bytes.extend_from_slice(&(t.n_gases() as u64).to_le_bytes());
    for v in t.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    crate::io::sha256_bytes(&bytes)
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleHeader {
    manifest: EnsembleManifest,
    gases: Vec<String>,
    baseline_start: i32,
    baseline_years: usize,
    scenario_ids: Vec<u64>,
}

pub const ENSEMBLE_KIND: &str = "ensemble";

impl Ensemble {
    /// Single batch file: the baseline once, then only the horizon rows of
    /// each scenario (earlier years equal the baseline by construction).
    pub fn write(&self, registry: &SpeciesRegistry, path: &Path) -> Result<()> {
        let n = registry.len();
        let horizon_start = (self.manifest.first_year - self.baseline.start_year()) as usize * n;
        let mut values = self.baseline.values().to_vec();
        for s in &self.scenarios {
            values.extend_from_slice(&s.values()[horizon_start..]);
        }
        let header = EnsembleHeader {
            manifest: self.manifest.clone(),
            gases: registry.names().map(str::to_string).collect(),
            baseline_start: self.baseline.start_year(),
            baseline_years: self.baseline.n_years(),
            scenario_ids: self.scenarios.iter().map(|s| s.scenario_id).collect(),
        };
        write_container(path, ENSEMBLE_KIND, &header, &values)
    }

    pub fn read(registry: &SpeciesRegistry, path: &Path) -> Result<Self> {
        let (header, values): (EnsembleHeader, _) = read_container(path, ENSEMBLE_KIND)?;
        if header.manifest.registry_hash != registry.hash() || header.gases.len() != registry.len() {
            return Err(Error::format(path, "ensemble was built for a different species registry"));
        }
        let n = registry.len();
        let base_len = header.baseline_years * n;
        if values.len() < base_len {
            return Err(Error::format(path, "ensemble payload shorter than its baseline"));
        }
        let baseline = EmissionTrajectory::new(0, header.baseline_start, n, values[..base_len].to_vec())?;
        let prefix = (header.manifest.first_year - header.baseline_start) as usize * n;
        let horizon = (header.manifest.last_year - header.manifest.first_year + 1) as usize * n;
        if values.len() != base_len + horizon * header.scenario_ids.len() {
            return Err(Error::format(path, "ensemble payload length mismatch"));
        }
        let scenarios = header
            .scenario_ids
            .iter()
            .enumerate()
            .map(|(k, &id)| {
                let mut v = values[..prefix].to_vec();
                let a = base_len + k * horizon;
                v.extend_from_slice(&values[a..a + horizon]);
                EmissionTrajectory::new(id, header.baseline_start, n, v)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble {
            baseline,
            scenarios,
            manifest: header.manifest,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::baseline::{synthetic_baseline, BaselineConfig};
    use crate::species::default_registry;

    fn small(n: usize) -> PerturbationConfig {
        PerturbationConfig {
            n_scenarios: n,
            seed: 9,
            ..PerturbationConfig::default()
        }
    }

    #[test]
    fn growth_of_constant_and_hand_case() {
        let flat = EmissionTrajectory::new(0, 2000, 1, vec![5.0; 4]).unwrap();
        assert!(baseline_growth(&flat).unwrap().values.iter().all(|&d| d == 1.0));
        let two = EmissionTrajectory::new(0, 2000, 1, vec![100.0, 101.0]).unwrap();
        let g = baseline_growth(&two).unwrap();
        assert!((g.row(2001).unwrap()[0] - 1.01).abs() < 1e-15);
        assert!(baseline_growth(&EmissionTrajectory::new(0, 2000, 1, vec![1.0, 0.0]).unwrap()).is_err());
    }

    #[test]
    fn growth_round_trip_reconstructs_baseline() {
        let reg = default_registry();
        let base = synthetic_baseline(&reg, &BaselineConfig::default()).unwrap();
        let growth = baseline_growth(&base).unwrap();
        for g in 0..reg.len() {
            let mut e = base.get(1900, g).unwrap();
            for year in 1901..=2075 {
                e *= growth.row(year).unwrap()[g];
                let truth = base.get(year, g).unwrap();
                assert!(((e - truth) / truth).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn multiplier_hand_case_and_degenerate_bounds() {
        let cfg = small(1);
        let fixed = sample_smoothed_multipliers(&cfg, 1, 7, (1.0, 1.0)).unwrap();
        assert!(fixed.smoothed.iter().all(|&z| z == 1.0));
        let top = sample_smoothed_multipliers(&cfg, 1, 0, (1.075, 1.075)).unwrap();
        assert!((top.smoothed[0] - 1.075f64.powf(0.2)).abs() < 1e-15);
        assert!((top.smoothed[0] - 1.014569).abs() < 1e-6);
        assert!(sample_smoothed_multipliers(&cfg, 1, 0, (1.1, 1.0)).is_err());
    }

    #[test]
    fn scenario_hand_case() {
        let base = EmissionTrajectory::new(0, 2015, 1, vec![100.0, 101.0]).unwrap();
        let growth = baseline_growth(&base).unwrap();
        let s = build_scenario(&base, &growth, &[vec![1.0146]], 2016, 2016, 1).unwrap();
        assert!((s.get(2016, 0).unwrap() - 100.0 * 1.024746).abs() < 1e-9);
        let same = build_scenario(&base, &growth, &[vec![1.0]], 2016, 2016, 1).unwrap();
        assert_eq!(same.values(), base.values());
    }

    #[test]
    fn ensemble_write_read_round_trip() {
        let reg = default_registry();
        let base = synthetic_baseline(&reg, &BaselineConfig::default()).unwrap();
        let ens = generate_ensemble(&reg, &base, &small(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        ens.write(&reg, &path).unwrap();
        let back = Ensemble::read(&reg, &path).unwrap();
        assert_eq!(back, ens);
        let path2 = dir.path().join("f.bin");
        generate_ensemble(&reg, &base, &small(3)).unwrap().write(&reg, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }
}
