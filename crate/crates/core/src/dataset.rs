//! Windowed supervised samples built from (scenario, temperature trace)
//! pairs, scenario-level splits and normalization statistics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{simulate_trajectory, EngineParams};
use crate::error::{Error, Result};
use crate::io::{read_container, write_container};
use crate::scenario::{Ensemble, EmissionTrajectory};
use crate::species::SpeciesRegistry;

pub const DEFAULT_WINDOW: usize = 65;
pub const FIRST_TARGET_YEAR: i32 = 2015;
pub const LAST_TARGET_YEAR: i32 = 2075;
pub const DATASET_KIND: &str = "dataset";

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub scenario_id: u64,
    pub target_year: i32,
    /// `(W + 1) x |C|`, oldest row first; the last row is the target year.
    pub x: Vec<f64>,
    pub y: f64,
}

/// Controllable-gas emissions and ΔT for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSeries {
    pub scenario_id: u64,
    pub start_year: i32,
    pub n_controllable: usize,
    pub emissions: Vec<f64>,
    pub temps: Vec<f64>,
}

impl ScenarioSeries {
    pub fn new(registry: &SpeciesRegistry, trajectory: &EmissionTrajectory, temps: Vec<f64>) -> Result<Self> {
        if temps.len() != trajectory.n_years() {
            return Err(Error::Shape {
                what: "temperature trace",
                expected: trajectory.n_years(),
                got: temps.len(),
            });
        }
        if temps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("non-finite temperature".into()));
        }
        let emissions = trajectory
            .rows()
            .flat_map(|(_, row)| registry.project(row))
            .collect();
        Ok(ScenarioSeries {
            scenario_id: trajectory.scenario_id,
            start_year: trajectory.start_year(),
            n_controllable: registry.controllable().len(),
            emissions,
            temps,
        })
    }

    pub fn end_year(&self) -> i32 {
        self.start_year + self.temps.len() as i32 - 1
    }

    /// Raw window for `target` into `out` (length `(window + 1) * |C|`).
    pub fn fill_window(&self, target: i32, window: usize, out: &mut [f64]) -> Result<()> {
        let c = self.n_controllable;
        let first = target - window as i32;
        if first < self.start_year || target > self.end_year() {
            return Err(Error::InvalidInput(format!(
                "scenario {} covers {}..={}, window needs {first}..={target}",
                self.scenario_id,
                self.start_year,
                self.end_year()
            )));
        }
        if out.len() != (window + 1) * c {
            return Err(Error::Shape {
                what: "window buffer",
                expected: (window + 1) * c,
                got: out.len(),
            });
        }
        let a = (first - self.start_year) as usize * c;
        out.copy_from_slice(&self.emissions[a..a + out.len()]);
        Ok(())
    }

    pub fn temp_at(&self, year: i32) -> f64 {
        self.temps[(year - self.start_year) as usize]
    }
}

/// One sample per target year in `[first_target, last_target]`.
pub fn window_samples(
    registry: &SpeciesRegistry,
    scenario: &EmissionTrajectory,
    temps: &[f64],
    window: usize,
    first_target: i32,
    last_target: i32,
) -> Result<Vec<WindowSample>> {
    let series = ScenarioSeries::new(registry, scenario, temps.to_vec())?;
    let c = series.n_controllable;
    (first_target..=last_target)
        .map(|t| {
            let mut x = vec![0.0; (window + 1) * c];
            series.fill_window(t, window, &mut x)?;
            Ok(WindowSample {
                scenario_id: series.scenario_id,
                target_year: t,
                x,
                y: series.temp_at(t),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    pub assignment: BTreeMap<u64, Split>,
}

impl SplitManifest {
    pub fn ids(&self, split: Split) -> Vec<u64> {
        self.assignment
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn of(&self, id: u64) -> Option<Split> {
        self.assignment.get(&id).copied()
    }
}

/// Seeded shuffle, then the first `round(r_train n)` ids go to train and the
/// next `round(r_val n)` to validation.
pub fn split_by_scenario(ids: &[u64], ratios: (f64, f64, f64), seed: u64) -> Result<SplitManifest> {
    if ids.is_empty() {
        return Err(Error::InvalidInput("no scenario ids to split".into()));
    }
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("duplicate scenario ids".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let n = sorted.len() as f64;
    let n_train = (a * n).round() as usize;
    let n_val = ((b * n).round() as usize).min(sorted.len() - n_train);
    let assignment = sorted
        .iter()
        .enumerate()
        .map(|(k, &id)| {
            let split = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (id, split)
        })
        .collect();
    Ok(SplitManifest {
        ratios,
        seed,
        assignment,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub gas_mean: Vec<f64>,
    pub gas_std: Vec<f64>,
    pub temp_mean: f64,
    pub temp_std: f64,
}

impl NormStats {
    /// Population mean/std per channel over every row of every window, and
    /// over every target.
    pub fn fit(samples: &[WindowSample], n_channels: usize) -> Result<Self> {
        Self::fit_iter(samples.iter().map(|s| (s.x.as_slice(), s.y)), n_channels)
    }

    pub fn fit_iter<'a, I>(samples: I, n_channels: usize) -> Result<Self>
    where
        I: Iterator<Item = (&'a [f64], f64)> + Clone,
    {
        let mut rows = 0usize;
        let mut count = 0usize;
        let mut sum = vec![0.0; n_channels];
        let mut tsum = 0.0;
        for (x, y) in samples.clone() {
            for row in x.chunks_exact(n_channels) {
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
                rows += 1;
            }
            tsum += y;
            count += 1;
        }
        if count == 0 {
            return Err(Error::InvalidInput("cannot fit normalization on no samples".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / rows as f64).collect();
        let temp_mean = tsum / count as f64;
        let mut sq = vec![0.0; n_channels];
        let mut tsq = 0.0;
        for (x, y) in samples {
            for row in x.chunks_exact(n_channels) {
                for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            tsq += (y - temp_mean) * (y - temp_mean);
        }
        let std: Vec<f64> = sq.iter().map(|s| (s / rows as f64).sqrt()).collect();
        let temp_std = (tsq / count as f64).sqrt();
        if let Some(k) = std.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::InvalidInput(format!("input channel {k} has zero variance")));
        }
        if !(temp_std > 0.0) {
            return Err(Error::InvalidInput("temperature target has zero variance".into()));
        }
        Ok(NormStats {
            gas_mean: mean,
            gas_std: std,
            temp_mean,
            temp_std,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.gas_mean.len()
    }

    pub fn apply(&self, x: &mut [f64]) {
        let c = self.n_channels();
        for row in x.chunks_exact_mut(c) {
            for ((v, m), s) in row.iter_mut().zip(&self.gas_mean).zip(&self.gas_std) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn invert(&self, x: &mut [f64]) {
        let c = self.n_channels();
        for row in x.chunks_exact_mut(c) {
            for ((v, m), s) in row.iter_mut().zip(&self.gas_mean).zip(&self.gas_std) {
                *v = *v * s + m;
            }
        }
    }

    pub fn normalize_temp(&self, t: f64) -> f64 {
        (t - self.temp_mean) / self.temp_std
    }

    pub fn denormalize_temp(&self, z: f64) -> f64 {
        z * self.temp_std + self.temp_mean
    }
}

/// All scenarios of an ensemble with their temperature traces, a split and
/// training-split normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub window: usize,
    pub first_target: i32,
    pub last_target: i32,
    pub controllable: Vec<String>,
    pub registry_hash: String,
    pub series: Vec<ScenarioSeries>,
    pub split: SplitManifest,
    pub norm: NormStats,
}

/// Index of one sample: series position and target year.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    pub series: usize,
    pub target_year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub window: usize,
    pub first_target: i32,
    pub last_target: i32,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            window: DEFAULT_WINDOW,
            first_target: FIRST_TARGET_YEAR,
            last_target: LAST_TARGET_YEAR,
            ratios: (0.7, 0.15, 0.15),
            seed: 0,
        }
    }
}

impl Dataset {
    pub fn build(registry: &SpeciesRegistry, series: Vec<ScenarioSeries>, config: &DatasetConfig) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::InvalidInput("dataset needs at least one scenario".into()));
        }
        for s in &series {
            let first = config.first_target - config.window as i32;
            if s.start_year > first || s.end_year() < config.last_target {
                return Err(Error::InvalidInput(format!(
                    "scenario {} covers {}..={}, need {first}..={}",
                    s.scenario_id,
                    s.start_year,
                    s.end_year(),
                    config.last_target
                )));
            }
        }
        let ids: Vec<u64> = series.iter().map(|s| s.scenario_id).collect();
        let split = split_by_scenario(&ids, config.ratios, config.seed)?;
        let mut ds = Dataset {
            window: config.window,
            first_target: config.first_target,
            last_target: config.last_target,
            controllable: registry.controllable_names().iter().map(|s| s.to_string()).collect(),
            registry_hash: registry.hash(),
            series,
            split,
            norm: NormStats {
                gas_mean: vec![],
                gas_std: vec![],
                temp_mean: 0.0,
                temp_std: 1.0,
            },
        };
        ds.norm = ds.fit_norm()?;
        Ok(ds)
    }

    /// Runs the simulator over every scenario of `ensemble` and builds the dataset.
    pub fn from_ensemble(
        registry: &SpeciesRegistry,
        params: &EngineParams,
        ensemble: &Ensemble,
        config: &DatasetConfig,
    ) -> Result<Self> {
        let series = ensemble
            .scenarios
            .iter()
            .map(|s| {
                let temps = simulate_trajectory(params, registry, s)?;
                ScenarioSeries::new(registry, s, temps)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::build(registry, series, config)
    }

    fn fit_norm(&self) -> Result<NormStats> {
        let c = self.n_controllable();
        let train = self.samples(Split::Train);
        let windows: Vec<(Vec<f64>, f64)> = train
            .iter()
            .map(|r| {
                let mut x = vec![0.0; self.row_len()];
                self.fill_raw(*r, &mut x).expect("in range");
                (x, self.target(*r))
            })
            .collect();
        NormStats::fit_iter(windows.iter().map(|(x, y)| (x.as_slice(), *y)), c)
    }

    pub fn n_controllable(&self) -> usize {
        self.controllable.len()
    }

    /// Values per window.
    pub fn row_len(&self) -> usize {
        (self.window + 1) * self.n_controllable()
    }

    pub fn samples_per_scenario(&self) -> usize {
        (self.last_target - self.first_target + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.series.len() * self.samples_per_scenario()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Samples of one split in canonical (scenario, year) order.
    pub fn samples(&self, split: Split) -> Vec<SampleRef> {
        self.series
            .iter()
            .enumerate()
            .filter(|(_, s)| self.split.of(s.scenario_id) == Some(split))
            .flat_map(|(i, _)| {
                (self.first_target..=self.last_target).map(move |t| SampleRef {
                    series: i,
                    target_year: t,
                })
            })
            .collect()
    }

    pub fn fill_raw(&self, r: SampleRef, out: &mut [f64]) -> Result<()> {
        self.series[r.series].fill_window(r.target_year, self.window, out)
    }

    pub fn fill_normalized(&self, r: SampleRef, out: &mut [f64]) -> Result<()> {
        self.fill_raw(r, out)?;
        self.norm.apply(out);
        Ok(())
    }

    pub fn target(&self, r: SampleRef) -> f64 {
        self.series[r.series].temp_at(r.target_year)
    }

    pub fn sample(&self, r: SampleRef) -> WindowSample {
        let mut x = vec![0.0; self.row_len()];
        self.fill_raw(r, &mut x).expect("sample refs are in range");
        WindowSample {
            scenario_id: self.series[r.series].scenario_id,
            target_year: r.target_year,
            x,
            y: self.target(r),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let header = DatasetHeader {
            window: self.window,
            first_target: self.first_target,
            last_target: self.last_target,
            controllable: self.controllable.clone(),
            registry_hash: self.registry_hash.clone(),
            split: self.split.clone(),
            norm: self.norm.clone(),
            scenarios: self
                .series
                .iter()
                .map(|s| (s.scenario_id, s.start_year, s.temps.len()))
                .collect(),
        };
        let mut values = Vec::new();
        for s in &self.series {
            values.extend_from_slice(&s.emissions);
            values.extend_from_slice(&s.temps);
        }
        write_container(path, DATASET_KIND, &header, &values)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (h, values): (DatasetHeader, Vec<f64>) = read_container(path, DATASET_KIND)?;
        let c = h.controllable.len();
        let expected: usize = h.scenarios.iter().map(|(_, _, n)| n * (c + 1)).sum();
        if values.len() != expected {
            return Err(Error::format(path, "dataset payload length mismatch"));
        }
        let mut at = 0;
        let series = h
            .scenarios
            .iter()
            .map(|&(id, start, n)| {
                let emissions = values[at..at + n * c].to_vec();
                let temps = values[at + n * c..at + n * (c + 1)].to_vec();
                at += n * (c + 1);
                ScenarioSeries {
                    scenario_id: id,
                    start_year: start,
                    n_controllable: c,
                    emissions,
                    temps,
                }
            })
            .collect();
        Ok(Dataset {
            window: h.window,
            first_target: h.first_target,
            last_target: h.last_target,
            controllable: h.controllable,
            registry_hash: h.registry_hash,
            series,
            split: h.split,
            norm: h.norm,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    window: usize,
    first_target: i32,
    last_target: i32,
    controllable: Vec<String>,
    registry_hash: String,
    split: SplitManifest,
    norm: NormStats,
    scenarios: Vec<(u64, i32, usize)>,
}
