//! Synthetic SSP-like baseline: per-gas anchor values at a handful of years,
//! interpolated with a monotone cubic in log space, times a small seeded
//! wiggle that vanishes at 2015.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rng::CounterRng;
use super::trajectory::EmissionTrajectory;
use crate::error::{Error, Result};
use crate::species::SpeciesRegistry;

pub const BASELINE_ANCHORS_CSV: &str = include_str!("../../data/baseline_anchors.csv");

pub const BASELINE_FIRST_YEAR: i32 = 1900;
pub const BASELINE_LAST_YEAR: i32 = 2075;
/// Year at which the wiggle is pinned to zero so proxy references stay fixed.
pub const WIGGLE_PIN_YEAR: i32 = 2015;

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorRow {
    pub name: String,
    pub unit: String,
    pub years: Vec<i32>,
    pub values: Vec<f64>,
    slopes: Vec<f64>,
}

impl AnchorRow {
    pub fn new(name: String, unit: String, years: Vec<i32>, values: Vec<f64>) -> Result<Self> {
        if years.len() != values.len() || years.len() < 2 {
            return Err(Error::Config(format!("{name}: need at least two anchors")));
        }
        if years.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("{name}: anchor years must increase")));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("{name}: anchor values must be positive")));
        }
        let x: Vec<f64> = years.iter().map(|&y| f64::from(y)).collect();
        let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        let slopes = pchip_slopes(&x, &logs);
        Ok(AnchorRow {
            name,
            unit,
            years,
            values,
            slopes,
        })
    }

    /// Interpolated value; years outside the anchor span are clamped.
    pub fn value_at(&self, year: i32) -> f64 {
        let n = self.years.len();
        if year <= self.years[0] {
            return self.values[0];
        }
        if year >= self.years[n - 1] {
            return self.values[n - 1];
        }
        if let Some(i) = self.years.iter().position(|&y| y == year) {
            return self.values[i];
        }
        let k = self.years.partition_point(|&y| y <= year) - 1;
        let (x0, x1) = (f64::from(self.years[k]), f64::from(self.years[k + 1]));
        let (y0, y1) = (self.values[k].ln(), self.values[k + 1].ln());
        hermite(x0, x1, y0, y1, self.slopes[k], self.slopes[k + 1], f64::from(year)).exp()
    }
}

/// Fritsch-Carlson derivative estimates; the resulting Hermite cubic is
/// monotone on every interval where the data are.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut d = vec![0.0; n];
    if n == 2 {
        d[0] = delta[0];
        d[1] = delta[0];
        return d;
    }
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] > 0.0 {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + t) * h * d0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * h * d1
}

pub fn parse_anchor_table(text: &str) -> Result<Vec<AnchorRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("name") || headers.get(1) != Some("unit") {
        return Err(Error::Config("anchor table must start with name,unit".into()));
    }
    let years = headers
        .iter()
        .skip(2)
        .map(|h| {
            h.strip_prefix('y')
                .and_then(|y| y.parse().ok())
                .ok_or_else(|| Error::Config(format!("bad anchor column {h}")))
        })
        .collect::<Result<Vec<i32>>>()?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let values = record
            .iter()
            .skip(2)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad anchor value {v}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(AnchorRow::new(
            record[0].to_string(),
            record[1].to_string(),
            years.clone(),
            values,
        )?);
    }
    Ok(rows)
}

/// The shipped anchor table.
pub fn anchor_table() -> Vec<AnchorRow> {
    parse_anchor_table(BASELINE_ANCHORS_CSV).expect("shipped anchor table is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub seed: u64,
    pub first_year: i32,
    pub last_year: i32,
    /// Upper bound on |log wiggle|.
    pub wiggle_amplitude: f64,
    /// Uniform multiplier on every gas, for calibrating warming levels.
    pub scale: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            seed: 0,
            first_year: BASELINE_FIRST_YEAR,
            last_year: BASELINE_LAST_YEAR,
            wiggle_amplitude: 0.02,
            scale: 1.0,
        }
    }
}

const WIGGLE_TERMS: usize = 3;
const WIGGLE_STREAM: u64 = u64::MAX;

/// Smooth positive per-gas trajectories over `[first_year, last_year]`.
pub fn synthetic_baseline(registry: &SpeciesRegistry, config: &BaselineConfig) -> Result<EmissionTrajectory> {
    if config.first_year > config.last_year {
        return Err(Error::Config("baseline first_year after last_year".into()));
    }
    if !(config.scale.is_finite() && config.scale > 0.0) {
        return Err(Error::Config("baseline scale must be positive".into()));
    }
    let anchors = anchor_table();
    let rows: Vec<&AnchorRow> = registry
        .names()
        .map(|name| {
            anchors
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| Error::Config(format!("no baseline anchors for {name}")))
        })
        .collect::<Result<_>>()?;

    let rng = CounterRng::new(config.seed);
    // per gas: (amplitude, period, phase) for each wiggle term
    let terms: Vec<Vec<(f64, f64, f64)>> = (0..rows.len())
        .map(|g| {
            (0..WIGGLE_TERMS)
                .map(|k| {
                    let base = 3 * k as u64;
                    let u = |j| rng.uniform(WIGGLE_STREAM, g as u64, base + j);
                    let amp = config.wiggle_amplitude / (2.0 * WIGGLE_TERMS as f64) * u(0);
                    let period = 15.0 + 45.0 * u(1);
                    let phase = TAU * u(2);
                    (amp, period, phase)
                })
                .collect()
        })
        .collect();

    let n_years = (config.last_year - config.first_year + 1) as usize;
    let mut values = Vec::with_capacity(n_years * rows.len());
    for year in config.first_year..=config.last_year {
        let s = f64::from(year - WIGGLE_PIN_YEAR);
        for (row, gas_terms) in rows.iter().zip(&terms) {
            let eps: f64 = gas_terms
                .iter()
                .map(|&(a, p, phi)| a * ((TAU * s / p + phi).sin() - phi.sin()))
                .sum();
            values.push(config.scale * row.value_at(year) * eps.exp());
        }
    }
    EmissionTrajectory::new(0, config.first_year, rows.len(), values)
}

/// Loads a user-supplied baseline in the scenario CSV layout.
pub fn load_baseline_csv(registry: &SpeciesRegistry, path: &Path) -> Result<EmissionTrajectory> {
    let traj = EmissionTrajectory::from_csv_path(registry, 0, path)?;
    if traj.values().iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidInput(format!(
            "{}: baseline emissions must be strictly positive",
            path.display()
        )));
    }
    Ok(traj)
}
