//! Replay-based agreement check between the surrogate a policy was trained
//! on and the simulator: stored emission paths go back through a fresh
//! simulator and the two warming traces are compared pointwise and by the
//! ranking of their discounted returns.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::ClimateEngine;
use crate::env::{EngineTag, TrajectoryStore};
use crate::error::{Error, Result};
use crate::nn::seeded_rng;

pub const REPORT_SCHEMA: u32 = 1;

/// `n` distinct indices below `len`, uniformly and in random order.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be positive".into()));
    }
    if n > len {
        return Err(Error::InvalidInput(format!("cannot sample {n} of {len} stored trajectories")));
    }
    Ok(rand::seq::index::sample(&mut seeded_rng(seed), len, n).into_vec())
}

/// Steps a copy of `template` through `emissions` (rows of every gas for
/// consecutive years starting at the template's next year).
pub fn replay_trace(template: &ClimateEngine, emissions: &[f64], n_years: usize) -> Result<Vec<f64>> {
    let g = template.registry().len();
    if emissions.len() != n_years * g {
        return Err(Error::Shape {
            what: "replayed emissions",
            expected: n_years * g,
            got: emissions.len(),
        });
    }
    let mut engine = template.clone();
    emissions.chunks_exact(g).map(|row| engine.step_next(row)).collect()
}

pub fn trace_rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            what: "trace lengths",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty traces".into()));
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// `-Σ_t γ^t ΔT(t)` with `t = 0` at the first entry.
pub fn discounted_temperature_return(trace: &[f64], gamma: f64) -> f64 {
    let mut w = 1.0;
    let mut acc = 0.0;
    for &v in trace {
        acc += w * v;
        w *= gamma;
    }
    -acc
}

fn tie_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for k in 1..=sorted.len() {
        if k < sorted.len() && sorted[k] == sorted[k - 1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total
}

/// Sorts `v` and returns the number of inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall's τ-b in `O(n log n)`. `None` when either input is constant,
/// where the statistic is undefined.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            what: "rank vectors",
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput("kendall tau needs at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("kendall tau needs finite values".into()));
    }
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let tx = tie_pairs(&xs);
    let mut joint = 0u64;
    let mut run = 1u64;
    for k in 1..=pairs.len() {
        if k < pairs.len() && pairs[k] == pairs[k - 1] {
            run += 1;
        } else {
            joint += run * (run - 1) / 2;
            run = 1;
        }
    }
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let discordant = merge_count(&mut ys, &mut buf);
    let ty = tie_pairs(&ys);
    let n0 = n * (n - 1) / 2;
    if tx == n0 || ty == n0 {
        return Ok(None);
    }
    // concordant - discordant over pairs untied in both coordinates
    let s = n0 as f64 - tx as f64 - ty as f64 + joint as f64 - 2.0 * discordant as f64;
    let denom = ((n0 - tx) as f64 * (n0 - ty) as f64).sqrt();
    Ok(Some(s / denom))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    pub id: u64,
    pub rmse: f64,
    pub return_net: f64,
    pub return_scm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub schema: u32,
    pub engine: EngineTag,
    pub scenario: String,
    pub n: usize,
    pub seed: u64,
    pub gamma: f64,
    pub pooled_rmse: f64,
    pub kendall_tau: Option<f64>,
    /// Pairs whose simulator returns differ by more than twice the pooled
    /// error times the discount mass, and how many of them both engines
    /// order the same way.
    pub separated_pairs: u64,
    pub agreeing_pairs: u64,
    pub trajectories: Vec<TrajectoryResult>,
}

impl ConsistencyReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "rmse", "return_net", "return_scm"])?;
        for t in &self.trajectories {
            w.write_record(&[
                t.id.to_string(),
                format!("{:e}", t.rmse),
                format!("{:e}", t.return_net),
                format!("{:e}", t.return_scm),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Samples `n` stored trajectories, replays them through copies of
/// `template` (the simulator right after its historical spin-up) and
/// compares traces and returns.
pub fn evaluate(
    store: &TrajectoryStore,
    template: &ClimateEngine,
    n: usize,
    seed: u64,
    gamma: f64,
) -> Result<ConsistencyReport> {
    let h = &store.header;
    if template.year() + 1 != h.first_year {
        return Err(Error::YearOrder {
            expected: h.first_year - 1,
            got: template.year(),
        });
    }
    if template.registry().len() != h.n_gases {
        return Err(Error::Shape {
            what: "stored gases",
            expected: template.registry().len(),
            got: h.n_gases,
        });
    }
    let picks = sample_indices(store.len(), n, seed)?;
    let mut results = Vec::with_capacity(n);
    let mut ss = 0.0;
    for &k in &picks {
        let (emissions, net) = store.get(k);
        let scm = replay_trace(template, emissions, h.n_years)?;
        ss += net.iter().zip(&scm).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        results.push(TrajectoryResult {
            id: h.episodes[k].episode,
            rmse: trace_rmse(net, &scm)?,
            return_net: discounted_temperature_return(net, gamma),
            return_scm: discounted_temperature_return(&scm, gamma),
        });
    }
    let pooled_rmse = (ss / (n * h.n_years) as f64).sqrt();
    let rn: Vec<f64> = results.iter().map(|r| r.return_net).collect();
    let rs: Vec<f64> = results.iter().map(|r| r.return_scm).collect();
    let kendall_tau = if n >= 2 { kendall_tau(&rn, &rs)? } else { None };
    let mass: f64 = (0..h.n_years).map(|t| gamma.powi(t as i32)).sum();
    let margin = 2.0 * pooled_rmse * mass;
    let (mut separated, mut agreeing) = (0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let ds = rs[i] - rs[j];
            if ds.abs() > margin {
                separated += 1;
                if (rn[i] - rn[j]).partial_cmp(&0.0) == ds.partial_cmp(&0.0) && ds != 0.0 {
                    agreeing += 1;
                }
            }
        }
    }
    Ok(ConsistencyReport {
        schema: REPORT_SCHEMA,
        engine: h.engine,
        scenario: h.scenario.clone(),
        n,
        seed,
        gamma,
        pooled_rmse,
        kendall_tau,
        separated_pairs: separated,
        agreeing_pairs: agreeing,
        trajectories: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_tau(x: &[f64], y: &[f64]) -> Option<f64> {
        let n = x.len();
        let (mut c, mut d, mut tx, mut ty) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in 0..n {
            for j in i + 1..n {
                let a = (x[i] - x[j]).signum() * f64::from(x[i] != x[j]);
                let b = (y[i] - y[j]).signum() * f64::from(y[i] != y[j]);
                if a == 0.0 && b == 0.0 {
                    continue;
                } else if a == 0.0 {
                    tx += 1.0;
                } else if b == 0.0 {
                    ty += 1.0;
                } else if a == b {
                    c += 1.0;
                } else {
                    d += 1.0;
                }
            }
        }
        let den = ((c + d + tx) * (c + d + ty)).sqrt();
        (den > 0.0 && c + d + tx > 0.0 && c + d + ty > 0.0).then(|| (c - d) / den)
    }

    #[test]
    fn tau_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&x, &x).unwrap(), Some(1.0));
        assert_eq!(kendall_tau(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap(), Some(-1.0));
        let t = kendall_tau(&[3.0, 1.0, 2.0], &[3.0, 2.0, 1.0]).unwrap().unwrap();
        assert!((t - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(kendall_tau(&[1.0; 3], &[1.0, 2.0, 3.0]).unwrap(), None);
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn rmse_and_return_examples() {
        assert!((trace_rmse(&[1.0, 2.0], &[1.0, 4.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(trace_rmse(&[0.5, 0.7], &[1.0, 1.2]).unwrap(), 0.5);
        assert!(trace_rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!((discounted_temperature_return(&[1.0, 1.0], 0.999) + 1.999).abs() < 1e-15);
        assert_eq!(discounted_temperature_return(&[0.0; 4], 0.9), 0.0);
        assert_eq!(discounted_temperature_return(&[0.7, 3.0], 0.0), -0.7);
    }

    #[test]
    fn sampling_rules() {
        assert!(sample_indices(5, 0, 1).is_err());
        assert!(sample_indices(5, 6, 1).is_err());
        let mut all = sample_indices(7, 7, 3).unwrap();
        assert_eq!(sample_indices(7, 7, 3).unwrap(), all);
        all.sort();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn tau_matches_pair_counting(v in prop::collection::vec((0u8..6, 0u8..6), 2..40)) {
            let x: Vec<f64> = v.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = v.iter().map(|p| p.1 as f64).collect();
            let fast = kendall_tau(&x, &y).unwrap();
            let slow = brute_tau(&x, &y);
            match (fast, slow) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}"),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn tau_is_invariant_to_monotone_maps(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..30)) {
            let x: Vec<f64> = v.iter().map(|p| p.0).collect();
            let y: Vec<f64> = v.iter().map(|p| p.1).collect();
            let xe: Vec<f64> = x.iter().map(|a| a.exp()).collect();
            let yc: Vec<f64> = y.iter().map(|a| a * a * a + 2.0).collect();
            let a = kendall_tau(&x, &y).unwrap();
            let b = kendall_tau(&xe, &yc).unwrap();
            prop_assert_eq!(a.is_some(), b.is_some());
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&a));
            }
        }

        #[test]
        fn rmse_is_symmetric(v in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..30)) {
            let a: Vec<f64> = v.iter().map(|p| p.0).collect();
            let b: Vec<f64> = v.iter().map(|p| p.1).collect();
            prop_assert_eq!(trace_rmse(&a, &b).unwrap(), trace_rmse(&b, &a).unwrap());
        }
    }
}
