//! Figure data as CSV. Rendering is left to whatever plotting tool reads it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use rand::seq::SliceRandom;

use climsurr_core::dataset::{Dataset, Split};
use climsurr_core::manifest::RunManifest;
use climsurr_core::nn::seeded_rng;
use climsurr_core::scenario::ensemble::Ensemble;
use climsurr_core::surrogate::{predict_refs, SurrogateModel};
use climsurr_core::default_registry;

use crate::commands::ENSEMBLE_FILE;
use crate::common::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    /// Median, 5% and 95% of ΔT per year across a `simulate` directory.
    TempEnsemble,
    /// Same bands for each controllable gas's emissions, with the baseline.
    EmissionEnsemble,
    /// Simulator against surrogate on random test scenarios.
    TestSequences,
    /// Episode returns per agent with a rolling mean, one run per input.
    RewardCurve,
    /// Lever effort per agent and across agents with a rolling mean.
    LeverCurve,
}

#[derive(Args, Debug)]
pub struct PlotDataArgs {
    #[arg(long, value_enum)]
    figure: Figure,
    /// Input directory or file; repeat for curves from several runs.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Surrogate checkpoint (test-sequences).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Scenarios drawn (test-sequences).
    #[arg(long, default_value_t = 3)]
    count: usize,
    /// Rolling-mean width in episodes (curves).
    #[arg(long, default_value_t = 50)]
    window: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn band(mut values: Vec<f64>) -> [f64; 4] {
    values.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    [quantile(&values, 0.5), quantile(&values, 0.05), quantile(&values, 0.95), mean]
}

/// Trailing mean over at most `window` values.
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut sum = 0.0;
    values
        .iter()
        .enumerate()
        .map(|(k, v)| {
            sum += v;
            if k >= w {
                sum -= values[k - w];
            }
            sum / (k + 1).min(w) as f64
        })
        .collect()
}

fn run_label(path: &Path) -> String {
    let dir = if path.is_dir() { Some(path) } else { path.parent() };
    dir.and_then(|d| d.file_name())
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn plot_data(ctx: &Ctx, a: PlotDataArgs) -> anyhow::Result<()> {
    let name = a.figure.to_possible_value().map_or("figure".into(), |v| v.get_name().to_string());
    let out = ctx.out_path(a.out.clone(), &format!("{name}.csv"));
    ctx.guard(std::slice::from_ref(&out))?;
    let mut manifest = RunManifest::start("plot-data", &(name.as_str(), a.count, a.window))?;
    manifest.seed("draw", a.seed);
    ensure_dir(&parent_dir(&out))?;
    let mut w = csv::Writer::from_path(&out)?;
    match a.figure {
        Figure::TempEnsemble => temp_ensemble(&a, &mut manifest, &mut w)?,
        Figure::EmissionEnsemble => emission_ensemble(&a, &mut manifest, &mut w)?,
        Figure::TestSequences => test_sequences(&a, &mut manifest, &mut w)?,
        Figure::RewardCurve => reward_curve(&a, &mut manifest, &mut w)?,
        Figure::LeverCurve => lever_curve(&a, &mut manifest, &mut w)?,
    }
    w.flush()?;
    drop(w);
    manifest.output(&out)?;
    manifest.finish(&parent_dir(&out))?;
    println!("wrote {}", out.display());
    Ok(())
}

type Out = csv::Writer<std::fs::File>;

fn temp_ensemble(a: &PlotDataArgs, m: &mut RunManifest, w: &mut Out) -> anyhow::Result<()> {
    let mut by_year: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for dir in &a.input {
        require(dir)?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("temp_")))
            .collect();
        files.sort();
        for f in files {
            m.input(&f)?;
            let (first, temps) = read_temps(&f)?;
            for (k, t) in temps.into_iter().enumerate() {
                by_year.entry(first + k as i32).or_default().push(t);
            }
        }
    }
    if by_year.is_empty() {
        bail!("no temperature files found");
    }
    w.write_record(["year", "median", "p05", "p95", "mean", "n"])?;
    for (year, v) in by_year {
        let n = v.len();
        let b = band(v);
        w.write_record([
            year.to_string(),
            format!("{:e}", b[0]),
            format!("{:e}", b[1]),
            format!("{:e}", b[2]),
            format!("{:e}", b[3]),
            n.to_string(),
        ])?;
    }
    Ok(())
}

fn emission_ensemble(a: &PlotDataArgs, m: &mut RunManifest, w: &mut Out) -> anyhow::Result<()> {
    let registry = default_registry();
    let path = file_in(&a.input[0], ENSEMBLE_FILE);
    require(&path)?;
    m.input(&path)?;
    let ens = Ensemble::read(&registry, &path)?;
    let first = ens.manifest.first_year - 1;
    w.write_record(["gas", "year", "median", "p05", "p95", "mean", "baseline"])?;
    for &g in registry.controllable() {
        let gas = &registry.species()[g].name;
        for year in first..=ens.manifest.last_year {
            let values: Vec<f64> = ens.scenarios.iter().filter_map(|s| s.get(year, g)).collect();
            let b = band(values);
            let base = ens.baseline.get(year, g).unwrap_or(f64::NAN);
            w.write_record([
                gas.clone(),
                year.to_string(),
                format!("{:e}", b[0]),
                format!("{:e}", b[1]),
                format!("{:e}", b[2]),
                format!("{:e}", b[3]),
                format!("{base:e}"),
            ])?;
        }
    }
    Ok(())
}

fn test_sequences(a: &PlotDataArgs, m: &mut RunManifest, w: &mut Out) -> anyhow::Result<()> {
    let ckpt = a.ckpt.as_ref().context("test-sequences needs --ckpt")?;
    for p in [&a.input[0], ckpt] {
        require(p)?;
        m.input(p)?;
    }
    let ds = Dataset::read(&a.input[0])?;
    let model = SurrogateModel::load(ckpt)?;
    let mut ids = ds.split.ids(Split::Test);
    ids.shuffle(&mut seeded_rng(a.seed));
    ids.truncate(a.count);
    ids.sort_unstable();
    let refs = ds.samples(Split::Test);
    w.write_record(["scenario", "year", "simulator", "surrogate"])?;
    for id in ids {
        let picked: Vec<_> = refs.iter().copied().filter(|r| ds.series[r.series].scenario_id == id).collect();
        let preds = predict_refs(&model, &ds, &picked)?;
        for (r, p) in picked.iter().zip(preds) {
            w.write_record([
                id.to_string(),
                r.target_year.to_string(),
                format!("{:e}", ds.target(*r)),
                format!("{p:e}"),
            ])?;
        }
    }
    Ok(())
}

fn read_table(path: &Path) -> anyhow::Result<(Vec<String>, Vec<Vec<String>>)> {
    require(path)?;
    let mut r = csv::Reader::from_path(path)?;
    let head = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()?;
    Ok((head, rows))
}

fn reward_curve(a: &PlotDataArgs, m: &mut RunManifest, w: &mut Out) -> anyhow::Result<()> {
    w.write_record(["run", "episode", "env_steps", "agent", "return", "rolling_mean"])?;
    for input in &a.input {
        let path = file_in(input, "rewards.csv");
        m.input(&path)?;
        let run = run_label(&path);
        let (head, rows) = read_table(&path)?;
        for (col, agent) in head.iter().enumerate().skip(2) {
            let values: Vec<f64> = rows.iter().map(|r| r[col].parse()).collect::<Result<_, _>>()?;
            let smooth = rolling_mean(&values, a.window);
            for ((r, v), s) in rows.iter().zip(&values).zip(smooth) {
                w.write_record([&run, &r[0], &r[1], agent, &format!("{v:e}"), &format!("{s:e}")])?;
            }
        }
    }
    Ok(())
}

fn lever_curve(a: &PlotDataArgs, m: &mut RunManifest, w: &mut Out) -> anyhow::Result<()> {
    w.write_record(["run", "episode", "env_steps", "agent", "lever", "effort", "rolling_mean"])?;
    for input in &a.input {
        let path = file_in(input, "levers.csv");
        m.input(&path)?;
        let run = run_label(&path);
        let (head, rows) = read_table(&path)?;
        let levers = &head[3..];
        // (agent label, lever) -> [(episode, steps, value)]
        let mut series: BTreeMap<(String, usize), Vec<(String, String, f64)>> = BTreeMap::new();
        let mut means: BTreeMap<(String, String), (Vec<f64>, usize)> = BTreeMap::new();
        for r in &rows {
            for (l, cell) in r[3..].iter().enumerate() {
                let v: f64 = cell.parse()?;
                series.entry((r[2].clone(), l)).or_default().push((r[0].clone(), r[1].clone(), v));
                let e = means.entry((r[0].clone(), r[1].clone())).or_insert((vec![0.0; levers.len()], 0));
                e.0[l] += v;
                if l == 0 {
                    e.1 += 1;
                }
            }
        }
        let mut ordered: Vec<_> = means.into_iter().collect();
        ordered.sort_by_key(|((ep, _), _)| ep.parse::<u64>().unwrap_or(u64::MAX));
        for l in 0..levers.len() {
            let pts: Vec<(String, String, f64)> = ordered
                .iter()
                .map(|((ep, st), (sum, n))| (ep.clone(), st.clone(), sum[l] / *n as f64))
                .collect();
            series.insert(("mean".into(), l), pts);
        }
        for ((agent, l), pts) in &series {
            let values: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let smooth = rolling_mean(&values, a.window);
            for ((ep, st, v), s) in pts.iter().zip(smooth) {
                w.write_record([&run, ep, st, agent, &levers[*l], &format!("{v:e}"), &format!("{s:e}")])?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.05), 5.0);
        assert_eq!(quantile(&v, 0.5), 50.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }

    #[test]
    fn rolling_mean_warms_up() {
        assert_eq!(rolling_mean(&[2.0, 4.0, 6.0, 8.0], 2), vec![2.0, 3.0, 5.0, 7.0]);
    }
}
