use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use climsurr_core::consistency;
use climsurr_core::dataset::{Dataset, DatasetConfig, ScenarioSeries, Split};
use climsurr_core::engine::simulate_trajectory;
use climsurr_core::env::{build_backend, AgentAction, ClimateEnv, EngineTag, ScenarioSpec, TrajectoryStore};
use climsurr_core::manifest::RunManifest;
use climsurr_core::nn::seeded_rng;
use climsurr_core::rl::{self, ActionMode, PolicySet, TrainConfig};
use climsurr_core::scenario::baseline::{synthetic_baseline, BaselineConfig};
use climsurr_core::scenario::ensemble::{generate_ensemble, Ensemble, PerturbationConfig};
use climsurr_core::surrogate::{self, EncoderKind, SurrogateConfig, SurrogateModel};
use climsurr_core::timing::{self, BenchReport};
use climsurr_core::{default_registry, ClimateEngine, EmissionTrajectory, EngineParams, SpeciesRegistry};

use crate::common::*;

pub const ENSEMBLE_FILE: &str = "ensemble.bin";

fn parse_engine(s: &str) -> Result<EngineTag, String> {
    s.parse().map_err(|e: climsurr_core::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err("expected three comma-separated ratios".into()),
    }
}

fn read_ensemble(registry: &SpeciesRegistry, arg: &Path, manifest: &mut RunManifest) -> anyhow::Result<Ensemble> {
    let path = file_in(arg, ENSEMBLE_FILE);
    require(&path)?;
    manifest.input(&path)?;
    Ok(Ensemble::read(registry, &path)?)
}

// ---------------------------------------------------------------- scenarios

#[derive(Args, Debug)]
pub struct GenScenariosArgs {
    /// TOML with perturbation fields and an optional [baseline] table.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Baseline CSV (year plus one column per gas); synthetic when omitted.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Also write one CSV per scenario under `scenarios/`.
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct GenConfig {
    #[serde(flatten)]
    perturbation: PerturbationConfig,
    baseline: BaselineConfig,
}

pub fn gen_scenarios(ctx: &Ctx, a: GenScenariosArgs) -> anyhow::Result<()> {
    let mut cfg: GenConfig = load_config(a.config.as_deref())?;
    let mut o = Overrides::default();
    o.set("n", &mut cfg.perturbation.n_scenarios, a.n);
    o.set("seed", &mut cfg.perturbation.seed, a.seed);
    o.set("alpha", &mut cfg.perturbation.alpha, a.alpha);
    announce("gen-scenarios", a.config.as_deref(), &o, &cfg);

    let out = ctx.out_path(a.out, "scenarios");
    let files = [out.join(ENSEMBLE_FILE), out.join("ensemble.json"), out.join("baseline.csv")];
    ctx.guard(&files)?;
    let registry = default_registry();
    let mut manifest = RunManifest::start("gen-scenarios", &cfg)?;
    manifest.seed("perturbation", cfg.perturbation.seed);
    let base = match &a.baseline {
        Some(p) => {
            require(p)?;
            manifest.input(p)?;
            climsurr_core::scenario::baseline::load_baseline_csv(&registry, p)?
        }
        None => {
            manifest.seed("baseline", cfg.baseline.seed);
            synthetic_baseline(&registry, &cfg.baseline)?
        }
    };
    let ens = generate_ensemble(&registry, &base, &cfg.perturbation)?;
    ensure_dir(&out)?;
    ens.write(&registry, &files[0])?;
    write_json(&files[1], &ens.manifest)?;
    base.to_csv_path(&registry, &files[2])?;
    for f in &files {
        manifest.output(f)?;
    }
    if a.csv {
        let dir = out.join("scenarios");
        ensure_dir(&dir)?;
        for s in &ens.scenarios {
            s.to_csv_path(&registry, &dir.join(format!("scenario_{:05}.csv", s.scenario_id)))?;
        }
    }
    manifest.finish(&out)?;
    println!("wrote {} scenarios to {}", ens.scenarios.len(), out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Directory written by gen-scenarios, or an ensemble file.
    #[arg(long)]
    scenarios: PathBuf,
    /// Engine parameter TOML; defaults when omitted.
    #[arg(long)]
    engine_params: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn simulate_all(ctx: &Ctx, params: &EngineParams, registry: &SpeciesRegistry, ens: &Ensemble) -> anyhow::Result<Vec<Vec<f64>>> {
    let pool = ctx.pool()?;
    let temps = pool.install(|| {
        ens.scenarios
            .par_iter()
            .map(|s| simulate_trajectory(params, registry, s))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(temps)
}

pub fn simulate(ctx: &Ctx, a: SimulateArgs) -> anyhow::Result<()> {
    let params = engine_params(a.engine_params.as_deref())?;
    announce("simulate", a.engine_params.as_deref(), &Overrides::default(), &params);
    let registry = default_registry();
    let mut manifest = RunManifest::start("simulate", &params)?;
    let ens = read_ensemble(&registry, &a.scenarios, &mut manifest)?;
    let out = ctx.out_path(a.out, "temps");
    let files: Vec<PathBuf> = ens.scenarios.iter().map(|s| out.join(temps_name(s.scenario_id))).collect();
    ctx.guard(&files)?;
    let temps = simulate_all(ctx, &params, &registry, &ens)?;
    ensure_dir(&out)?;
    for ((s, t), f) in ens.scenarios.iter().zip(&temps).zip(&files) {
        write_temps(f, s.start_year(), t)?;
        manifest.output(f)?;
    }
    manifest.finish(&out)?;
    println!("wrote {} temperature files to {}", files.len(), out.display());
    Ok(())
}

// ------------------------------------------------------------------ dataset

#[derive(Args, Debug)]
pub struct MakeDatasetArgs {
    #[arg(long)]
    scenarios: PathBuf,
    /// Directory written by `simulate`; the engine is run in-process when omitted.
    #[arg(long)]
    temps: Option<PathBuf>,
    #[arg(long)]
    engine_params: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    /// Train, validation and test fractions.
    #[arg(long, value_parser = parse_split)]
    split: Option<(f64, f64, f64)>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn make_dataset(ctx: &Ctx, a: MakeDatasetArgs) -> anyhow::Result<()> {
    let mut cfg: DatasetConfig = load_config(a.config.as_deref())?;
    let mut o = Overrides::default();
    o.set("window", &mut cfg.window, a.window);
    o.set("split", &mut cfg.ratios, a.split);
    o.set("seed", &mut cfg.seed, a.seed);
    announce("make-dataset", a.config.as_deref(), &o, &cfg);

    let out = ctx.out_path(a.out, "dataset.bin");
    ctx.guard(std::slice::from_ref(&out))?;
    let registry = default_registry();
    let mut manifest = RunManifest::start("make-dataset", &cfg)?;
    manifest.seed("split", cfg.seed);
    let ens = read_ensemble(&registry, &a.scenarios, &mut manifest)?;
    let temps = match &a.temps {
        Some(dir) => ens
            .scenarios
            .iter()
            .map(|s| {
                let path = dir.join(temps_name(s.scenario_id));
                require(&path)?;
                manifest.input(&path)?;
                let (first, t) = read_temps(&path)?;
                if first != s.start_year() || t.len() != s.n_years() {
                    bail!("{} does not cover scenario {}", path.display(), s.scenario_id);
                }
                Ok(t)
            })
            .collect::<anyhow::Result<Vec<_>>>()?,
        None => simulate_all(ctx, &engine_params(a.engine_params.as_deref())?, &registry, &ens)?,
    };
    let series = ens
        .scenarios
        .iter()
        .zip(temps)
        .map(|(s, t)| ScenarioSeries::new(&registry, s, t))
        .collect::<Result<Vec<_>, _>>()?;
    let ds = Dataset::build(&registry, series, &cfg)?;
    ensure_dir(&parent_dir(&out))?;
    ds.write(&out)?;
    manifest.output(&out)?;
    manifest.finish(&parent_dir(&out))?;
    println!(
        "wrote {} samples ({} scenarios, {} per scenario) to {}",
        ds.len(),
        ds.series.len(),
        ds.samples_per_scenario(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- surrogate

#[derive(Args, Debug)]
pub struct TrainSurrogateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    encoder: Option<EncoderKind>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn train_surrogate(ctx: &Ctx, a: TrainSurrogateArgs) -> anyhow::Result<()> {
    let mut cfg: SurrogateConfig = load_config(a.config.as_deref())?;
    let mut o = Overrides::default();
    o.set("encoder", &mut cfg.encoder, a.encoder);
    o.set("hidden", &mut cfg.hidden_dim, a.hidden);
    o.set("epochs", &mut cfg.epochs, a.epochs);
    o.set("lr", &mut cfg.learning_rate, a.lr);
    o.set("batch_size", &mut cfg.batch_size, a.batch_size);
    o.set("seed", &mut cfg.seed, a.seed);
    if cfg.encoder == EncoderKind::Tcn {
        cfg.encoder_layers = cfg.tcn_dilations.len();
    }

    let out = ctx.out_path(a.out, &format!("{}.ckpt", EngineTag::from(cfg.encoder)));
    let metrics_path = out.with_extension("metrics.json");
    ctx.guard(&[out.clone(), metrics_path.clone()])?;
    let mut manifest = RunManifest::start("train-surrogate", &cfg)?;
    require(&a.dataset)?;
    manifest.input(&a.dataset)?;
    let ds = Dataset::read(&a.dataset)?;
    cfg.window = ds.window;
    announce("train-surrogate", a.config.as_deref(), &o, &cfg);
    manifest.seed("init", cfg.seed);

    let model = surrogate::train(&ds, &cfg)?;
    if let Some(e) = model.metrics.divergence_error() {
        log::warn!("{e}; keeping the last finite parameters");
    }
    let split = if ds.samples(Split::Val).is_empty() { Split::Train } else { Split::Val };
    let val = surrogate::evaluate(&model, &ds, split)?;
    ensure_dir(&parent_dir(&out))?;
    model.save(&out)?;
    write_json(&metrics_path, &model.metrics)?;
    manifest.output(&out)?;
    manifest.output(&metrics_path)?;
    manifest.finish(&parent_dir(&out))?;
    println!(
        "{} surrogate: {} epochs, {:?} RMSE {:.3e} K, R2 {}",
        EngineTag::from(cfg.encoder),
        model.metrics.epochs.len(),
        split,
        val.rmse,
        val.r2.map_or("n/a".into(), |r| format!("{r:.5}"))
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalSurrogateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval_surrogate(ctx: &Ctx, a: EvalSurrogateArgs) -> anyhow::Result<()> {
    if let Some(p) = &a.out {
        ctx.guard(std::slice::from_ref(p))?;
    }
    let mut manifest = RunManifest::start("eval-surrogate", &format!("{:?}", a.split))?;
    for p in [&a.ckpt, &a.dataset] {
        require(p)?;
        manifest.input(p)?;
    }
    let model = SurrogateModel::load(&a.ckpt)?;
    let ds = Dataset::read(&a.dataset)?;
    let report = surrogate::evaluate(&model, &ds, a.split)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(p) = &a.out {
        ensure_dir(&parent_dir(p))?;
        write_json(p, &report)?;
        manifest.output(p)?;
        manifest.finish(&parent_dir(p))?;
    }
    Ok(())
}

// --------------------------------------------------------------------- game

#[derive(Args, Debug, Clone)]
pub struct EngineArgs {
    /// Scenario file (TOML or JSON) or a built-in name: homogeneous, heterogeneous.
    #[arg(long, default_value = "homogeneous")]
    spec: String,
    #[arg(long, default_value = "sim", value_parser = parse_engine)]
    engine: EngineTag,
    /// Surrogate checkpoint, required for gru, lstm and tcn.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    engine_params: Option<PathBuf>,
    /// Baseline CSV; synthetic when omitted.
    #[arg(long)]
    baseline: Option<PathBuf>,
}

fn load_spec(arg: &str, manifest: &mut RunManifest) -> anyhow::Result<ScenarioSpec> {
    if ScenarioSpec::builtin(arg).is_none() {
        let p = Path::new(arg);
        require(p)?;
        manifest.input(p)?;
    }
    Ok(ScenarioSpec::load(arg)?)
}

fn history(base: &EmissionTrajectory, first_year: i32) -> anyhow::Result<EmissionTrajectory> {
    Ok(base.slice_years(base.start_year(), first_year - 1)?)
}

fn make_env(e: &EngineArgs, manifest: &mut RunManifest) -> anyhow::Result<ClimateEnv> {
    let registry = default_registry();
    let spec = load_spec(&e.spec, manifest)?;
    spec.validate(&registry)?;
    let params = engine_params(e.engine_params.as_deref())?;
    let base = baseline(&registry, e.baseline.as_deref(), manifest)?;
    let model = match &e.ckpt {
        Some(p) if e.engine.is_surrogate() => {
            require(p)?;
            manifest.input(p)?;
            Some(SurrogateModel::load(p)?)
        }
        _ => None,
    };
    let backend = build_backend(e.engine, &params, &registry, &history(&base, spec.first_year)?, model)?;
    Ok(ClimateEnv::new(spec, registry, base, backend)?)
}

#[derive(Args, Debug)]
pub struct RunEpisodeArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// JSON schedule (years of agents of [energy, methane, agriculture,
    /// adaptation] level indices; a single year repeats) or a policy file
    /// from train-marl.
    #[arg(long)]
    actions: PathBuf,
    /// Take each policy's most likely action instead of sampling.
    #[arg(long)]
    greedy: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ActionRepr {
    Indices([u8; 4]),
    Named(AgentAction),
}

impl From<ActionRepr> for AgentAction {
    fn from(a: ActionRepr) -> Self {
        match a {
            ActionRepr::Indices(i) => AgentAction::from_indices(i),
            ActionRepr::Named(a) => a,
        }
    }
}

fn read_schedule(path: &Path, horizon: usize) -> anyhow::Result<Vec<Vec<AgentAction>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let raw: Vec<Vec<ActionRepr>> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let years: Vec<Vec<AgentAction>> = raw
        .into_iter()
        .map(|y| y.into_iter().map(AgentAction::from).collect())
        .collect();
    match years.len() {
        1 => Ok(vec![years[0].clone(); horizon]),
        n if n == horizon => Ok(years),
        n => bail!("schedule has {n} years; the scenario needs {horizon} (or 1 to repeat)"),
    }
}

pub fn run_episode(ctx: &Ctx, a: RunEpisodeArgs) -> anyhow::Result<()> {
    let out = ctx.out_path(a.out, "episode");
    let files = [out.join("episode.csv"), out.join("episode.json")];
    ctx.guard(&files)?;
    let mut manifest = RunManifest::start("run-episode", &(&a.engine.spec, a.engine.engine.to_string(), a.greedy))?;
    manifest.seed("episode", a.seed);
    let mut env = make_env(&a.engine, &mut manifest)?;
    require(&a.actions)?;
    manifest.input(&a.actions)?;
    let is_json = a.actions.extension().is_some_and(|e| e == "json");
    let record = if is_json {
        let schedule = read_schedule(&a.actions, env.spec().horizon())?;
        env.run_schedule(a.seed, &schedule)?
    } else {
        let policies = PolicySet::load(&a.actions)?;
        let mode = if a.greedy { ActionMode::Greedy } else { ActionMode::Sample };
        let mut rng = seeded_rng(a.seed);
        rl::play_episode(&mut env, &policies, a.seed, mode, &mut rng)?.record
    };
    ensure_dir(&out)?;
    let mut w = csv::Writer::from_path(&files[0])?;
    w.write_record(["year", "agent", "energy", "methane", "agriculture", "adaptation", "reward", "delta_t"])?;
    for (t, (acts, rews)) in record.actions.iter().zip(&record.rewards).enumerate() {
        for (i, (act, r)) in acts.iter().zip(rews).enumerate() {
            let idx = act.indices();
            w.write_record([
                (record.first_year + t as i32).to_string(),
                i.to_string(),
                idx[0].to_string(),
                idx[1].to_string(),
                idx[2].to_string(),
                idx[3].to_string(),
                format!("{r:e}"),
                format!("{:e}", record.dt[t]),
            ])?;
        }
    }
    w.flush()?;
    write_json(&files[1], &record)?;
    for f in &files {
        manifest.output(f)?;
    }
    manifest.finish(&out)?;
    let returns = record.returns();
    println!("returns per agent: {returns:.4?}");
    println!("final delta_t {:.4} K", record.dt[record.actions.len() - 1]);
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainMarlArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Training config (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Joint environment step budget.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    store_every: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Episodes collected per update.
    #[arg(long)]
    parallel_envs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    engine: EngineTag,
    scenario: String,
    env_steps: u64,
    episodes: usize,
    updates: usize,
    stopped_early: bool,
    /// Mean effort per lever over the last tenth of episodes.
    final_efforts: [f64; 4],
    stored_trajectories: usize,
    policy_hashes: Vec<String>,
}

pub fn train_marl(ctx: &Ctx, a: TrainMarlArgs) -> anyhow::Result<()> {
    let mut cfg: TrainConfig = load_config(a.config.as_deref())?;
    let mut o = Overrides::default();
    o.set("steps", &mut cfg.total_env_steps, a.steps);
    o.set("seed", &mut cfg.seed, a.seed);
    o.set("store_every", &mut cfg.store_every, a.store_every);
    o.set("hidden", &mut cfg.hidden, a.hidden);
    o.set("parallel_envs", &mut cfg.n_parallel_envs, a.parallel_envs);
    announce("train-marl", a.config.as_deref(), &o, &cfg);

    let out = ctx.out_path(a.out, &format!("marl-{}", a.engine.engine));
    let names = ["policies.bin", "rewards.csv", "levers.csv", "trajectories.bin", "updates.json", "summary.json"];
    let files: Vec<PathBuf> = names.iter().map(|n| out.join(n)).collect();
    ctx.guard(&files)?;
    let mut manifest = RunManifest::start("train-marl", &(&cfg, &a.engine.spec, a.engine.engine.to_string()))?;
    manifest.seed("train", cfg.seed);
    let mut env = make_env(&a.engine, &mut manifest)?;
    let outcome = rl::train(&mut env, &cfg)?;

    ensure_dir(&out)?;
    outcome.policies.save(&files[0])?;
    rl::write_reward_csv(&files[1], &outcome.episodes)?;
    rl::write_lever_csv(&files[2], &outcome.episodes)?;
    outcome.store.write(&files[3])?;
    write_json(&files[4], &outcome.updates)?;
    let summary = TrainSummary {
        engine: env.engine_tag(),
        scenario: env.spec().name.clone(),
        env_steps: outcome.env_steps,
        episodes: outcome.episodes.len(),
        updates: outcome.updates.len(),
        stopped_early: outcome.stopped_early,
        final_efforts: outcome.final_efforts(0.1),
        stored_trajectories: outcome.store.len(),
        policy_hashes: outcome.policies.hashes(),
    };
    write_json(&files[5], &summary)?;
    for f in &files {
        manifest.output(f)?;
    }
    manifest.finish(&out)?;
    println!(
        "{} episodes on {}; final efforts (energy, methane, agriculture, adaptation) {:.3?}",
        summary.episodes, summary.engine, summary.final_efforts
    );
    Ok(())
}

// -------------------------------------------------------------- consistency

#[derive(Args, Debug)]
pub struct EvalConsistencyArgs {
    /// Trajectory store from train-marl, or its output directory.
    #[arg(long, alias = "store")]
    manifest: PathBuf,
    /// Trajectories sampled for replay.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long)]
    engine_params: Option<PathBuf>,
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value_t = 0.999)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval_consistency(ctx: &Ctx, a: EvalConsistencyArgs) -> anyhow::Result<()> {
    let params = engine_params(a.engine_params.as_deref())?;
    announce("eval-consistency", a.engine_params.as_deref(), &Overrides::default(), &params);
    let out = ctx.out_path(a.out, "consistency.json");
    let csv_out = out.with_extension("csv");
    ctx.guard(&[out.clone(), csv_out.clone()])?;
    let mut manifest = RunManifest::start("eval-consistency", &(&params, a.n, a.gamma))?;
    manifest.seed("sample", a.seed);
    let store_path = file_in(&a.manifest, "trajectories.bin");
    require(&store_path)?;
    manifest.input(&store_path)?;
    let store = TrajectoryStore::read(&store_path)?;
    let registry = default_registry();
    let base = baseline(&registry, a.baseline.as_deref(), &mut manifest)?;
    let template = ClimateEngine::new(params, registry, &history(&base, store.header.first_year)?)?;
    let n = a.n.min(store.len());
    if n < a.n {
        log::warn!("store holds {} trajectories; replaying all of them", store.len());
    }
    let report = consistency::evaluate(&store, &template, n, a.seed, a.gamma)?;
    ensure_dir(&parent_dir(&out))?;
    report.write_json(&out)?;
    report.write_csv(&csv_out)?;
    manifest.output(&out)?;
    manifest.output(&csv_out)?;
    manifest.finish(&parent_dir(&out))?;
    println!(
        "{} trajectories: pooled RMSE {:.3e} K, Kendall tau {}",
        report.n,
        report.pooled_rmse,
        report.kendall_tau.map_or("undefined".into(), |t| format!("{t:.4}"))
    );
    Ok(())
}

// -------------------------------------------------------------------- bench

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum BenchMode {
    Engine,
    Env,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "engine")]
    mode: BenchMode,
    /// Engines to time; repeat the flag to compare. Speed-ups are reported
    /// against sim when it is among them.
    #[arg(long, value_parser = parse_engine, default_value = "sim")]
    engine: Vec<EngineTag>,
    /// Surrogate checkpoints; each is matched to an engine by its encoder.
    #[arg(long)]
    ckpt: Vec<PathBuf>,
    #[arg(long)]
    engine_params: Option<PathBuf>,
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value = "homogeneous")]
    spec: String,
    /// Timed steps per engine (at least 1000).
    #[arg(long, default_value_t = 100_000)]
    steps: usize,
    #[arg(long, default_value_t = timing::DEFAULT_WARMUP)]
    warmup: usize,
    /// Environments stepped in lockstep per timed sample (env mode).
    #[arg(long, default_value_t = 1)]
    parallel_envs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn bench(ctx: &Ctx, a: BenchArgs) -> anyhow::Result<()> {
    if a.steps < 1000 {
        bail!("--steps must be at least 1000");
    }
    if a.parallel_envs == 0 {
        bail!("--parallel-envs must be positive");
    }
    let params = engine_params(a.engine_params.as_deref())?;
    announce("bench", a.engine_params.as_deref(), &Overrides::default(), &params);
    let out = ctx.out_path(a.out, "bench.json");
    ctx.guard(std::slice::from_ref(&out))?;
    let mut manifest = RunManifest::start("bench", &(&params, a.steps, a.warmup, a.parallel_envs))?;
    manifest.seed("actions", a.seed);
    let registry = default_registry();
    let spec = load_spec(&a.spec, &mut manifest)?;
    spec.validate(&registry)?;
    let base = baseline(&registry, a.baseline.as_deref(), &mut manifest)?;
    let hist = history(&base, spec.first_year)?;
    let mut models = Vec::new();
    for p in &a.ckpt {
        require(p)?;
        manifest.input(p)?;
        models.push(SurrogateModel::load(p)?);
    }

    let mut reports: Vec<BenchReport> = Vec::new();
    for &tag in &a.engine {
        let model = models.iter().find(|m| EngineTag::from(m.config.encoder) == tag).cloned();
        let mut backend = build_backend(tag, &params, &registry, &hist, model)?;
        let report = match a.mode {
            BenchMode::Engine => {
                let feed = base.slice_years(spec.first_year, base.end_year())?;
                timing::time_engine_step(
                    backend.as_mut(),
                    spec.first_year,
                    feed.values(),
                    registry.len(),
                    a.steps,
                    a.warmup,
                )?
            }
            BenchMode::Env => {
                let h = spec.horizon();
                let mut envs = (0..a.parallel_envs)
                    .map(|_| ClimateEnv::new(spec.clone(), registry.clone(), base.clone(), backend.boxed_clone()))
                    .collect::<Result<Vec<_>, _>>()?;
                timing::time_env_steps(&mut envs, a.steps.div_ceil(h), a.seed, a.warmup.div_ceil(h))?
            }
        };
        eprintln!(
            "{:>5} {:<8} mean {:.3e} s  median {:.3e} s  p95 {:.3e} s",
            tag, report.mode, report.mean_s, report.median_s, report.p95_s
        );
        reports.push(report);
    }
    if let Some(sim) = reports.iter().find(|r| r.engine == EngineTag::Sim).map(|r| r.mean_s) {
        timing::attach_speedups(sim, &mut reports);
        for r in &reports {
            println!("{}: {:.1}x vs sim", r.engine, r.speedup_vs_sim.unwrap_or(f64::NAN));
        }
    }
    ensure_dir(&parent_dir(&out))?;
    write_json(&out, &reports)?;
    manifest.output(&out)?;
    manifest.finish(&parent_dir(&out))?;
    Ok(())
}
