//! Latency measurement for single engine steps and whole environment steps.
//!
//! Inputs are generated before the clock starts and every timed region is a
//! single call, so the numbers cover exactly one step (append the year's
//! emissions, normalize where applicable, predict).

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{AgentAction, ClimateBackend, ClimateEnv, EngineTag};
use crate::error::{Error, Result};
use crate::nn::seeded_rng;

pub const DEFAULT_WARMUP: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub engine: EngineTag,
    pub mode: String,
    pub n_steps: usize,
    pub warmup: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub p95_s: f64,
    /// Simulator mean divided by this engine's mean, when both were timed.
    pub speedup_vs_sim: Option<f64>,
    pub hardware: String,
    pub build: String,
}

impl BenchReport {
    fn from_samples(engine: EngineTag, mode: &str, warmup: usize, mut samples: Vec<f64>) -> Self {
        let n = samples.len();
        let mean_s = samples.iter().sum::<f64>() / n.max(1) as f64;
        samples.sort_by(f64::total_cmp);
        let at = |q: f64| samples[((n as f64 - 1.0) * q).round() as usize];
        BenchReport {
            engine,
            mode: mode.to_string(),
            n_steps: n,
            warmup,
            mean_s,
            median_s: at(0.5),
            p95_s: at(0.95),
            speedup_vs_sim: None,
            hardware: hardware_note(),
            build: build_note(),
        }
    }
}

/// CPU model and core count, best effort.
pub fn hardware_note() -> String {
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{model}; {cores} cores; cpu single-threaded")
}

pub fn build_note() -> String {
    if cfg!(debug_assertions) {
        "debug-assertions".into()
    } else {
        "optimized".into()
    }
}

/// Times `n_steps` single steps of `backend`, feeding `feed` (consecutive
/// yearly rows of every gas, `first_year` onwards) and resetting the backend
/// whenever the feed runs out. Resets happen outside the timed region.
pub fn time_engine_step(
    backend: &mut dyn ClimateBackend,
    first_year: i32,
    feed: &[f64],
    n_gases: usize,
    n_steps: usize,
    warmup: usize,
) -> Result<BenchReport> {
    if n_steps < 1 || feed.is_empty() || feed.len() % n_gases != 0 {
        return Err(Error::InvalidInput("benchmark needs steps and whole feed rows".into()));
    }
    let years = feed.len() / n_gases;
    let mut samples = Vec::with_capacity(n_steps);
    let mut t = years;
    for k in 0..warmup + n_steps {
        if t == years {
            backend.reset()?;
            t = 0;
        }
        let row = &feed[t * n_gases..(t + 1) * n_gases];
        let year = first_year + t as i32;
        let start = Instant::now();
        let y = backend.step(year, row)?;
        let dt = start.elapsed().as_secs_f64();
        std::hint::black_box(y);
        if k >= warmup {
            samples.push(dt);
        }
        t += 1;
    }
    Ok(BenchReport::from_samples(backend.tag(), "engine", warmup, samples))
}

/// Times `env.step` under a fixed uniform-random policy whose actions are
/// drawn up front from `seed`, so every engine sees the same action stream.
pub fn time_env_step(env: &mut ClimateEnv, n_episodes: usize, seed: u64, warmup_episodes: usize) -> Result<BenchReport> {
    time_env_steps(std::slice::from_mut(env), n_episodes, seed, warmup_episodes)
}

/// Lockstep variant: each timed sample steps every env in `envs` once and
/// is divided by their number, mimicking a vectorized environment.
pub fn time_env_steps(envs: &mut [ClimateEnv], n_episodes: usize, seed: u64, warmup_episodes: usize) -> Result<BenchReport> {
    let Some(first) = envs.first() else {
        return Err(Error::InvalidInput("no environments to time".into()));
    };
    let (n, h, tag) = (first.n_agents(), first.spec().horizon(), first.engine_tag());
    if envs.iter().any(|e| e.n_agents() != n || e.spec().horizon() != h) {
        return Err(Error::InvalidInput("lockstep envs must share a scenario".into()));
    }
    let k = envs.len();
    let total = warmup_episodes + n_episodes;
    let mut rng = seeded_rng(seed);
    let actions: Vec<Vec<AgentAction>> = (0..total * h * k)
        .map(|_| {
            (0..n)
                .map(|_| AgentAction::from_indices(std::array::from_fn(|_| rng.gen_range(0..3u8))))
                .collect()
        })
        .collect();
    let mut samples = Vec::with_capacity(n_episodes * h);
    for ep in 0..total {
        for (j, env) in envs.iter_mut().enumerate() {
            env.reset(seed.wrapping_add((ep * k + j) as u64))?;
        }
        for t in 0..h {
            let row = &actions[(ep * h + t) * k..(ep * h + t + 1) * k];
            let start = Instant::now();
            for (env, joint) in envs.iter_mut().zip(row) {
                let out = env.step(joint)?;
                std::hint::black_box(&out);
            }
            let dt = start.elapsed().as_secs_f64() / k as f64;
            if ep >= warmup_episodes {
                samples.push(dt);
            }
        }
    }
    let mode = if k == 1 { "env".to_string() } else { format!("env x{k}") };
    Ok(BenchReport::from_samples(tag, &mode, warmup_episodes * h, samples))
}

/// Fills `speedup_vs_sim` on every report from the simulator's mean.
pub fn attach_speedups(sim_mean_s: f64, reports: &mut [BenchReport]) {
    for r in reports {
        r.speedup_vs_sim = Some(sim_mean_s / r.mean_s);
    }
}
