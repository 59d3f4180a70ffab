use std::time::{Duration, Instant};

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use climsurr_bench::Fixture;
use climsurr_core::env::{AgentAction, EngineTag};

const ENGINES: [EngineTag; 4] = [EngineTag::Sim, EngineTag::Gru, EngineTag::Lstm, EngineTag::Tcn];

/// One engine step: the emission row is already in memory, the backend
/// appends it, normalizes where it needs to and predicts. Resets happen
/// outside the clock whenever the feed runs out.
fn engine_step(c: &mut Criterion) {
    let fx = Fixture::new();
    let g = fx.registry.len();
    let years = fx.feed_years();
    let mut group = c.benchmark_group("engine_step");
    for tag in ENGINES {
        let mut backend = fx.backend(tag);
        group.bench_function(tag.to_string(), |b| {
            b.iter_custom(|iters| {
                let mut total = Duration::ZERO;
                let mut t = years;
                for _ in 0..iters {
                    if t == years {
                        backend.reset().unwrap();
                        t = 0;
                    }
                    let row = &fx.feed[t * g..(t + 1) * g];
                    let year = fx.spec.first_year + t as i32;
                    let start = Instant::now();
                    black_box(backend.step(year, row).unwrap());
                    total += start.elapsed();
                    t += 1;
                }
                total
            })
        });
    }
    group.finish();
}

/// Whole episodes of the game under a fixed joint action, so only the
/// engine differs between runs.
fn env_episode(c: &mut Criterion) {
    let fx = Fixture::new();
    let joint = vec![AgentAction::from_indices([1, 1, 1, 1]); fx.spec.n_agents];
    let mut group = c.benchmark_group("env_episode");
    group.sample_size(20);
    for tag in [EngineTag::Sim, EngineTag::Gru] {
        let mut env = fx.env(tag);
        group.bench_function(tag.to_string(), |b| {
            b.iter(|| {
                env.reset(0).unwrap();
                loop {
                    let out = env.step(&joint).unwrap();
                    if out.done {
                        break black_box(out.dt);
                    }
                }
            })
        });
    }
    group.finish();
}

fn surrogate_batch(c: &mut Criterion) {
    let fx = Fixture::new();
    let model = fx.surrogate(climsurr_core::surrogate::EncoderKind::Gru, 8);
    let windows: Vec<Vec<f64>> = (0..256).map(|i| vec![0.01 * i as f64; model.window_len()]).collect();
    c.bench_function("gru_forward_batch_256", |b| b.iter(|| black_box(model.forward_batch(&windows).unwrap())));
}

criterion_group!(benches, engine_step, env_episode, surrogate_batch);
criterion_main!(benches);
