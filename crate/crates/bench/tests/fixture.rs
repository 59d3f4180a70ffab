use climsurr_bench::Fixture;
use climsurr_core::env::{AgentAction, EngineTag};

#[test]
fn every_engine_steps_through_the_whole_feed() {
    let fx = Fixture::new();
    let g = fx.registry.len();
    assert_eq!(fx.feed.len(), fx.feed_years() * g);
    assert_eq!(fx.history.end_year() + 1, fx.spec.first_year);
    for tag in [EngineTag::Sim, EngineTag::Gru, EngineTag::Lstm, EngineTag::Tcn] {
        let mut backend = fx.backend(tag);
        assert_eq!(backend.tag(), tag);
        backend.reset().unwrap();
        for t in 0..fx.feed_years() {
            let dt = backend.step(fx.spec.first_year + t as i32, &fx.feed[t * g..(t + 1) * g]).unwrap();
            assert!(dt.is_finite(), "{tag} year {t}");
        }
    }
}

#[test]
fn episodes_finish_on_both_benchmarked_engines() {
    let fx = Fixture::default();
    let joint = vec![AgentAction::from_indices([1, 1, 1, 1]); fx.spec.n_agents];
    for tag in [EngineTag::Sim, EngineTag::Gru] {
        let mut env = fx.env(tag);
        env.reset(0).unwrap();
        let mut steps = 0;
        while !env.step(&joint).unwrap().done {
            steps += 1;
        }
        assert_eq!(steps + 1, fx.spec.horizon());
    }
}
