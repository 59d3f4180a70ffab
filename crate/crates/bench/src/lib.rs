//! Fixtures shared by the criterion benches: a baseline, the engine history
//! before the game starts, the emission feed after it, and surrogates of
//! every encoder at the desk sizes. Surrogate weights are freshly initialized;
//! step latency depends only on the architecture.

use climsurr_core::dataset::NormStats;
use climsurr_core::env::{build_backend, ClimateBackend, ClimateEnv, EngineTag, ScenarioSpec};
use climsurr_core::scenario::baseline::{synthetic_baseline, BaselineConfig};
use climsurr_core::surrogate::{EncoderKind, SurrogateConfig, SurrogateModel};
use climsurr_core::{default_registry, EmissionTrajectory, EngineParams, SpeciesRegistry};

pub struct Fixture {
    pub registry: SpeciesRegistry,
    pub params: EngineParams,
    pub baseline: EmissionTrajectory,
    pub history: EmissionTrajectory,
    pub spec: ScenarioSpec,
    /// Rows of every gas from the first game year to the end of the baseline.
    pub feed: Vec<f64>,
}

impl Fixture {
    pub fn new() -> Self {
        let registry = default_registry();
        let baseline = synthetic_baseline(&registry, &BaselineConfig::default()).expect("baseline");
        let spec = ScenarioSpec::homogeneous();
        let history = baseline
            .slice_years(baseline.start_year(), spec.first_year - 1)
            .expect("history");
        let feed = baseline
            .slice_years(spec.first_year, baseline.end_year())
            .expect("feed")
            .values()
            .to_vec();
        Fixture {
            registry,
            params: EngineParams::default(),
            baseline,
            history,
            spec,
            feed,
        }
    }

    pub fn surrogate(&self, kind: EncoderKind, hidden: usize) -> SurrogateModel {
        let c = self.registry.controllable().len();
        let norm = NormStats {
            gas_mean: vec![0.0; c],
            gas_std: vec![1.0; c],
            temp_mean: 0.0,
            temp_std: 1.0,
        };
        let mut cfg = SurrogateConfig::for_encoder(kind);
        cfg.hidden_dim = hidden;
        cfg.head_hidden = 32;
        SurrogateModel::init(cfg, norm, self.registry.hash()).expect("surrogate init")
    }

    pub fn backend(&self, tag: EngineTag) -> Box<dyn ClimateBackend> {
        let model = match tag {
            EngineTag::Gru => Some(self.surrogate(EncoderKind::Gru, 8)),
            EngineTag::Lstm => Some(self.surrogate(EncoderKind::Lstm, 8)),
            EngineTag::Tcn => Some(self.surrogate(EncoderKind::Tcn, 8)),
            _ => None,
        };
        build_backend(tag, &self.params, &self.registry, &self.history, model).expect("backend")
    }

    pub fn env(&self, tag: EngineTag) -> ClimateEnv {
        ClimateEnv::new(self.spec.clone(), self.registry.clone(), self.baseline.clone(), self.backend(tag)).expect("env")
    }

    pub fn feed_years(&self) -> usize {
        self.feed.len() / self.registry.len()
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
