use serde::{Deserialize, Serialize};

use crate::engine::{ClimateEngine, EngineParams};
use crate::error::{Error, Result};
use crate::scenario::EmissionTrajectory;
use crate::species::SpeciesRegistry;
use crate::surrogate::{EncoderKind, SurrogateModel, SurrogateStepper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineTag {
    Sim,
    Gru,
    Lstm,
    Tcn,
    Mock,
}

impl EngineTag {
    pub fn is_surrogate(self) -> bool {
        matches!(self, EngineTag::Gru | EngineTag::Lstm | EngineTag::Tcn)
    }
}

impl From<EncoderKind> for EngineTag {
    fn from(k: EncoderKind) -> Self {
        match k {
            EncoderKind::Gru => EngineTag::Gru,
            EncoderKind::Lstm => EngineTag::Lstm,
            EncoderKind::Tcn => EngineTag::Tcn,
        }
    }
}

impl std::str::FromStr for EngineTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sim" | "simulator" => Ok(EngineTag::Sim),
            "gru" => Ok(EngineTag::Gru),
            "lstm" => Ok(EngineTag::Lstm),
            "tcn" => Ok(EngineTag::Tcn),
            "mock" => Ok(EngineTag::Mock),
            other => Err(Error::InvalidInput(format!("unknown engine {other}"))),
        }
    }
}

impl std::fmt::Display for EngineTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EngineTag::Sim => "sim",
            EngineTag::Gru => "gru",
            EngineTag::Lstm => "lstm",
            EngineTag::Tcn => "tcn",
            EngineTag::Mock => "mock",
        })
    }
}

/// The climate model behind the game. Takes global emissions of every gas;
/// implementations filter what they need.
pub trait ClimateBackend: Send {
    fn tag(&self) -> EngineTag;
    /// Restores the post-history state and returns ΔT of the last historical year.
    fn reset(&mut self) -> Result<f64>;
    fn step(&mut self, year: i32, emissions: &[f64]) -> Result<f64>;
    fn boxed_clone(&self) -> Box<dyn ClimateBackend>;
}

pub struct SimulatorBackend {
    initial: ClimateEngine,
    live: ClimateEngine,
}

impl SimulatorBackend {
    pub fn new(params: EngineParams, registry: SpeciesRegistry, history: &EmissionTrajectory) -> Result<Self> {
        let initial = ClimateEngine::new(params, registry, history)?;
        Ok(SimulatorBackend {
            live: initial.clone(),
            initial,
        })
    }

    pub fn engine(&self) -> &ClimateEngine {
        &self.live
    }
}

impl ClimateBackend for SimulatorBackend {
    fn tag(&self) -> EngineTag {
        EngineTag::Sim
    }

    fn reset(&mut self) -> Result<f64> {
        self.live.clone_from(&self.initial);
        Ok(self.initial.last_temperature())
    }

    fn step(&mut self, year: i32, emissions: &[f64]) -> Result<f64> {
        self.live.step(year, emissions)
    }

    fn boxed_clone(&self) -> Box<dyn ClimateBackend> {
        Box::new(SimulatorBackend {
            initial: self.initial.clone(),
            live: self.live.clone(),
        })
    }
}

pub struct SurrogateBackend {
    model: SurrogateModel,
    stepper: SurrogateStepper,
    controllable: Vec<usize>,
    scratch: Vec<f64>,
    history_dt: f64,
}

/// Builds the backend named by `tag`. Surrogate tags need a checkpoint whose
/// encoder matches; the mock backend holds ΔT at zero.
pub fn build_backend(
    tag: EngineTag,
    params: &EngineParams,
    registry: &SpeciesRegistry,
    history: &EmissionTrajectory,
    surrogate: Option<SurrogateModel>,
) -> Result<Box<dyn ClimateBackend>> {
    match tag {
        EngineTag::Sim => Ok(Box::new(SimulatorBackend::new(params.clone(), registry.clone(), history)?)),
        EngineTag::Mock => Ok(Box::new(MockBackend::constant(0.0))),
        _ => {
            let model = surrogate.ok_or_else(|| Error::Config(format!("engine {tag} needs a surrogate checkpoint")))?;
            let found = EngineTag::from(model.config.encoder);
            if found != tag {
                return Err(Error::Config(format!("checkpoint holds a {found} surrogate, not {tag}")));
            }
            Ok(Box::new(SurrogateBackend::new(model, registry, history)?))
        }
    }
}

impl SurrogateBackend {
    /// `history` holds every gas; the controllable columns seed the stepper,
    /// and the model's own prediction for the last historical year serves as
    /// the initial ΔT.
    pub fn new(model: SurrogateModel, registry: &SpeciesRegistry, history: &EmissionTrajectory) -> Result<Self> {
        if history.n_gases() != registry.len() {
            return Err(Error::Shape {
                what: "history gases",
                expected: registry.len(),
                got: history.n_gases(),
            });
        }
        if registry.hash() != model.registry_hash && !model.registry_hash.is_empty() {
            return Err(Error::Config("surrogate was trained on a different species registry".into()));
        }
        let controllable = registry.controllable().to_vec();
        if controllable.len() != model.n_inputs {
            return Err(Error::Shape {
                what: "surrogate inputs",
                expected: model.n_inputs,
                got: controllable.len(),
            });
        }
        let rows: Vec<f64> = history
            .rows()
            .flat_map(|(_, r)| controllable.iter().map(move |&k| r[k]))
            .collect();
        let c = controllable.len();
        let w = model.window();
        let n = rows.len() / c;
        if n < w + 1 {
            return Err(Error::InvalidInput(format!(
                "surrogate history needs {} years, got {n}",
                w + 1
            )));
        }
        let history_dt = model.forward(&rows[(n - w - 1) * c..])?;
        let stepper = SurrogateStepper::new(&model, history.start_year(), &rows)?;
        Ok(SurrogateBackend {
            model,
            stepper,
            scratch: vec![0.0; c],
            controllable,
            history_dt,
        })
    }
}

impl ClimateBackend for SurrogateBackend {
    fn tag(&self) -> EngineTag {
        self.model.config.encoder.into()
    }

    fn reset(&mut self) -> Result<f64> {
        self.stepper.reset();
        Ok(self.history_dt)
    }

    fn step(&mut self, year: i32, emissions: &[f64]) -> Result<f64> {
        for (s, &k) in self.scratch.iter_mut().zip(&self.controllable) {
            *s = *emissions.get(k).ok_or(Error::Shape {
                what: "emissions",
                expected: k + 1,
                got: emissions.len(),
            })?;
        }
        self.stepper.step_year(year, &self.scratch)
    }

    fn boxed_clone(&self) -> Box<dyn ClimateBackend> {
        // the stepper holds only derived buffers; rebuild and replay is not
        // needed because clones are taken right after construction or reset
        Box::new(SurrogateBackend {
            model: self.model.clone(),
            stepper: self.stepper.clone(),
            controllable: self.controllable.clone(),
            scratch: self.scratch.clone(),
            history_dt: self.history_dt,
        })
    }
}

/// Test double: ΔT is an affine function of this year's global emissions.
#[derive(Debug, Clone)]
pub struct MockBackend {
    pub initial: f64,
    pub offset: f64,
    pub weights: Vec<f64>,
}

impl MockBackend {
    pub fn constant(dt: f64) -> Self {
        MockBackend {
            initial: dt,
            offset: dt,
            weights: Vec::new(),
        }
    }
}

impl ClimateBackend for MockBackend {
    fn tag(&self) -> EngineTag {
        EngineTag::Mock
    }

    fn reset(&mut self) -> Result<f64> {
        Ok(self.initial)
    }

    fn step(&mut self, _year: i32, emissions: &[f64]) -> Result<f64> {
        Ok(self.offset + self.weights.iter().zip(emissions).map(|(w, e)| w * e).sum::<f64>())
    }

    fn boxed_clone(&self) -> Box<dyn ClimateBackend> {
        Box::new(self.clone())
    }
}
