//! Reduced-complexity climate engine: emissions to concentrations, to
//! radiative forcing, to global-mean temperature change.

pub mod forcing;
pub mod ocean;
pub mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::EmissionTrajectory;
use crate::species::{SpeciesRegistry, Treatment};
use forcing::{ch4_forcing, co2_forcing, n2o_forcing, ProxyTerm};
use ocean::{OceanCoefficients, OceanState};
pub use params::{EngineParams, StepMode};
use params::{CH4_PREINDUSTRIAL_PPB, CO2_PREINDUSTRIAL_PPM, GTC_PER_PPM, N2O_PREINDUSTRIAL_PPB};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
enum GasRule {
    Carbon,
    Decay {
        retain: f64,
        ppb_per_unit: f64,
        /// Linear radiative efficiency, W m^-2 ppb^-1; `None` for CH4/N2O.
        efficiency: Option<f64>,
        background: f64,
    },
    Proxy(ProxyTerm),
}

/// Everything derived once from params and registry.
#[derive(Debug, Clone, PartialEq)]
struct Model {
    rules: Vec<GasRule>,
    pool_retain: Vec<f64>,
    pool_fraction: Vec<f64>,
    co2: Vec<usize>,
    ch4: Option<usize>,
    n2o: Option<usize>,
    ocean: OceanCoefficients,
}

impl Model {
    fn new(params: &EngineParams, registry: &SpeciesRegistry) -> Result<Self> {
        params.validate()?;
        params.check_against(registry)?;
        let mut rules = Vec::with_capacity(registry.len());
        let mut co2 = Vec::new();
        for (g, s) in registry.species().iter().enumerate() {
            let rule = match s.treatment {
                Treatment::CarbonCycle => {
                    co2.push(g);
                    GasRule::Carbon
                }
                Treatment::FixedLifetimeDecay | Treatment::MultiTauDecay => {
                    let phys = params
                        .physics_for(&s.name)
                        .ok_or_else(|| Error::Config(format!("no gas physics for {}", s.name)))?;
                    let mut tau = s.lifetime_years.expect("validated decay lifetime");
                    if s.name == "CH4" {
                        tau *= params.ch4_lifetime_factor;
                    }
                    let background = match s.name.as_str() {
                        "CH4" => CH4_PREINDUSTRIAL_PPB,
                        "N2O" => N2O_PREINDUSTRIAL_PPB,
                        _ => 0.0,
                    };
                    GasRule::Decay {
                        retain: (-1.0 / tau).exp(),
                        ppb_per_unit: phys.ppb_per_emission_unit()?,
                        efficiency: phys.radiative_efficiency,
                        background,
                    }
                }
                Treatment::LinearForcingProxy => {
                    let pre = params.proxy_reference_pre.get(&s.name).copied().unwrap_or(0.0);
                    let modern = params.proxy_reference_modern[&s.name];
                    GasRule::Proxy(ProxyTerm {
                        gas: g,
                        q: params.proxy_coefficient(&s.name)?,
                        reference_pre: pre,
                        inv_span: 1.0 / (modern - pre),
                    })
                }
            };
            rules.push(rule);
        }
        Ok(Model {
            rules,
            pool_retain: params
                .carbon_cycle
                .iter()
                .map(|p| p.timescale_years.map_or(1.0, |tau| (-1.0 / tau).exp()))
                .collect(),
            pool_fraction: params.carbon_cycle.iter().map(|p| p.fraction).collect(),
            co2,
            ch4: registry.index_of("CH4"),
            n2o: registry.index_of("N2O"),
            ocean: OceanCoefficients::new(params),
        })
    }
}

/// The integrated physical state, excluding history bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalState {
    /// Per gas, species-native units: CO2 ppm (total, shared by the CO2
    /// entries), decay gases ppb, proxies the raw emission.
    pub concentrations: Vec<f64>,
    /// Atmospheric CO2 above pre-industrial held in each pool, ppm.
    pub carbon_pools: Vec<f64>,
    pub ocean: OceanState,
    pub forcing: f64,
}

impl PhysicalState {
    fn zero(model: &Model) -> Self {
        let concentrations = model
            .rules
            .iter()
            .map(|r| match r {
                GasRule::Carbon => CO2_PREINDUSTRIAL_PPM,
                GasRule::Decay { background, .. } => *background,
                GasRule::Proxy(p) => p.reference_pre,
            })
            .collect();
        PhysicalState {
            concentrations,
            carbon_pools: vec![0.0; model.pool_retain.len()],
            ocean: OceanState::zero(model.ocean.n_layers()),
            forcing: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub first_year: i32,
    /// Last year ingested.
    pub year: i32,
    pub physical: PhysicalState,
    /// Flattened year-major emission history, `n_gases` per row.
    pub history: Vec<f64>,
    pub n_gases: usize,
    /// ΔT for every ingested year.
    pub temperatures: Vec<f64>,
    /// Total forcing is replaced by this value from the given year on.
    pub forcing_override: Option<(i32, f64)>,
}

impl EngineState {
    pub fn history_len(&self) -> usize {
        self.history.len() / self.n_gases
    }

    pub fn last_temperature(&self) -> f64 {
        *self.temperatures.last().expect("engine has history")
    }
}

/// The simulator. Cloning gives a deep, independent copy.
#[derive(Debug, Clone)]
pub struct ClimateEngine {
    params: EngineParams,
    registry: SpeciesRegistry,
    model: Model,
    state: EngineState,
    scratch: Vec<f64>,
}

// scratch holds transient tendencies only
impl PartialEq for ClimateEngine {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.registry == other.registry && self.state == other.state
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSnapshot {
    pub version: u32,
    pub params: EngineParams,
    pub registry: SpeciesRegistry,
    pub state: EngineState,
}

impl ClimateEngine {
    /// Builds an engine and ingests `historical` (which must end at the year
    /// before the first `step`).
    pub fn new(params: EngineParams, registry: SpeciesRegistry, historical: &EmissionTrajectory) -> Result<Self> {
        if historical.n_gases() != registry.len() {
            return Err(Error::Shape {
                what: "historical gas count",
                expected: registry.len(),
                got: historical.n_gases(),
            });
        }
        let model = Model::new(&params, &registry)?;
        let n_layers = model.ocean.n_layers();
        let mut engine = ClimateEngine {
            state: EngineState {
                first_year: historical.start_year(),
                year: historical.start_year() - 1,
                physical: PhysicalState::zero(&model),
                history: Vec::with_capacity(historical.values().len() + 64 * registry.len()),
                n_gases: registry.len(),
                temperatures: Vec::new(),
                forcing_override: None,
            },
            params,
            registry,
            model,
            scratch: vec![0.0; n_layers],
        };
        for (year, row) in historical.rows() {
            engine.check_input(year, row)?;
            engine.state.history.extend_from_slice(row);
            engine.state.year = year;
            let t = engine.advance(year, row);
            engine.state.temperatures.push(t);
        }
        Ok(engine)
    }

    pub fn params(&self) -> &EngineParams {
        &self.params
    }

    pub fn registry(&self) -> &SpeciesRegistry {
        &self.registry
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn year(&self) -> i32 {
        self.state.year
    }

    pub fn last_temperature(&self) -> f64 {
        self.state.last_temperature()
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.state.temperatures
    }

    /// Test hook: total forcing is pinned to `forcing` for `from_year` on.
    pub fn set_forcing_override(&mut self, from_year: i32, forcing: f64) {
        self.state.forcing_override = Some((from_year, forcing));
    }

    fn check_input(&self, year: i32, emissions: &[f64]) -> Result<()> {
        if year != self.state.year + 1 {
            return Err(Error::YearOrder {
                expected: self.state.year + 1,
                got: year,
            });
        }
        if emissions.len() != self.registry.len() {
            return Err(Error::Shape {
                what: "emission vector",
                expected: self.registry.len(),
                got: emissions.len(),
            });
        }
        if let Some((g, v)) = emissions
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::InvalidInput(format!(
                "emission for {} in {year} is {v}",
                self.registry.species()[g].name
            )));
        }
        Ok(())
    }

    /// Ingests `emissions` for `year` (which must be `self.year() + 1`) and
    /// returns ΔT(year).
    pub fn step(&mut self, year: i32, emissions: &[f64]) -> Result<f64> {
        self.check_input(year, emissions)?;
        self.state.history.extend_from_slice(emissions);
        self.state.year = year;
        let t = match self.params.step_mode {
            StepMode::Incremental => self.advance(year, emissions),
            StepMode::Replay => self.replay(),
        };
        self.state.temperatures.push(t);
        Ok(t)
    }

    /// Steps the next year with whatever year follows the current one.
    pub fn step_next(&mut self, emissions: &[f64]) -> Result<f64> {
        self.step(self.state.year + 1, emissions)
    }

    /// Re-integrates the whole stored history from the zero state.
    fn replay(&mut self) -> f64 {
        let mut physical = PhysicalState::zero(&self.model);
        let history = std::mem::take(&mut self.state.history);
        let mut t = 0.0;
        for (k, row) in history.chunks_exact(self.state.n_gases).enumerate() {
            let year = self.state.first_year + k as i32;
            t = integrate_year(
                &self.model,
                &mut physical,
                &mut self.scratch,
                self.state.forcing_override,
                year,
                row,
            );
        }
        self.state.history = history;
        self.state.physical = physical;
        t
    }

    fn advance(&mut self, year: i32, emissions: &[f64]) -> f64 {
        integrate_year(
            &self.model,
            &mut self.state.physical,
            &mut self.scratch,
            self.state.forcing_override,
            year,
            emissions,
        )
    }

    /// Total forcing for the current concentrations and latest emissions.
    pub fn total_forcing(&self) -> f64 {
        self.state.physical.forcing
    }

    pub fn snapshot(&self) -> EngineSnapshot {
        EngineSnapshot {
            version: SNAPSHOT_VERSION,
            params: self.params.clone(),
            registry: self.registry.clone(),
            state: self.state.clone(),
        }
    }

    pub fn from_snapshot(snapshot: EngineSnapshot) -> Result<Self> {
        if snapshot.version != SNAPSHOT_VERSION {
            return Err(Error::InvalidInput(format!(
                "engine snapshot version {} unsupported (expected {SNAPSHOT_VERSION})",
                snapshot.version
            )));
        }
        let model = Model::new(&snapshot.params, &snapshot.registry)?;
        let s = &snapshot.state;
        if s.n_gases != snapshot.registry.len()
            || s.physical.ocean.temps.len() != model.ocean.n_layers()
            || s.temperatures.len() != s.history_len()
            || s.history.len() % s.n_gases != 0
        {
            return Err(Error::InvalidInput("inconsistent engine snapshot".into()));
        }
        let n_layers = model.ocean.n_layers();
        Ok(ClimateEngine {
            params: snapshot.params,
            registry: snapshot.registry,
            model,
            state: snapshot.state,
            scratch: vec![0.0; n_layers],
        })
    }

    pub fn snapshot_json(&self) -> String {
        serde_json::to_string(&self.snapshot()).expect("snapshot serializes")
    }

    pub fn from_snapshot_json(text: &str) -> Result<Self> {
        Self::from_snapshot(serde_json::from_str(text)?)
    }
}

/// Concentration update for one year.
fn update_concentrations(model: &Model, physical: &mut PhysicalState, emissions: &[f64]) {
    let co2_emission: f64 = model.co2.iter().map(|&g| emissions[g]).sum();
    let injected = co2_emission / GTC_PER_PPM;
    let mut total = 0.0;
    for ((pool, &retain), &frac) in physical
        .carbon_pools
        .iter_mut()
        .zip(&model.pool_retain)
        .zip(&model.pool_fraction)
    {
        *pool = *pool * retain + frac * injected;
        total += *pool;
    }
    let co2_ppm = CO2_PREINDUSTRIAL_PPM + total;
    for (g, rule) in model.rules.iter().enumerate() {
        let c = &mut physical.concentrations[g];
        match rule {
            GasRule::Carbon => *c = co2_ppm,
            GasRule::Decay {
                retain,
                ppb_per_unit,
                background,
                ..
            } => *c = background + (*c - background) * retain + ppb_per_unit * emissions[g],
            GasRule::Proxy(_) => *c = emissions[g],
        }
    }
}

fn forcing_of(model: &Model, physical: &PhysicalState) -> f64 {
    let conc = &physical.concentrations;
    let n2o = model.n2o.map_or(N2O_PREINDUSTRIAL_PPB, |g| conc[g]);
    let ch4 = model.ch4.map_or(CH4_PREINDUSTRIAL_PPB, |g| conc[g]);
    let co2 = model.co2.first().map_or(CO2_PREINDUSTRIAL_PPM, |&g| conc[g]);
    let mut f = co2_forcing(co2, n2o);
    if model.ch4.is_some() {
        f += ch4_forcing(ch4, n2o);
    }
    if model.n2o.is_some() {
        f += n2o_forcing(co2, n2o, ch4);
    }
    for (g, rule) in model.rules.iter().enumerate() {
        match rule {
            GasRule::Decay {
                efficiency: Some(re),
                background,
                ..
            } => f += re * (conc[g] - background),
            GasRule::Proxy(term) => f += term.forcing(conc[g]),
            _ => {}
        }
    }
    f
}

fn integrate_year(
    model: &Model,
    physical: &mut PhysicalState,
    scratch: &mut [f64],
    forcing_override: Option<(i32, f64)>,
    year: i32,
    emissions: &[f64],
) -> f64 {
    update_concentrations(model, physical, emissions);
    let forcing = match forcing_override {
        Some((from, f)) if year >= from => f,
        _ => forcing_of(model, physical),
    };
    physical.forcing = forcing;
    let air = model
        .ocean
        .advance_year(&mut physical.ocean.temps, scratch, forcing);
    physical.ocean.air = air;
    air
}

/// ΔT for every year of `trajectory`, integrated in one pass.
pub fn simulate_trajectory(
    params: &EngineParams,
    registry: &SpeciesRegistry,
    trajectory: &EmissionTrajectory,
) -> Result<Vec<f64>> {
    let mut params = params.clone();
    params.step_mode = StepMode::Incremental;
    let engine = ClimateEngine::new(params, registry.clone(), trajectory)?;
    Ok(engine.state.temperatures)
}

/// Forcing that `registry`'s gases would exert with the given concentrations
/// and proxy emissions, without touching any engine. Exposed for tests.
pub fn forcing_for_concentrations(
    params: &EngineParams,
    registry: &SpeciesRegistry,
    concentrations: &[f64],
) -> Result<f64> {
    let model = Model::new(params, registry)?;
    let mut physical = PhysicalState::zero(&model);
    if concentrations.len() != registry.len() {
        return Err(Error::Shape {
            what: "concentration vector",
            expected: registry.len(),
            got: concentrations.len(),
        });
    }
    physical.concentrations.copy_from_slice(concentrations);
    Ok(forcing_of(&model, &physical))
}

/// Reference concentrations (pre-industrial, proxies at their zero-forcing
/// emission) in registry order.
pub fn reference_concentrations(params: &EngineParams, registry: &SpeciesRegistry) -> Result<Vec<f64>> {
    let model = Model::new(params, registry)?;
    Ok(PhysicalState::zero(&model).concentrations)
}
