//! The mitigation game: agents pick discrete lever levels each year, their
//! emissions grow off the baseline, and a pluggable climate backend turns the
//! global sum into warming that everyone pays for.

mod backend;
mod record;
mod spec;

pub use backend::{build_backend, ClimateBackend, EngineTag, MockBackend, SimulatorBackend, SurrogateBackend};
pub use record::{EpisodeRecord, TrajectoryStore, TrajectoryStoreHeader};
pub use spec::{AgentCosts, LeverLevels, ScenarioSpec, Shares, LEVERS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{baseline_growth, EmissionTrajectory, GrowthTable};
use crate::species::SpeciesRegistry;

/// Level indices into the scenario's lever tables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentAction {
    pub energy: u8,
    pub methane: u8,
    pub agriculture: u8,
    pub adaptation: u8,
}

impl AgentAction {
    pub const NONE: AgentAction = AgentAction {
        energy: 0,
        methane: 0,
        agriculture: 0,
        adaptation: 0,
    };

    pub fn new(energy: u8, methane: u8, agriculture: u8, adaptation: u8) -> Self {
        AgentAction {
            energy,
            methane,
            agriculture,
            adaptation,
        }
    }

    pub fn indices(&self) -> [u8; 4] {
        [self.energy, self.methane, self.agriculture, self.adaptation]
    }

    pub fn from_indices(i: [u8; 4]) -> Self {
        AgentAction::new(i[0], i[1], i[2], i[3])
    }

    /// Effort values for (energy, methane, agriculture) and the adaptation spend.
    pub fn resolve(&self, levels: &LeverLevels) -> Result<([f64; 3], f64)> {
        let pick = |table: &[f64; 3], i: u8| {
            table
                .get(i as usize)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("lever level index {i} out of range")))
        };
        Ok((
            [
                pick(&levels.energy, self.energy)?,
                pick(&levels.methane, self.methane)?,
                pick(&levels.agriculture, self.agriculture)?,
            ],
            pick(&levels.adaptation, self.adaptation)?,
        ))
    }
}

/// Growth deviation on the controllable gases: `Σ_rows effort · M[row, g]`.
pub fn lever_to_growth(efforts: &[f64; 3], policy: &[Vec<f64>]) -> Vec<f64> {
    let n = policy.first().map_or(0, Vec::len);
    (0..n).map(|g| (0..3).map(|r| efforts[r] * policy[r][g]).sum()).collect()
}

pub fn prevention_update(stock: f64, decay: f64, spend: f64, max: f64) -> f64 {
    (stock * decay + spend).min(max)
}

/// Prevention `u` years after the episode ends, with no further spending.
pub fn lookahead_prevention(stock: f64, decay: f64, u: usize, max: f64) -> f64 {
    (stock * decay.powi(u as i32)).min(max)
}

/// Cost breakdown for one agent-year.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTerms {
    pub climate: f64,
    pub levers: f64,
    pub prevention: f64,
}

impl RewardTerms {
    pub fn compute(costs: &AgentCosts, psi: f64, dt: f64, prevention: f64, efforts: &[f64; 3], spend: f64) -> Self {
        let lc = costs.levers();
        RewardTerms {
            climate: climate_cost(costs.climate, psi, dt, prevention),
            levers: (0..3).map(|k| lc[k] * efforts[k] * efforts[k]).sum(),
            prevention: costs.adaptation * spend,
        }
    }

    pub fn reward(&self, eta: f64) -> f64 {
        -eta * (self.climate + self.levers + self.prevention)
    }
}

pub fn climate_cost(c_climate: f64, psi: f64, dt: f64, prevention: f64) -> f64 {
    c_climate * psi * dt.powi(4) * (1.0 - prevention)
}

fn sum_agents(emissions: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for row in emissions.chunks_exact(out.len()) {
        for (acc, v) in out.iter_mut().zip(row) {
            *acc += v;
        }
    }
}

/// Normalized year index, 0 in the first year and 1 in the last.
pub fn year_fraction(year: i32, first: i32, last: i32) -> f64 {
    if last == first {
        return 0.0;
    }
    ((year - first) as f64 / (last - first) as f64).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameState {
    /// Year the next step resolves.
    pub year: i32,
    /// Agent-major `N × G` emissions for the previous year.
    pub emissions: Vec<f64>,
    pub prevention: Vec<f64>,
    /// Agent-major `N × |C|` cumulative deviation from the baseline share.
    pub deviations: Vec<f64>,
    pub last_dt: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dt: f64,
    pub done: bool,
}

pub struct ClimateEnv {
    spec: ScenarioSpec,
    registry: SpeciesRegistry,
    baseline: EmissionTrajectory,
    growth: GrowthTable,
    shares: Vec<Vec<f64>>,
    policy: Vec<Vec<f64>>,
    controllable: Vec<usize>,
    backend: Box<dyn ClimateBackend>,
    state: GameState,
    record: EpisodeRecord,
    global: Vec<f64>,
}

impl ClimateEnv {
    /// `baseline` must cover the years before `first_year` and run through
    /// the end of the look-ahead.
    pub fn new(
        spec: ScenarioSpec,
        registry: SpeciesRegistry,
        baseline: EmissionTrajectory,
        backend: Box<dyn ClimateBackend>,
    ) -> Result<Self> {
        spec.validate(&registry)?;
        if baseline.n_gases() != registry.len() {
            return Err(Error::Shape {
                what: "baseline gases",
                expected: registry.len(),
                got: baseline.n_gases(),
            });
        }
        let end = spec.last_year + spec.lookahead_years as i32;
        if !baseline.contains_year(spec.first_year - 1) || !baseline.contains_year(end) {
            return Err(Error::InvalidInput(format!(
                "baseline must cover {}..={end}",
                spec.first_year - 1
            )));
        }
        let growth = baseline_growth(&baseline)?;
        let shares = spec.share_table(&registry)?;
        let policy = spec.policy_matrix(&registry)?;
        let controllable = registry.controllable().to_vec();
        let g = registry.len();
        let record = EpisodeRecord::empty(backend.tag(), &spec.name, 0, spec.first_year, g);
        let mut env = ClimateEnv {
            state: GameState {
                year: spec.first_year,
                emissions: Vec::new(),
                prevention: Vec::new(),
                deviations: Vec::new(),
                last_dt: 0.0,
                done: true,
            },
            spec,
            registry,
            baseline,
            growth,
            shares,
            policy,
            controllable,
            backend,
            record,
            global: vec![0.0; g],
        };
        env.reset(0)?;
        Ok(env)
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn registry(&self) -> &SpeciesRegistry {
        &self.registry
    }

    pub fn baseline(&self) -> &EmissionTrajectory {
        &self.baseline
    }

    pub fn state(&self) -> &GameState {
        &self.state
    }

    pub fn record(&self) -> &EpisodeRecord {
        &self.record
    }

    pub fn take_record(&mut self) -> EpisodeRecord {
        let fresh = EpisodeRecord::empty(
            self.backend.tag(),
            &self.spec.name,
            self.record.seed,
            self.spec.first_year,
            self.registry.len(),
        );
        std::mem::replace(&mut self.record, fresh)
    }

    pub fn engine_tag(&self) -> EngineTag {
        self.backend.tag()
    }

    pub fn n_agents(&self) -> usize {
        self.spec.n_agents
    }

    pub fn observation_len(&self) -> usize {
        self.spec.observation_len(self.controllable.len())
    }

    pub fn policy_matrix(&self) -> &[Vec<f64>] {
        &self.policy
    }

    /// Starts a new episode. The game itself is deterministic; the seed is
    /// carried into the record so trajectories can be traced to their run.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        let dt = self.backend.reset()?;
        let g = self.registry.len();
        let n = self.spec.n_agents;
        let base = self.baseline.row(self.spec.first_year - 1).expect("checked in new");
        let mut emissions = vec![0.0; n * g];
        for i in 0..n {
            for k in 0..g {
                emissions[i * g + k] = self.shares[i][k] * base[k];
            }
        }
        self.state = GameState {
            year: self.spec.first_year,
            emissions,
            prevention: vec![0.0; n],
            deviations: vec![0.0; n * self.controllable.len()],
            last_dt: dt,
            done: false,
        };
        self.record = EpisodeRecord::empty(self.backend.tag(), &self.spec.name, seed, self.spec.first_year, g);
        Ok(self.observation())
    }

    pub fn observation(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.observation_len());
        self.write_observation(&mut out);
        out
    }

    fn write_observation(&self, out: &mut Vec<f64>) {
        let s = &self.state;
        let g = self.registry.len();
        out.clear();
        out.push(s.last_dt);
        out.push(year_fraction(s.year, self.spec.first_year, self.spec.last_year));
        for i in 0..self.spec.n_agents {
            out.extend(self.controllable.iter().map(|&k| s.emissions[i * g + k]));
        }
        out.extend_from_slice(&s.deviations);
        out.extend_from_slice(&s.prevention);
    }

    pub fn step(&mut self, actions: &[AgentAction]) -> Result<StepOutcome> {
        let n = self.spec.n_agents;
        if self.state.done {
            return Err(Error::InvalidInput("episode is over; call reset".into()));
        }
        if actions.len() != n {
            return Err(Error::Shape {
                what: "joint action",
                expected: n,
                got: actions.len(),
            });
        }
        let resolved = actions
            .iter()
            .map(|a| a.resolve(&self.spec.levels))
            .collect::<Result<Vec<_>>>()?;
        let year = self.state.year;
        let g = self.registry.len();
        let nc = self.controllable.len();
        let growth = self.growth.row(year).expect("checked in new");
        let base = self.baseline.row(year).expect("checked in new");
        for (i, (efforts, _)) in resolved.iter().enumerate() {
            let dev = lever_to_growth(efforts, &self.policy);
            let row = &mut self.state.emissions[i * g..(i + 1) * g];
            for (k, v) in row.iter_mut().enumerate() {
                *v *= growth[k];
            }
            for (c, &k) in self.controllable.iter().enumerate() {
                row[k] *= 1.0 + dev[c];
            }
        }
        sum_agents(&self.state.emissions, &mut self.global);
        let dt = self.backend.step(year, &self.global)?;
        if !dt.is_finite() {
            return Err(Error::InvalidInput(format!("engine returned non-finite ΔT in {year}")));
        }
        let mut rewards = Vec::with_capacity(n);
        for (i, (efforts, spend)) in resolved.iter().enumerate() {
            let p = &mut self.state.prevention[i];
            *p = prevention_update(*p, self.spec.prevention_decay, *spend, self.spec.prevention_max);
            for (c, &k) in self.controllable.iter().enumerate() {
                self.state.deviations[i * nc + c] += self.state.emissions[i * g + k] - self.shares[i][k] * base[k];
            }
            let terms = RewardTerms::compute(&self.spec.costs[i], self.spec.psi, dt, *p, efforts, *spend);
            rewards.push(terms.reward(self.spec.eta));
        }
        self.record.push_year(actions, &rewards, &self.global, dt);
        self.state.last_dt = dt;
        let done = year >= self.spec.last_year;
        if done {
            let penalty = self.lookahead()?;
            for (r, pen) in rewards.iter_mut().zip(&penalty) {
                *r -= self.spec.eta * pen;
            }
            if let Some(last) = self.record.rewards.last_mut() {
                last.copy_from_slice(&rewards);
            }
            self.state.done = true;
        } else {
            self.state.year += 1;
        }
        Ok(StepOutcome {
            observation: self.observation(),
            rewards,
            dt,
            done,
        })
    }

    /// Rolls the live engine on with baseline growth and returns each agent's
    /// summed climate cost over the look-ahead years.
    fn lookahead(&mut self) -> Result<Vec<f64>> {
        let n = self.spec.n_agents;
        let g = self.registry.len();
        let mut emissions = self.state.emissions.clone();
        let mut penalty = vec![0.0; n];
        for u in 1..=self.spec.lookahead_years {
            let year = self.spec.last_year + u as i32;
            let growth = self.growth.row(year).expect("checked in new");
            for row in emissions.chunks_exact_mut(g) {
                for (v, d) in row.iter_mut().zip(growth) {
                    *v *= d;
                }
            }
            sum_agents(&emissions, &mut self.global);
            let dt = self.backend.step(year, &self.global)?;
            if !dt.is_finite() {
                return Err(Error::InvalidInput(format!("engine returned non-finite ΔT in {year}")));
            }
            for i in 0..n {
                let p = lookahead_prevention(
                    self.state.prevention[i],
                    self.spec.prevention_decay,
                    u,
                    self.spec.prevention_max,
                );
                penalty[i] += climate_cost(self.spec.costs[i].climate, self.spec.psi, dt, p);
            }
            self.record.push_rollout(&self.global, dt);
        }
        Ok(penalty)
    }

    /// Plays one full episode with a fixed per-year action schedule.
    pub fn run_schedule(&mut self, seed: u64, schedule: &[Vec<AgentAction>]) -> Result<EpisodeRecord> {
        self.reset(seed)?;
        if schedule.len() != self.spec.horizon() {
            return Err(Error::Shape {
                what: "action schedule years",
                expected: self.spec.horizon(),
                got: schedule.len(),
            });
        }
        for joint in schedule {
            self.step(joint)?;
        }
        Ok(self.take_record())
    }
}

/// Rescales observations so every entry is of order one: emissions by each
/// agent's starting emissions, deviations by ten times that. Not part of the
/// game itself; the policy sees the scaled vector while rewards are unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub scale: Vec<f64>,
}

impl ObsNormalizer {
    pub fn identity(len: usize) -> Self {
        ObsNormalizer { scale: vec![1.0; len] }
    }

    pub fn from_env(env: &ClimateEnv) -> Self {
        let n = env.n_agents();
        let nc = env.controllable.len();
        let base = env.baseline.row(env.spec.first_year - 1).expect("checked in new");
        let mut scale = vec![1.0, 1.0];
        let start: Vec<f64> = (0..n)
            .flat_map(|i| env.controllable.iter().map(move |&k| (i, k)))
            .map(|(i, k)| env.shares[i][k] * base[k])
            .collect();
        let inv = |v: f64| if v > 0.0 { 1.0 / v } else { 1.0 };
        scale.extend(start.iter().map(|&v| inv(v)));
        scale.extend(start.iter().map(|&v| inv(10.0 * v)));
        scale.extend(std::iter::repeat(1.0).take(n));
        debug_assert_eq!(scale.len(), 2 + n * (2 * nc + 1));
        ObsNormalizer { scale }
    }

    pub fn apply(&self, obs: &mut [f64]) {
        for (o, s) in obs.iter_mut().zip(&self.scale) {
            *o *= s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::baseline::{synthetic_baseline, BaselineConfig};
    use crate::species::default_registry;

    fn mock_env(spec: ScenarioSpec, dt: f64) -> ClimateEnv {
        let reg = default_registry();
        let base = synthetic_baseline(&reg, &BaselineConfig::default()).unwrap();
        ClimateEnv::new(spec, reg, base, Box::new(MockBackend::constant(dt))).unwrap()
    }

    #[test]
    fn effective_growth_arithmetic() {
        let d: f64 = 1.01 * (1.0 + -0.05);
        assert!((d - 0.9595).abs() < 1e-15);
    }

    #[test]
    fn prevention_examples() {
        assert!((prevention_update(0.2, 0.95, 0.03, 0.5) - 0.22).abs() < 1e-15);
        assert_eq!(prevention_update(0.49, 0.95, 0.08, 0.5), 0.5);
        assert!((lookahead_prevention(0.4, 0.95, 3, 0.5) - 0.342950).abs() < 1e-12);
    }

    #[test]
    fn reward_examples() {
        let c = ScenarioSpec::homogeneous().costs[0];
        let t = RewardTerms::compute(&c, 0.003, 1.5, 0.0, &[0.0; 3], 0.0);
        assert!((t.climate - 1.51875).abs() < 1e-12);
        assert!((t.reward(0.1) + 0.151875).abs() < 1e-12);
        let t = RewardTerms::compute(&c, 0.003, 0.0, 0.3, &[1.0, 0.0, 0.0], 0.0);
        assert!((t.levers - 0.001).abs() < 1e-15);
        assert_eq!(RewardTerms::compute(&c, 0.003, 0.0, 0.7, &[0.0; 3], 0.0).reward(0.1), 0.0);
    }

    #[test]
    fn lever_growth_examples() {
        let reg = default_registry();
        let m = ScenarioSpec::homogeneous().policy_matrix(&reg).unwrap();
        assert_eq!(lever_to_growth(&[0.0; 3], &m), vec![0.0; 5]);
        assert_eq!(lever_to_growth(&[1.0, 0.0, 0.0], &m), vec![-0.05, 0.0, -0.005, -0.005, -0.05]);
        let m = ScenarioSpec::heterogeneous().policy_matrix(&reg).unwrap();
        assert_eq!(lever_to_growth(&[0.0, 1.0, 0.0], &m), vec![0.0, 0.0, -0.04, 0.0, 0.0]);
    }

    #[test]
    fn reset_splits_baseline_and_sizes_observation() {
        let env = mock_env(ScenarioSpec::homogeneous(), 1.0);
        let obs = env.observation();
        assert_eq!(obs.len(), 46);
        assert_eq!(obs[0], 1.0);
        assert_eq!(obs[1], 0.0);
        let g = env.registry.len();
        let base = env.baseline.row(2015).unwrap();
        for k in 0..g {
            let total: f64 = (0..4).map(|i| env.state.emissions[i * g + k]).sum();
            assert_eq!(total, base[k]);
        }
    }

    #[test]
    fn zero_actions_track_baseline() {
        let mut env = mock_env(ScenarioSpec::heterogeneous(), 0.0);
        let schedule = vec![vec![AgentAction::NONE; 10]; 35];
        let rec = env.run_schedule(3, &schedule).unwrap();
        assert!(env.state.deviations.iter().all(|&d| d.abs() < 1e-9 * 1e4));
        let g = env.registry.len();
        for (t, year) in (2016..=2065).enumerate() {
            let base = env.baseline.row(year).unwrap();
            for k in 0..g {
                let got = rec.emissions[t * g + k];
                assert!((got - base[k]).abs() <= 1e-12 * base[k].abs(), "{year} gas {k}");
            }
        }
        assert!(rec.rewards.iter().flatten().all(|&r| r == 0.0));
        assert_eq!(rec.n_years(), 50);
    }

    #[test]
    fn final_step_flags_done_and_adds_lookahead() {
        let mut env = mock_env(ScenarioSpec::homogeneous(), 1.0);
        let mut last = None;
        for _ in 0..35 {
            last = Some(env.step(&[AgentAction::NONE; 4]).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done);
        assert_eq!(last.observation[1], 1.0);
        // one year of cost plus fifteen look-ahead years at the same ΔT
        let one = 0.1 * 100.0 * 0.003;
        assert!((last.rewards[0] + 16.0 * one).abs() < 1e-12);
        assert!(env.step(&[AgentAction::NONE; 4]).is_err());
    }

    #[test]
    fn wrong_arity_and_level_are_rejected() {
        let mut env = mock_env(ScenarioSpec::homogeneous(), 1.0);
        assert!(matches!(env.step(&[AgentAction::NONE; 3]), Err(Error::Shape { .. })));
        let bad = AgentAction::new(3, 0, 0, 0);
        assert!(env.step(&[bad; 4]).is_err());
    }

    #[test]
    fn normalizer_scales_emissions_to_unity() {
        let env = mock_env(ScenarioSpec::homogeneous(), 1.0);
        let norm = ObsNormalizer::from_env(&env);
        let mut obs = env.observation();
        norm.apply(&mut obs);
        assert!(obs[2..22].iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }
}
