use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::species::SpeciesRegistry;

pub const LEVERS: [&str; 3] = ["energy", "methane", "agriculture"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeverLevels {
    pub energy: [f64; 3],
    pub methane: [f64; 3],
    pub agriculture: [f64; 3],
    pub adaptation: [f64; 3],
}

impl Default for LeverLevels {
    fn default() -> Self {
        LeverLevels {
            energy: [0.0, 0.5, 1.0],
            methane: [0.0, 0.5, 1.0],
            agriculture: [0.0, 0.5, 1.0],
            adaptation: [0.0, 0.03, 0.08],
        }
    }
}

impl LeverLevels {
    fn tables(&self) -> [&[f64; 3]; 4] {
        [&self.energy, &self.methane, &self.agriculture, &self.adaptation]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentCosts {
    pub climate: f64,
    pub energy: f64,
    pub methane: f64,
    pub agriculture: f64,
    pub adaptation: f64,
}

impl AgentCosts {
    pub fn levers(&self) -> [f64; 3] {
        [self.energy, self.methane, self.agriculture]
    }

    fn all(&self) -> [f64; 5] {
        [self.climate, self.energy, self.methane, self.agriculture, self.adaptation]
    }
}

/// Either one scalar share per agent (applied to every gas) or a full
/// agent-by-gas table in registry order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shares {
    PerAgent(Vec<f64>),
    PerGas(Vec<Vec<f64>>),
}

/// Parameters of one mitigation game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub n_agents: usize,
    pub shares: Shares,
    #[serde(default)]
    pub levels: LeverLevels,
    /// Per-year growth deviation per unit effort: lever -> gas -> coefficient.
    /// Missing entries are zero.
    pub policy: BTreeMap<String, BTreeMap<String, f64>>,
    pub costs: Vec<AgentCosts>,
    pub prevention_decay: f64,
    pub prevention_max: f64,
    pub psi: f64,
    pub eta: f64,
    pub gamma: f64,
    pub first_year: i32,
    pub last_year: i32,
    pub lookahead_years: usize,
}

fn energy_row() -> BTreeMap<String, f64> {
    [("CO2_FF", -0.05), ("CH4", -0.005), ("N2O", -0.005), ("SO2", -0.05)]
        .into_iter()
        .map(|(g, v)| (g.to_string(), v))
        .collect()
}

impl ScenarioSpec {
    /// Four identical agents; energy is the only lever with an effect.
    pub fn homogeneous() -> Self {
        ScenarioSpec {
            name: "homogeneous".into(),
            n_agents: 4,
            shares: Shares::PerAgent(vec![0.25; 4]),
            levels: LeverLevels::default(),
            policy: BTreeMap::from([("energy".to_string(), energy_row())]),
            costs: vec![
                AgentCosts {
                    climate: 100.0,
                    energy: 1e-3,
                    methane: 10.0,
                    agriculture: 10.0,
                    adaptation: 10.0,
                };
                4
            ],
            prevention_decay: 0.95,
            prevention_max: 0.0,
            psi: 0.003,
            eta: 0.1,
            gamma: 0.999,
            first_year: 2016,
            last_year: 2050,
            lookahead_years: 15,
        }
    }

    /// Ten agents with unequal shares and costs, all three levers active.
    pub fn heterogeneous() -> Self {
        let climate = [50.0, 50.0, 100.0, 100.0, 10.0, 25.0, 50.0, 1000.0, 1.0, 15.0];
        let energy = [1e-3, 1e-2, 1e-1, 10.0, 1e-1, 1e-3, 1e-2, 1e-1, 10.0, 1e-1];
        let methane = [1e-3, 1e-2, 10.0, 1e-1, 1e-1, 2e-1, 5e-2, 1e-1, 10.0, 1e-1];
        let agriculture = [1e-1, 10.0, 1e-2, 1e-3, 1e-1, 1e-3, 10.0, 100.0, 10.0, 1e-1];
        let adaptation = [10.0, 1e-1, 1e-2, 1e-3, 1e-1, 1e-3, 1e-2, 1e-1, 10.0, 1e-1];
        let costs = (0..10)
            .map(|i| AgentCosts {
                climate: climate[i],
                energy: energy[i],
                methane: methane[i],
                agriculture: agriculture[i],
                adaptation: adaptation[i],
            })
            .collect();
        let row = |pairs: &[(&str, f64)]| pairs.iter().map(|(g, v)| (g.to_string(), *v)).collect();
        ScenarioSpec {
            name: "heterogeneous".into(),
            n_agents: 10,
            shares: Shares::PerAgent(vec![0.35, 0.15, 0.10, 0.05, 0.02, 0.01, 0.03, 0.14, 0.1, 0.05]),
            levels: LeverLevels::default(),
            policy: BTreeMap::from([
                ("energy".to_string(), energy_row()),
                ("methane".to_string(), row(&[("CH4", -0.04)])),
                (
                    "agriculture".to_string(),
                    row(&[("CO2_AFOLU", -0.04), ("CH4", -0.005), ("N2O", -0.03)]),
                ),
            ]),
            costs,
            prevention_decay: 0.95,
            prevention_max: 0.5,
            psi: 0.003,
            eta: 0.1,
            gamma: 0.999,
            first_year: 2016,
            last_year: 2050,
            lookahead_years: 15,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "homogeneous" | "i" => Some(Self::homogeneous()),
            "heterogeneous" | "ii" => Some(Self::heterogeneous()),
            _ => None,
        }
    }

    /// Reads TOML or JSON (by extension), or a built-in name.
    pub fn load(path_or_name: &str) -> Result<Self> {
        if let Some(spec) = Self::builtin(path_or_name) {
            return Ok(spec);
        }
        let path = Path::new(path_or_name);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            Ok(toml::from_str(&text)?)
        }
    }

    pub fn horizon(&self) -> usize {
        (self.last_year - self.first_year + 1).max(0) as usize
    }

    pub fn observation_len(&self, n_controllable: usize) -> usize {
        2 + self.n_agents * (2 * n_controllable + 1)
    }

    /// Agent-by-gas share table; rejects tables whose columns do not sum to one.
    pub fn share_table(&self, registry: &SpeciesRegistry) -> Result<Vec<Vec<f64>>> {
        let g = registry.len();
        let table = match &self.shares {
            Shares::PerAgent(s) => s.iter().map(|&v| vec![v; g]).collect::<Vec<_>>(),
            Shares::PerGas(rows) => rows.clone(),
        };
        if table.len() != self.n_agents {
            return Err(Error::Shape {
                what: "share table agents",
                expected: self.n_agents,
                got: table.len(),
            });
        }
        for row in &table {
            if row.len() != g {
                return Err(Error::Shape {
                    what: "share table gases",
                    expected: g,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Config("shares must be finite and non-negative".into()));
            }
        }
        for k in 0..g {
            let total: f64 = table.iter().map(|r| r[k]).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "shares for gas {} sum to {total}, not 1",
                    registry.species()[k].name
                )));
            }
        }
        Ok(table)
    }

    /// `3 x |C|` matrix in lever order (energy, methane, agriculture) and
    /// registry controllable order.
    pub fn policy_matrix(&self, registry: &SpeciesRegistry) -> Result<Vec<Vec<f64>>> {
        let names = registry.controllable_names();
        for (lever, row) in &self.policy {
            if !LEVERS.contains(&lever.as_str()) {
                return Err(Error::Config(format!("unknown lever {lever}")));
            }
            for (gas, v) in row {
                if !names.contains(&gas.as_str()) {
                    return Err(Error::Config(format!("lever {lever} targets non-controllable gas {gas}")));
                }
                if !v.is_finite() || *v <= -1.0 {
                    return Err(Error::Config(format!("policy coefficient {lever}/{gas} = {v} out of range")));
                }
            }
        }
        Ok(LEVERS
            .iter()
            .map(|lever| {
                names
                    .iter()
                    .map(|g| self.policy.get(*lever).and_then(|r| r.get(*g)).copied().unwrap_or(0.0))
                    .collect()
            })
            .collect())
    }

    pub fn validate(&self, registry: &SpeciesRegistry) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::Config("at least one agent is required".into()));
        }
        if self.last_year < self.first_year {
            return Err(Error::Config("last_year precedes first_year".into()));
        }
        if self.costs.len() != self.n_agents {
            return Err(Error::Shape {
                what: "agent costs",
                expected: self.n_agents,
                got: self.costs.len(),
            });
        }
        if self.costs.iter().flat_map(|c| c.all()).any(|v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::Config("costs must be finite and non-negative".into()));
        }
        if self.levels.tables().iter().flat_map(|t| t.iter()).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("lever levels must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.prevention_decay) || !(0.0..=1.0).contains(&self.prevention_max) {
            return Err(Error::Config("prevention decay and maximum must lie in [0, 1]".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1]".into()));
        }
        if !(self.psi >= 0.0 && self.eta >= 0.0) {
            return Err(Error::Config("psi and eta must be non-negative".into()));
        }
        self.share_table(registry)?;
        self.policy_matrix(registry)?;
        Ok(())
    }
}
