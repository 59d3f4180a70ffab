//! Engine configuration: the upwelling-diffusion climate response parameters,
//! emission-to-forcing coefficients, and the supporting physics tables the
//! engine needs (carbon-cycle impulse response, gas conversion factors,
//! proxy normalization references).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::baseline::anchor_table;
use crate::species::{SpeciesRegistry, Treatment};

pub const DEFAULT_GAS_PHYSICS_CSV: &str = include_str!("../../data/gas_physics.csv");

/// Moles of dry air in the atmosphere; 1 ppb of a gas with molar mass `M`
/// weighs `AIR_MOLES * 1e-9 * M` grams.
pub const AIR_MOLES: f64 = 1.773e20;
/// Atmospheric CO2 mass per ppm.
pub const GTC_PER_PPM: f64 = 2.124;
/// Volumetric heat capacity of sea water, W yr m^-3 K^-1.
pub const SEAWATER_HEAT_CAPACITY: f64 = 1025.0 * 3990.0 / SECONDS_PER_YEAR;
pub const SECONDS_PER_YEAR: f64 = 3.15576e7;

pub const CO2_PREINDUSTRIAL_PPM: f64 = 278.0;
pub const CH4_PREINDUSTRIAL_PPB: f64 = 722.0;
pub const N2O_PREINDUSTRIAL_PPB: f64 = 270.0;

/// One term of the CO2 impulse response. `timescale_years = None` is the
/// permanent (infinite-lifetime) fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarbonPool {
    pub fraction: f64,
    pub timescale_years: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepMode {
    /// Each step re-integrates the engine over the whole stored emission
    /// history, i.e. evaluates `f(E_1..E_t)` from scratch.
    #[default]
    Replay,
    /// Each step advances the stored state by one year.
    Incremental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasPhysics {
    pub name: String,
    pub molar_mass: f64,
    pub emission_unit: String,
    pub radiative_efficiency: Option<f64>,
}

impl GasPhysics {
    /// Concentration increment in ppb per unit of emission.
    pub fn ppb_per_emission_unit(&self) -> Result<f64> {
        let grams_per_ppb = AIR_MOLES * 1e-9 * self.molar_mass;
        let grams_per_unit = match self.emission_unit.as_str() {
            "Tg" => 1e12,
            "kt" => 1e9,
            other => {
                return Err(Error::Config(format!(
                    "{}: unknown emission unit {other}",
                    self.name
                )))
            }
        };
        Ok(grams_per_unit / grams_per_ppb)
    }
}

pub fn default_gas_physics() -> Vec<GasPhysics> {
    csv::Reader::from_reader(DEFAULT_GAS_PHYSICS_CSV.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .expect("shipped gas physics table is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineParams {
    /// Air-sea heat exchange, W m^-2 K^-1.
    pub rlamdo: f64,
    /// Vertical heat diffusivity, cm^2 s^-1.
    pub akapa: f64,
    /// Ratio of the sinking polar water anomaly to the mixed-layer anomaly.
    pub cpi: f64,
    /// Upwelling velocity, m yr^-1.
    #[serde(rename = "W")]
    pub upwelling: f64,
    /// Mixed-layer to thermocline heat exchange, W m^-2 K^-1.
    pub beto: f64,
    /// Climate sensitivity, K W^-1 m^2.
    pub lambda: f64,
    /// Mixed-layer depth, m.
    pub mixed: f64,

    pub qbmb: f64,
    pub qo3: f64,
    pub qdirso2: f64,
    pub qindso2: f64,
    pub qbc: f64,
    pub qoc: f64,

    pub n_ocean_layers: usize,
    pub substeps_per_year: usize,
    pub deep_layer_thickness: f64,
    pub step_mode: StepMode,
    pub carbon_cycle: Vec<CarbonPool>,
    /// Multiplier on the CH4 table lifetime giving the effective single lifetime.
    pub ch4_lifetime_factor: f64,
    /// Split of `qo3` across the ozone precursors.
    pub ozone_precursor_weights: BTreeMap<String, f64>,
    /// Per-species coefficients for proxies without a coefficient of their
    /// own in the response table (NH3 by default).
    pub extra_proxy_q: BTreeMap<String, f64>,
    /// Proxy emission levels at which the species contributes zero forcing.
    pub proxy_reference_pre: BTreeMap<String, f64>,
    /// Proxy emission levels at which the species contributes its full q.
    pub proxy_reference_modern: BTreeMap<String, f64>,
    pub gas_physics: Vec<GasPhysics>,
}

impl Default for EngineParams {
    fn default() -> Self {
        let anchors = anchor_table();
        let proxies = [
            "SO2",
            "NOx",
            "CO",
            "NMVOC",
            "NH3",
            "BMB_AEROS_BC",
            "BMB_AEROS_OC",
            "BC",
            "OC",
        ];
        let proxy_reference_modern = proxies
            .iter()
            .map(|&name| {
                let row = anchors
                    .iter()
                    .find(|a| a.name == name)
                    .expect("anchor row for every proxy");
                (name.to_string(), row.value_at(2015))
            })
            .collect();
        let proxy_reference_pre = proxies.iter().map(|&n| (n.to_string(), 0.0)).collect();

        EngineParams {
            rlamdo: 15.0836,
            akapa: 0.6568,
            cpi: 0.2077,
            upwelling: 2.2059,
            beto: 6.8982,
            lambda: 0.6063,
            mixed: 107.2422,
            qbmb: 0.0,
            qo3: 0.5,
            qdirso2: -0.3562,
            qindso2: -0.9661,
            qbc: 0.1566,
            qoc: -0.0806,
            n_ocean_layers: 40,
            substeps_per_year: 12,
            deep_layer_thickness: 100.0,
            step_mode: StepMode::Replay,
            // Joos et al. (2013) multi-model mean impulse response.
            carbon_cycle: vec![
                CarbonPool {
                    fraction: 0.2173,
                    timescale_years: None,
                },
                CarbonPool {
                    fraction: 0.2240,
                    timescale_years: Some(394.4),
                },
                CarbonPool {
                    fraction: 0.2824,
                    timescale_years: Some(36.54),
                },
                CarbonPool {
                    fraction: 0.2763,
                    timescale_years: Some(4.304),
                },
            ],
            ch4_lifetime_factor: 1.0,
            ozone_precursor_weights: [("NOx", 0.5), ("CO", 0.3), ("NMVOC", 0.2)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            extra_proxy_q: [("NH3".to_string(), -0.05)].into_iter().collect(),
            proxy_reference_pre,
            proxy_reference_modern,
            gas_physics: default_gas_physics(),
        }
    }
}

impl EngineParams {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let params: EngineParams = toml::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn from_toml_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("engine params serialize")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rlamdo", self.rlamdo),
            ("akapa", self.akapa),
            ("cpi", self.cpi),
            ("W", self.upwelling),
            ("beto", self.beto),
            ("lambda", self.lambda),
            ("mixed", self.mixed),
            ("deep_layer_thickness", self.deep_layer_thickness),
            ("ch4_lifetime_factor", self.ch4_lifetime_factor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let signed = [
            ("qbmb", self.qbmb),
            ("qo3", self.qo3),
            ("qdirso2", self.qdirso2),
            ("qindso2", self.qindso2),
            ("qbc", self.qbc),
            ("qoc", self.qoc),
        ];
        for (name, v) in signed {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if self.n_ocean_layers < 2 {
            return Err(Error::Config(
                "n_ocean_layers must be at least 2 (mixed layer plus one deep layer)".into(),
            ));
        }
        if self.substeps_per_year == 0 {
            return Err(Error::Config("substeps_per_year must be positive".into()));
        }
        if self.carbon_cycle.is_empty() {
            return Err(Error::Config("carbon_cycle needs at least one pool".into()));
        }
        let total: f64 = self.carbon_cycle.iter().map(|p| p.fraction).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "carbon-cycle fractions sum to {total}, expected 1"
            )));
        }
        for pool in &self.carbon_cycle {
            if pool.fraction < 0.0 {
                return Err(Error::Config("negative carbon-pool fraction".into()));
            }
            if let Some(tau) = pool.timescale_years {
                if !(tau.is_finite() && tau > 0.0) {
                    return Err(Error::Config("carbon-pool timescale must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Explicit-scheme stability: the largest per-substep relaxation rate must
    /// stay below one so the update matrix keeps non-negative coefficients.
    pub fn max_relaxation_per_substep(&self) -> f64 {
        let dt = 1.0 / self.substeps_per_year as f64;
        let c = SEAWATER_HEAT_CAPACITY;
        let kappa = self.akapa_m2_per_year();
        let inv_lambda = 1.0 / self.lambda;
        let air = self.rlamdo * inv_lambda / (inv_lambda + self.rlamdo);
        let mixed_rate = (air + self.beto + c * self.upwelling) / (c * self.mixed);
        let dz = self.deep_layer_thickness;
        let diffusive = c * kappa / dz;
        let deep_rate =
            (diffusive + self.beto.max(diffusive) + c * self.upwelling) / (c * dz);
        dt * mixed_rate.max(deep_rate)
    }

    pub fn akapa_m2_per_year(&self) -> f64 {
        self.akapa * 1e-4 * SECONDS_PER_YEAR
    }

    /// Forcing coefficient (W m^-2 at the modern reference level) for each
    /// linear-proxy species in the registry.
    pub fn proxy_coefficient(&self, name: &str) -> Result<f64> {
        let q = match name {
            "SO2" => self.qdirso2 + self.qindso2,
            "BC" => self.qbc,
            "OC" => self.qoc,
            "BMB_AEROS_BC" | "BMB_AEROS_OC" => self.qbmb,
            _ => {
                if let Some(w) = self.ozone_precursor_weights.get(name) {
                    self.qo3 * w
                } else if let Some(q) = self.extra_proxy_q.get(name) {
                    *q
                } else {
                    return Err(Error::Config(format!(
                        "no forcing coefficient configured for proxy species {name}"
                    )));
                }
            }
        };
        Ok(q)
    }

    pub fn physics_for(&self, name: &str) -> Option<&GasPhysics> {
        self.gas_physics.iter().find(|g| g.name == name)
    }

    /// Checks that every registry species has what its treatment needs.
    pub fn check_against(&self, registry: &SpeciesRegistry) -> Result<()> {
        for s in registry.species() {
            match s.treatment {
                Treatment::CarbonCycle => {}
                Treatment::FixedLifetimeDecay | Treatment::MultiTauDecay => {
                    let phys = self.physics_for(&s.name).ok_or_else(|| {
                        Error::Config(format!("no gas physics row for {}", s.name))
                    })?;
                    phys.ppb_per_emission_unit()?;
                    let etminan = matches!(s.name.as_str(), "CH4" | "N2O");
                    if !etminan && phys.radiative_efficiency.is_none() {
                        return Err(Error::Config(format!(
                            "{} needs a radiative efficiency",
                            s.name
                        )));
                    }
                }
                Treatment::LinearForcingProxy => {
                    self.proxy_coefficient(&s.name)?;
                    let pre = self.proxy_reference_pre.get(&s.name).copied().unwrap_or(0.0);
                    let modern = self.proxy_reference_modern.get(&s.name).ok_or_else(|| {
                        Error::Config(format!("no modern reference emission for {}", s.name))
                    })?;
                    if modern == &pre {
                        return Err(Error::Config(format!(
                            "{}: proxy reference emissions are equal, normalization undefined",
                            s.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::species::default_registry;

    #[test]
    fn defaults_carry_response_table_values() {
        let p = EngineParams::default();
        assert_eq!(p.lambda, 0.6063);
        assert_eq!(p.rlamdo, 15.0836);
        assert_eq!(p.akapa, 0.6568);
        assert_eq!(p.cpi, 0.2077);
        assert_eq!(p.upwelling, 2.2059);
        assert_eq!(p.beto, 6.8982);
        assert_eq!(p.mixed, 107.2422);
        assert_eq!(p.qdirso2, -0.3562);
        assert_eq!(p.qindso2, -0.9661);
        p.validate().unwrap();
        p.check_against(&default_registry()).unwrap();
    }

    #[test]
    fn toml_round_trip_uses_table_names() {
        let p = EngineParams::default();
        let text = p.to_toml_string();
        for key in ["rlamdo", "akapa", "cpi", "W ", "beto", "lambda", "mixed", "qbmb", "qo3"] {
            assert!(text.contains(key), "missing {key}");
        }
        let back = EngineParams::from_toml_str(&text).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn partial_toml_falls_back_to_defaults() {
        let p = EngineParams::from_toml_str("lambda = 0.8\nn_ocean_layers = 4\n").unwrap();
        assert_eq!(p.lambda, 0.8);
        assert_eq!(p.n_ocean_layers, 4);
        assert_eq!(p.rlamdo, 15.0836);
    }

    #[test]
    fn rejects_bad_fractions_and_layers() {
        let mut p = EngineParams::default();
        p.carbon_cycle[0].fraction += 0.01;
        assert!(p.validate().is_err());
        let mut p = EngineParams::default();
        p.n_ocean_layers = 1;
        assert!(p.validate().is_err());
        let mut p = EngineParams::default();
        p.lambda = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn equal_proxy_references_are_a_config_error() {
        let mut p = EngineParams::default();
        p.proxy_reference_modern.insert("SO2".into(), 0.0);
        assert!(p.check_against(&default_registry()).is_err());
    }

    #[test]
    fn explicit_scheme_is_stable_at_defaults() {
        assert!(EngineParams::default().max_relaxation_per_substep() < 1.0);
    }

    #[test]
    fn ppb_conversion_matches_hand_value() {
        let ch4 = EngineParams::default().physics_for("CH4").unwrap().clone();
        // 1 ppb CH4 ~ 2.84 Tg
        let per_tg = ch4.ppb_per_emission_unit().unwrap();
        assert!((1.0 / per_tg - 2.844).abs() < 0.01);
    }
}
