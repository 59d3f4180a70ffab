//! Vertically discretized upwelling-diffusion ocean under a single-box
//! atmosphere.
//!
//! Layer 0 is the mixed layer, layers `1..n` are deep layers of equal
//! thickness. Water sinks in polar regions carrying `cpi` times the mixed
//! layer anomaly to the bottom, upwells through the column at speed `W` and
//! re-enters the mixed layer. The heat the polar branch carries out of the
//! column is handed back to the atmosphere, so the column plus atmosphere
//! budget is closed: per substep the column gains exactly
//! `dt * (F - T_air / lambda)`.

use serde::{Deserialize, Serialize};

use super::params::{EngineParams, SEAWATER_HEAT_CAPACITY};

/// Coefficients derived once from [`EngineParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct OceanCoefficients {
    dt: f64,
    substeps: usize,
    inv_lambda: f64,
    rlamdo: f64,
    /// c * W, W m^-2 K^-1.
    advective: f64,
    cpi: f64,
    beto: f64,
    /// c * kappa / dz between deep layers.
    diffusive: f64,
    inv_cap_mixed: f64,
    inv_cap_deep: f64,
    n_layers: usize,
}

impl OceanCoefficients {
    pub fn new(params: &EngineParams) -> Self {
        let c = SEAWATER_HEAT_CAPACITY;
        let dz = params.deep_layer_thickness;
        OceanCoefficients {
            dt: 1.0 / params.substeps_per_year as f64,
            substeps: params.substeps_per_year,
            inv_lambda: 1.0 / params.lambda,
            rlamdo: params.rlamdo,
            advective: c * params.upwelling,
            cpi: params.cpi,
            beto: params.beto,
            diffusive: c * params.akapa_m2_per_year() / dz,
            inv_cap_mixed: 1.0 / (c * params.mixed),
            inv_cap_deep: 1.0 / (c * dz),
            n_layers: params.n_ocean_layers,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn heat_capacity(&self, layer: usize) -> f64 {
        if layer == 0 {
            1.0 / self.inv_cap_mixed
        } else {
            1.0 / self.inv_cap_deep
        }
    }

    /// Near-surface air temperature anomaly balancing forcing, the polar
    /// return flux, outgoing radiation and air-sea exchange.
    #[inline]
    pub fn air_temperature(&self, forcing: f64, mixed: f64) -> f64 {
        let polar_return = self.advective * (1.0 - self.cpi) * mixed;
        (forcing + polar_return + self.rlamdo * mixed) / (self.inv_lambda + self.rlamdo)
    }

    /// Advances the column by one year at constant forcing. `scratch` must be
    /// as long as `temps`. Returns the air temperature at the end of the year.
    pub fn advance_year(&self, temps: &mut [f64], scratch: &mut [f64], forcing: f64) -> f64 {
        for _ in 0..self.substeps {
            self.substep(temps, scratch, forcing);
        }
        self.air_temperature(forcing, temps[0])
    }

    /// One forward-Euler substep; `scratch` receives the tendencies.
    pub fn substep(&self, temps: &mut [f64], scratch: &mut [f64], forcing: f64) {
        let n = temps.len();
        debug_assert_eq!(n, self.n_layers);
        let t0 = temps[0];
        let air = self.air_temperature(forcing, t0);
        let w = self.advective;

        // downward heat flux across the interface below layer i
        let flux = |i: usize, upper: f64, lower: f64| {
            let k = if i == 0 { self.beto } else { self.diffusive };
            k * (upper - lower)
        };

        let f0 = flux(0, t0, temps[1]);
        scratch[0] = self.rlamdo * (air - t0) - f0 + w * (temps[1] - t0);
        let mut from_above = f0;
        for i in 1..n - 1 {
            let down = flux(i, temps[i], temps[i + 1]);
            scratch[i] = from_above - down + w * (temps[i + 1] - temps[i]);
            from_above = down;
        }
        scratch[n - 1] = from_above + w * (self.cpi * t0 - temps[n - 1]);

        temps[0] += self.dt * self.inv_cap_mixed * scratch[0];
        for i in 1..n {
            temps[i] += self.dt * self.inv_cap_deep * scratch[i];
        }
    }

    pub fn substep_length(&self) -> f64 {
        self.dt
    }
}

/// Layer temperature anomalies plus the last reported air temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OceanState {
    pub temps: Vec<f64>,
    pub air: f64,
}

impl OceanState {
    pub fn zero(n_layers: usize) -> Self {
        OceanState {
            temps: vec![0.0; n_layers],
            air: 0.0,
        }
    }
}
