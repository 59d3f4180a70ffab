//! Radiative forcing from concentrations (Etminan et al. 2016 expressions for
//! CO2, CH4 and N2O; linear radiative efficiencies for halocarbons) and from
//! emission-driven linear proxies.

use super::params::{CH4_PREINDUSTRIAL_PPB, CO2_PREINDUSTRIAL_PPM, N2O_PREINDUSTRIAL_PPB};

/// CO2 forcing, `c` in ppm, `n` is N2O in ppb.
pub fn co2_forcing(c: f64, n: f64) -> f64 {
    let c0 = CO2_PREINDUSTRIAL_PPM;
    let n_bar = 0.5 * (n + N2O_PREINDUSTRIAL_PPB);
    let dc = c - c0;
    let scale = -2.4e-7 * dc * dc + 7.2e-4 * dc.abs() - 2.1e-4 * n_bar + 5.36;
    scale * (c / c0).ln()
}

/// CH4 forcing, `m` and `n` in ppb.
pub fn ch4_forcing(m: f64, n: f64) -> f64 {
    let m0 = CH4_PREINDUSTRIAL_PPB;
    let m_bar = 0.5 * (m + m0);
    let n_bar = 0.5 * (n + N2O_PREINDUSTRIAL_PPB);
    (-1.3e-6 * m_bar - 8.2e-6 * n_bar + 0.043) * (m.sqrt() - m0.sqrt())
}

/// N2O forcing, `c` in ppm, `n` and `m` in ppb.
pub fn n2o_forcing(c: f64, n: f64, m: f64) -> f64 {
    let n0 = N2O_PREINDUSTRIAL_PPB;
    let c_bar = 0.5 * (c + CO2_PREINDUSTRIAL_PPM);
    let n_bar = 0.5 * (n + n0);
    let m_bar = 0.5 * (m + CH4_PREINDUSTRIAL_PPB);
    (-8.0e-6 * c_bar + 4.2e-6 * n_bar - 4.9e-6 * m_bar + 0.117) * (n.sqrt() - n0.sqrt())
}

/// A linear proxy contributes `q` at the modern reference emission and zero at
/// the pre-industrial reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyTerm {
    pub gas: usize,
    pub q: f64,
    pub reference_pre: f64,
    pub inv_span: f64,
}

impl ProxyTerm {
    pub fn forcing(&self, emission: f64) -> f64 {
        self.q * (emission - self.reference_pre) * self.inv_span
    }
}
