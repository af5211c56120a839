//! Physical constants, derived thermodynamic constants, and scale derivation.

use crate::error::SgError;
use crate::Result;
use serde::{Deserialize, Serialize};

/// Dimensional constants of the slice configuration (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalParams {
    /// Half-width of the periodic channel (m).
    pub l: f64,
    /// Channel height (m).
    pub h: f64,
    /// Coriolis frequency (1/s).
    pub f_cor: f64,
    /// Brunt–Väisälä frequency (1/s).
    pub n_bv: f64,
    /// Gravity (m/s²).
    pub g: f64,
    /// Reference pressure (kg·m⁻¹·s⁻²).
    pub p0: f64,
    /// Reference potential temperature (K).
    pub theta0: f64,
    /// Background meridional temperature gradient (K/m).
    pub s_shear: f64,
    /// Specific heat at constant pressure (m²·K⁻¹·s⁻²).
    pub c_p: f64,
    /// Gas constant of dry air (m²·K⁻¹·s⁻²).
    pub r_d: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams::standard()
    }
}

impl PhysicalParams {
    /// Standard slice configuration used throughout the experiments.
    pub fn standard() -> Self {
        PhysicalParams {
            l: 1e6,
            h: 1e4,
            f_cor: 1e-4,
            n_bv: 5e-3,
            g: 10.0,
            p0: 1e5,
            theta0: 300.0,
            s_shear: -3e-6,
            c_p: 1003.5,
            r_d: 287.052874,
        }
    }

    pub fn c_v(&self) -> f64 {
        self.c_p - self.r_d
    }
}

/// Adiabatic index and internal-energy coefficients; `f(s) = kappa·s^gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermoConstants {
    pub gamma: f64,
    pub kappa: f64,
    /// (R_d/p0)^(gamma−1); multiplies σ^(γ−1) in the equation of state.
    pub exner_coeff: f64,
}

/// Thermodynamic regime selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThermoMode {
    Physical,
    Benchmark,
}

/// Reference lengths and the derived non-dimensional constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub l0: f64,
    pub h1: f64,
    pub h2: f64,
    /// Horizontal cost coefficient, F = sqrt(f²L0²/H2).
    pub f: f64,
    /// Vertical cost coefficient, G = g·H1/H2.
    pub g: f64,
    /// Horizontal coupling, α = c_p·θ₀/(L0·g).
    pub alpha: f64,
    /// Vertical coupling, β = L0/H2.
    pub beta: f64,
    /// Time scale f·θ₀/(s·g), seconds, signed (negative for s < 0).
    pub tau: f64,
}

impl Scales {
    /// Unity scales for the analytic benchmark: all coefficients 1 and a
    /// unit time map (benchmark time is already non-dimensional).
    pub fn benchmark() -> Self {
        Scales { l0: 1.0, h1: 1.0, h2: 1.0, f: 1.0, g: 1.0, alpha: 1.0, beta: 1.0, tau: 1.0 }
    }
}

/// Derives the non-dimensional constants from dimensional parameters and
/// reference lengths.
pub fn derive_scales(params: &PhysicalParams, l0: f64, h1: f64, h2: f64) -> Result<Scales> {
    if l0 <= 0.0 || h1 <= 0.0 || h2 <= 0.0 {
        return Err(SgError::Config(format!(
            "reference lengths must be positive, got L0={l0}, H1={h1}, H2={h2}"
        )));
    }
    if params.s_shear == 0.0 {
        return Err(SgError::Config("s_shear must be non-zero to define the time scale".into()));
    }
    Ok(Scales {
        l0,
        h1,
        h2,
        f: (params.f_cor * params.f_cor * l0 * l0 / h2).sqrt(),
        g: params.g * h1 / h2,
        alpha: params.c_p * params.theta0 / (l0 * params.g),
        beta: l0 / h2,
        tau: params.f_cor * params.theta0 / (params.s_shear * params.g),
    })
}

/// Derives the thermodynamic constants for the selected regime.
pub fn derive_thermo(params: &PhysicalParams, mode: ThermoMode) -> Result<ThermoConstants> {
    match mode {
        ThermoMode::Benchmark => Ok(ThermoConstants { gamma: 2.0, kappa: 0.5, exner_coeff: 1.0 }),
        ThermoMode::Physical => {
            let c_v = params.c_v();
            if c_v <= 0.0 {
                return Err(SgError::Config(format!(
                    "c_v = c_p - R_d must be positive, got {c_v}"
                )));
            }
            let gamma = params.c_p / c_v;
            let exner_coeff = (params.r_d / params.p0).powf(gamma - 1.0);
            Ok(ThermoConstants { gamma, kappa: c_v * exner_coeff, exner_coeff })
        }
    }
}

/// Checks every stated invariant and returns the list of violations
/// (empty when the configuration is valid). Reports; never fails.
pub fn validate_config(
    params: &PhysicalParams,
    scales: &Scales,
    thermo: &ThermoConstants,
) -> Vec<String> {
    let mut report = Vec::new();
    let mut positive = |name: &str, v: f64| {
        if !(v > 0.0) {
            report.push(format!("{name} must be positive (got {v})"));
        }
    };
    positive("L", params.l);
    positive("H", params.h);
    positive("f_cor", params.f_cor);
    positive("g", params.g);
    positive("p0", params.p0);
    positive("theta0", params.theta0);
    positive("c_p", params.c_p);
    positive("R_d", params.r_d);
    positive("L0", scales.l0);
    positive("H1", scales.h1);
    positive("H2", scales.h2);
    positive("F", scales.f);
    positive("G", scales.g);
    positive("alpha", scales.alpha);
    positive("beta", scales.beta);
    positive("kappa", thermo.kappa);
    positive("exner_coeff", thermo.exner_coeff);
    if !(params.n_bv >= 0.0) {
        report.push(format!("N_bv must be non-negative (got {})", params.n_bv));
    }
    if !(params.r_d < params.c_p) || !(params.c_v() > 0.0) {
        report.push(format!("c_v must be positive (got c_p - R_d = {})", params.c_v()));
    }
    if !(thermo.gamma > 1.0 && thermo.gamma <= 2.0) {
        report.push(format!("gamma must lie in (1, 2] (got {})", thermo.gamma));
    }
    let f2h2 = scales.f * scales.f * scales.h2;
    let fl2 = params.f_cor * params.f_cor * scales.l0 * scales.l0;
    if fl2 > 0.0 && ((f2h2 - fl2) / fl2).abs() > 1e-12 {
        report.push(format!("F inconsistent with f, L0, H2: F²·H2 = {f2h2}, f²·L0² = {fl2}"));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn standard_scales_are_unity() {
        let p = PhysicalParams::standard();
        let s = derive_scales(&p, 1e7, 1e5, 1e6).unwrap();
        assert_relative_eq!(s.f, 1.0, max_relative = 1e-14);
        assert_relative_eq!(s.g, 1.0, max_relative = 1e-14);
        assert_relative_eq!(s.beta, 10.0, max_relative = 1e-14);
        assert_relative_eq!(s.alpha, 3.0105e-3, max_relative = 1e-12);
        assert_relative_eq!(s.tau, -1000.0, max_relative = 1e-14);
    }

    #[test]
    fn scale_identity_holds() {
        let p = PhysicalParams::standard();
        let s = derive_scales(&p, 3.3e6, 2e5, 5e5).unwrap();
        let lhs = s.f * s.f * s.h2;
        let rhs = p.f_cor * p.f_cor * s.l0 * s.l0;
        assert_relative_eq!(lhs, rhs, max_relative = 1e-14);
    }

    #[test]
    fn benchmark_thermo_is_exact() {
        let t = derive_thermo(&PhysicalParams::standard(), ThermoMode::Benchmark).unwrap();
        assert_eq!(t.gamma, 2.0);
        assert_eq!(t.kappa, 0.5);
        assert_eq!(t.exner_coeff, 1.0);
    }

    #[test]
    fn physical_thermo_values() {
        let p = PhysicalParams::standard();
        let t = derive_thermo(&p, ThermoMode::Physical).unwrap();
        assert_relative_eq!(t.gamma, 1003.5 / (1003.5 - 287.052874), max_relative = 1e-14);
        assert_relative_eq!(
            t.exner_coeff,
            (287.052874f64 / 1e5).powf(t.gamma - 1.0),
            max_relative = 1e-14
        );
        // kappa = c_v · exner_coeff
        assert_relative_eq!(t.kappa, p.c_v() * t.exner_coeff, max_relative = 1e-14);
        assert!(t.gamma > 1.4 && t.gamma < 1.41);
    }

    #[test]
    fn validate_accepts_standard_config() {
        let p = PhysicalParams::standard();
        let s = derive_scales(&p, 1e7, 1e5, 1e6).unwrap();
        let t = derive_thermo(&p, ThermoMode::Physical).unwrap();
        assert!(validate_config(&p, &s, &t).is_empty());
    }

    #[test]
    fn validate_flags_forced_violations() {
        let mut p = PhysicalParams::standard();
        p.c_p = p.r_d; // forces c_v = 0
        p.l = 0.0;
        let s = Scales::benchmark();
        let t = ThermoConstants { gamma: 2.0, kappa: 0.5, exner_coeff: 1.0 };
        let report = validate_config(&p, &s, &t);
        assert!(report.iter().any(|m| m.contains("c_v must be positive")));
        assert!(report.iter().any(|m| m.contains("L must be positive")));
    }

    #[test]
    fn derive_thermo_rejects_negative_cv() {
        let mut p = PhysicalParams::standard();
        p.r_d = p.c_p + 1.0;
        assert!(derive_thermo(&p, ThermoMode::Physical).is_err());
    }
}
