//! Run configuration: one structured text file with physical, scale, init,
//! and numerics sections. Unknown keys are rejected, every violation is
//! reported in a single pass, and the fully-resolved configuration can be
//! echoed back to disk for provenance.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chart::{CostParams, SliceDomain};
use crate::density::ConjugateDensity;
use crate::error::SgError;
use crate::init::InitConfig;
use crate::integrals::DEFAULT_QUAD_ORDER;
use crate::newton::NewtonSettings;
use crate::params::{
    derive_scales, derive_thermo, validate_config, PhysicalParams, Scales, ThermoConstants,
    ThermoMode,
};
use crate::Result;

const DAY_SECONDS: f64 = 86_400.0;

/// Number of AB2 steps in the default single-seed benchmark run.
pub const BENCHMARK_STEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Full frontogenesis simulation at physical scales.
    Simulate,
    /// Single-seed unit-parameter run against the analytic trajectory.
    Benchmark,
    /// Timestep-refinement study at fixed particle count.
    ConvergenceDt,
    /// Particle-refinement study at fixed timestep.
    ConvergenceN,
    /// One transport solve of the initial ensemble, no time stepping.
    SolveOt,
}

impl RunMode {
    pub fn label(self) -> &'static str {
        match self {
            RunMode::Simulate => "simulate",
            RunMode::Benchmark => "benchmark",
            RunMode::ConvergenceDt => "convergence-dt",
            RunMode::ConvergenceN => "convergence-n",
            RunMode::SolveOt => "solve-ot",
        }
    }

    fn thermo_mode(self) -> ThermoMode {
        match self {
            RunMode::Benchmark => ThermoMode::Benchmark,
            _ => ThermoMode::Physical,
        }
    }
}

/// Reference lengths the non-dimensional scales derive from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalesSection {
    pub l0: f64,
    pub h1: f64,
    pub h2: f64,
}

impl Default for ScalesSection {
    fn default() -> Self {
        ScalesSection { l0: 1e7, h1: 1e5, h2: 1e6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsSection {
    /// Time step in non-dimensional units (0.9 ≙ 15 minutes at desk scale).
    pub dt: f64,
    /// Simulated length in days of 86 400 s; superseded by `n_steps`.
    pub days: f64,
    /// Explicit step count; benchmark runs default to 100 when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    pub newton_tol: f64,
    pub quad_order: usize,
    /// Secants per curved chart-boundary arc in the diagnostic boundary
    /// chart; the tessellation itself treats the parabolic band exactly.
    pub n_segments: usize,
    /// Periodic replication depth; one copy suffices while every cell stays
    /// narrower than half the period.
    pub copies: i32,
    /// Snapshot cadence in steps; absent → four snapshots per simulated day.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
}

impl Default for NumericsSection {
    fn default() -> Self {
        NumericsSection {
            dt: 0.9,
            days: 1.0,
            n_steps: None,
            newton_tol: NewtonSettings::default().tolerance,
            quad_order: DEFAULT_QUAD_ORDER,
            n_segments: 8,
            copies: 1,
            snapshot_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    /// Output directory; a command-line override takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub physical: PhysicalParams,
    #[serde(default)]
    pub scales: ScalesSection,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub numerics: NumericsSection,
}

impl RunConfig {
    pub fn minimal(mode: RunMode) -> Self {
        RunConfig {
            mode,
            output_dir: None,
            physical: PhysicalParams::standard(),
            scales: ScalesSection::default(),
            init: InitConfig::default(),
            numerics: NumericsSection::default(),
        }
    }
}

/// Everything a run needs, derived once from a validated configuration.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub params: PhysicalParams,
    pub scales: Scales,
    pub thermo: ThermoConstants,
    pub density: ConjugateDensity,
    pub domain: SliceDomain,
    /// Gauge constant still at its pre-solve value: 1 in benchmark mode,
    /// 0 before the Π₀ shift in the physical regime.
    pub cost: CostParams,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub snapshot_every: usize,
    pub settings: NewtonSettings,
}

impl ResolvedRun {
    /// One simulated day in non-dimensional time units.
    pub fn day_length(&self) -> f64 {
        DAY_SECONDS / self.tau.abs()
    }
}

fn section_violations(config: &RunConfig) -> Vec<String> {
    let mut report = Vec::new();
    let n = &config.numerics;
    if !(n.dt > 0.0) || !n.dt.is_finite() {
        report.push(format!("dt must be positive and finite (got {})", n.dt));
    }
    if !(n.days > 0.0) || !n.days.is_finite() {
        report.push(format!("days must be positive and finite (got {})", n.days));
    }
    if n.n_steps == Some(0) {
        report.push("n_steps must be at least 1 when given".into());
    }
    if !(n.newton_tol > 0.0) || !n.newton_tol.is_finite() {
        report.push(format!("newton_tol must be positive and finite (got {})", n.newton_tol));
    }
    if n.quad_order == 0 {
        report.push("quad_order must be at least 1".into());
    }
    if n.n_segments == 0 {
        report.push("n_segments must be at least 1".into());
    }
    if n.copies < 1 {
        report.push(format!("copies must be at least 1 (got {})", n.copies));
    }
    if n.snapshot_every == Some(0) {
        report.push("snapshot_every must be at least 1 when given".into());
    }
    let i = &config.init;
    if !(i.bu > 0.0) || !i.bu.is_finite() {
        report.push(format!("Bu must be positive and finite (got {})", i.bu));
    }
    if i.m1 < 2 || i.m2 < 2 {
        report.push(format!("init grid must be at least 2×2 (got {}×{})", i.m1, i.m2));
    }
    if !i.a.is_finite() || !i.surface_exner.is_finite() {
        report.push("init perturbation parameters must be finite".into());
    }
    let s = &config.scales;
    for (name, v) in [("l0", s.l0), ("h1", s.h1), ("h2", s.h2)] {
        if !(v > 0.0) || !v.is_finite() {
            report.push(format!("{name} must be positive and finite (got {v})"));
        }
    }
    report
}

impl RunConfig {
    /// Derives scales, thermodynamics, domain, and step counts, reporting
    /// every violation found rather than the first.
    pub fn resolve(&self) -> Result<ResolvedRun> {
        let mut report = section_violations(self);
        let params = self.physical;
        let thermo_mode = self.mode.thermo_mode();
        let scales = match thermo_mode {
            ThermoMode::Benchmark => Ok(Scales::benchmark()),
            ThermoMode::Physical => {
                derive_scales(&params, self.scales.l0, self.scales.h1, self.scales.h2)
            }
        };
        let thermo = derive_thermo(&params, thermo_mode);
        let (scales, thermo) = match (scales, thermo) {
            (Ok(s), Ok(t)) => {
                // unit benchmark scales are fixed by definition, not derived
                // from the physical section, so only the physical regime gets
                // the params/scales consistency sweep
                if thermo_mode == ThermoMode::Physical {
                    report.extend(validate_config(&params, &s, &t));
                }
                (Some(s), Some(t))
            }
            (s, t) => {
                if let Err(e) = s {
                    report.push(e.to_string());
                }
                if let Err(e) = t {
                    report.push(e.to_string());
                }
                (None, None)
            }
        };
        if !report.is_empty() {
            return Err(SgError::Config(format!(
                "invalid configuration: {}",
                report.join("; ")
            )));
        }
        let (scales, thermo) = (scales.unwrap(), thermo.unwrap());
        let density = ConjugateDensity::new(thermo.gamma, thermo.kappa, thermo.exner_coeff)?;
        let (domain, cost, alpha, beta) = match thermo_mode {
            ThermoMode::Benchmark => {
                (SliceDomain::new(1.0, 1.0)?, CostParams::unit(1.0), 1.0, 1.0)
            }
            ThermoMode::Physical => (
                SliceDomain::new(params.l / scales.l0, params.h / scales.h1)?,
                CostParams { f: scales.f, g: scales.g, c0: 0.0 },
                scales.alpha,
                scales.beta,
            ),
        };
        let dt = self.numerics.dt;
        let day = DAY_SECONDS / scales.tau.abs();
        let n_steps = match (self.numerics.n_steps, self.mode) {
            (Some(n), _) => n,
            (None, RunMode::Benchmark) => BENCHMARK_STEPS,
            (None, RunMode::SolveOt) => 0,
            (None, _) => (self.numerics.days * day / dt).round() as usize,
        };
        let snapshot_every = self.numerics.snapshot_every.unwrap_or_else(|| match self.mode {
            RunMode::Benchmark | RunMode::SolveOt => (n_steps / 4).max(1),
            _ => ((day / dt / 4.0).round() as usize).max(1),
        });
        let settings = NewtonSettings {
            tolerance: self.numerics.newton_tol,
            quad_order: self.numerics.quad_order,
            ..NewtonSettings::default()
        };
        Ok(ResolvedRun {
            config: self.clone(),
            params,
            scales,
            thermo,
            density,
            domain,
            cost,
            alpha,
            beta,
            tau: scales.tau,
            dt,
            n_steps,
            snapshot_every,
            settings,
        })
    }
}

/// Parses and validates a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| SgError::io(path.display().to_string(), e))?;
    let config: RunConfig = toml::from_str(&text)
        .map_err(|e| SgError::Config(format!("{}: {e}", path.display())))?;
    config.resolve()?;
    Ok(config)
}

/// Writes the configuration back out; run directories carry the resolved
/// copy actually used.
pub fn save_config(config: &RunConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = toml::to_string_pretty(config)
        .map_err(|e| SgError::Config(format!("serializing configuration: {e}")))?;
    fs::write(path, text).map_err(|e| SgError::io(path.display().to_string(), e))
}
