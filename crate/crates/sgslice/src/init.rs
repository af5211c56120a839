//! Frontogenesis initial state: a stratified base temperature with a
//! wave-one perturbation, the hydrostatic Exner pressure integrated down
//! each column, the geostrophically balanced meridional wind, and the map
//! taking physical samples to non-dimensional seeds with uniform masses.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::chart::Seed;
use crate::error::SgError;
use crate::params::{PhysicalParams, Scales};
use crate::quad::composite_simpson;
use crate::Result;

/// Subintervals per hydrostatic column integral (65-point composite Simpson).
pub const EXNER_SIMPSON_SUBDIVISIONS: usize = 64;

/// Perturbation shape and sampling resolution of the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Burger number of the perturbation.
    pub bu: f64,
    /// Perturbation amplitude (enters through θ₀·a·N/g).
    pub a: f64,
    /// Horizontal sample count.
    pub m1: usize,
    /// Vertical sample count.
    pub m2: usize,
    /// Exner pressure at the ground.
    pub surface_exner: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { bu: 0.5, a: -7.5, m1: 72, m2: 36, surface_exner: 1.0 }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bu > 0.0) {
            return Err(SgError::Config(format!("Bu must be positive, got {}", self.bu)));
        }
        if self.m1 < 2 || self.m2 < 2 {
            return Err(SgError::Config(format!(
                "sampling grid must be at least 2×2, got {}×{}",
                self.m1, self.m2
            )));
        }
        if !self.a.is_finite() || !self.surface_exner.is_finite() {
            return Err(SgError::Config("perturbation parameters must be finite".into()));
        }
        Ok(())
    }
}

/// Cell-centred uniform sampling grid over the physical slice
/// (−L, L] × [0, H], row-major by height level.
#[derive(Debug, Clone, Copy)]
pub struct InitGrid {
    pub m1: usize,
    pub m2: usize,
    pub l: f64,
    pub h: f64,
}

impl InitGrid {
    pub fn new(cfg: &InitConfig, p: &PhysicalParams) -> Self {
        InitGrid { m1: cfg.m1, m2: cfg.m2, l: p.l, h: p.h }
    }

    pub fn x1(&self, i: usize) -> f64 {
        -self.l + (i as f64 + 0.5) * (2.0 * self.l / self.m1 as f64)
    }

    pub fn x3(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * (self.h / self.m2 as f64)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.m1 + i
    }

    pub fn len(&self) -> usize {
        self.m1 * self.m2
    }

    pub fn is_empty(&self) -> bool {
        self.m1 == 0 || self.m2 == 0
    }
}

/// Initial fields at one sample point.
#[derive(Debug, Clone, Copy)]
pub struct FieldSample {
    pub x1: f64,
    pub x3: f64,
    /// In-slice potential temperature θ̄ + θ̃ (K).
    pub theta_total: f64,
    /// Hydrostatic Exner pressure.
    pub pi: f64,
    /// Meridional velocity (m/s).
    pub v: f64,
}

/// All initial fields sampled on the grid.
#[derive(Debug, Clone)]
pub struct InitFields {
    pub grid: InitGrid,
    pub samples: Vec<FieldSample>,
}

/// Normalisation constant of the wave-one perturbation,
/// n = (1/Bu)·√((Bu/2 − tanh(Bu/2))·(coth(Bu/2) − Bu/2)).
pub fn normalisation_constant(bu: f64) -> f64 {
    let half = 0.5 * bu;
    ((half - half.tanh()) * (1.0 / half.tanh() - half)).sqrt() / bu
}

/// Base-state potential temperature θ₀·exp((N²/g)(x₃ − H/2)), stratified by
/// the Brunt–Väisälä frequency.
pub fn theta_base(x3: f64, p: &PhysicalParams) -> f64 {
    p.theta0 * ((p.n_bv * p.n_bv / p.g) * (x3 - 0.5 * p.h)).exp()
}

/// Wave-one temperature perturbation triggering frontogenesis.
pub fn theta_perturbation(x1: f64, x3: f64, cfg: &InitConfig, p: &PhysicalParams) -> f64 {
    let amp = p.theta0 * cfg.a * p.n_bv / p.g;
    let z = cfg.bu * (x3 / p.h - 0.5);
    let n = normalisation_constant(cfg.bu);
    let half = 0.5 * cfg.bu;
    let sinh_coeff = 1.0 - half / half.tanh();
    let phase = std::f64::consts::PI * x1 / p.l;
    amp * (-sinh_coeff * z.sinh() * phase.cos() - n * cfg.bu * z.cosh() * phase.sin())
}

/// In-slice potential temperature θ̄(x₃) + θ̃(x₁, x₃).
pub fn theta_in_slice(x1: f64, x3: f64, cfg: &InitConfig, p: &PhysicalParams) -> f64 {
    theta_base(x3, p) + theta_perturbation(x1, x3, cfg, p)
}

/// Hydrostatic Exner pressure Π(x₁,x₃) = Π_surface − ∫₀^{x₃} g/(c_p·θ) dξ,
/// integrated down the column with composite Simpson quadrature.
pub fn hydrostatic_exner(
    x1: f64,
    x3: f64,
    cfg: &InitConfig,
    p: &PhysicalParams,
) -> Result<f64> {
    let mut bad: Option<(f64, f64)> = None;
    let integral = composite_simpson(0.0, x3, EXNER_SIMPSON_SUBDIVISIONS, |xi| {
        let th = theta_in_slice(x1, xi, cfg, p);
        if th <= 0.0 {
            bad = Some((xi, th));
            return 0.0;
        }
        p.g / (p.c_p * th)
    });
    if let Some((xi, th)) = bad {
        return Err(SgError::Numerics(format!(
            "potential temperature {th} K at (x1, x3) = ({x1}, {xi}) is not positive"
        )));
    }
    Ok(cfg.surface_exner - integral)
}

/// Meridional velocity v = (c_p·θ/f)·∂ₓ₁Π on the grid, with periodic central
/// differences in x₁.
pub fn meridional_velocity(
    grid: &InitGrid,
    pi: &[f64],
    theta: &[f64],
    p: &PhysicalParams,
) -> Vec<f64> {
    let dx1 = 2.0 * grid.l / grid.m1 as f64;
    let mut v = vec![0.0; grid.len()];
    for j in 0..grid.m2 {
        for i in 0..grid.m1 {
            let left = grid.index((i + grid.m1 - 1) % grid.m1, j);
            let right = grid.index((i + 1) % grid.m1, j);
            let dpi = (pi[right] - pi[left]) / (2.0 * dx1);
            let here = grid.index(i, j);
            v[here] = p.c_p * theta[here] / p.f_cor * dpi;
        }
    }
    v
}

/// Evaluates θ, Π, and v on the sampling grid.
pub fn sample_fields(cfg: &InitConfig, p: &PhysicalParams) -> Result<InitFields> {
    cfg.validate()?;
    let grid = InitGrid::new(cfg, p);
    let mut theta = vec![0.0; grid.len()];
    let mut pi = vec![0.0; grid.len()];
    for j in 0..grid.m2 {
        for i in 0..grid.m1 {
            let (x1, x3) = (grid.x1(i), grid.x3(j));
            let idx = grid.index(i, j);
            let th = theta_in_slice(x1, x3, cfg, p);
            if th <= 0.0 {
                return Err(SgError::Numerics(format!(
                    "potential temperature {th} K at sample ({i}, {j}) is not positive"
                )));
            }
            theta[idx] = th;
            pi[idx] = hydrostatic_exner(x1, x3, cfg, p)?;
        }
    }
    let v = meridional_velocity(&grid, &pi, &theta, p);
    let samples = (0..grid.m2)
        .flat_map(|j| (0..grid.m1).map(move |i| (i, j)))
        .map(|(i, j)| {
            let idx = grid.index(i, j);
            FieldSample {
                x1: grid.x1(i),
                x3: grid.x3(j),
                theta_total: theta[idx],
                pi: pi[idx],
                v: v[idx],
            }
        })
        .collect();
    Ok(InitFields { grid, samples })
}

/// Geostrophic coordinates of the fluid particle at x₁: the dimensional map
/// T(x) = (x₁ + v/f, g·θ/(f²·θ₀)) scaled into non-dimensional seed
/// coordinates by (L0, H2).
pub fn geostrophic_map(
    x1: f64,
    v: f64,
    theta: f64,
    p: &PhysicalParams,
    scales: &Scales,
) -> Result<Seed> {
    let t1 = x1 + v / p.f_cor;
    let t2 = p.g * theta / (p.f_cor * p.f_cor * p.theta0);
    Seed::new(t1 / scales.l0, t2 / scales.h2)
}

/// Initial ensemble: seeds from the geostrophic map on the sampling grid and
/// uniform masses 1/N.
#[derive(Debug, Clone)]
pub struct SampledParticles {
    pub seeds: Vec<Seed>,
    pub masses: Vec<f64>,
    pub warnings: Vec<String>,
}

pub fn sample_particles(
    cfg: &InitConfig,
    p: &PhysicalParams,
    scales: &Scales,
) -> Result<SampledParticles> {
    let fields = sample_fields(cfg, p)?;
    let n = fields.samples.len();
    let mut seeds = Vec::with_capacity(n);
    let mut warnings = Vec::new();
    let mut seen: HashMap<(u64, u64), usize> = HashMap::with_capacity(n);
    for (k, s) in fields.samples.iter().enumerate() {
        let mut seed = geostrophic_map(s.x1, s.v, s.theta_total, p, scales)?;
        let first_owner = seen.get(&(seed.z1.to_bits(), seed.z2.to_bits())).copied();
        let mut key = (seed.z1.to_bits(), seed.z2.to_bits());
        let mut bumps = 0usize;
        while seen.contains_key(&key) {
            bumps += 1;
            seed = Seed { z1: seed.z1 + 1e-12, z2: seed.z2 };
            key = (seed.z1.to_bits(), seed.z2.to_bits());
        }
        if let (Some(owner), true) = (first_owner, bumps > 0) {
            warnings.push(format!(
                "sample {k} duplicates seed of sample {owner}; jittered z1 by {bumps}×1e−12"
            ));
        }
        seen.insert(key, k);
        seeds.push(seed);
    }
    let masses = vec![1.0 / n as f64; n];
    Ok(SampledParticles { seeds, masses, warnings })
}
