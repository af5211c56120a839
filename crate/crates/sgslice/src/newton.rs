//! Damped Newton solver for the semi-discrete Kantorovich dual: find weights
//! w maximizing 𝒢(w) = Σᵢ wᵢmᵢ − Σᵢ ∫_{Lᵢ(w)} f*(wᵢ − c) dx, so that every
//! cell's σ-mass matches its target mᵢ.
//!
//! The safeguard is the standard one for semi-discrete transport: a full
//! Newton step is halved until the smallest cell mass stays above half the
//! smallest mass seen at the starting point (or the smallest target, if
//! lower) and the residual strictly decreases. 𝒢 is strictly concave here —
//! the conjugate density responds to the weight through ∫(f*)″ on the cell
//! diagonal — so there is no additive gauge freedom and the maximizer is
//! unique.

use crate::chart::{cost, cost_periodic, CostParams, Seed, SliceDomain, Vec2};
use crate::density::ConjugateDensity;
use crate::error::SgError;
use crate::integrals::{all_cell_integrals, dual_hessian, CellIntegrals, DEFAULT_QUAD_ORDER};
use crate::tess::{build_tessellation, Tessellation};
use crate::Result;
use nalgebra::{Cholesky, DMatrix, DVector};

/// Target cell masses. The total is whatever the initial condition produced;
/// it is recorded, not normalized.
#[derive(Debug, Clone)]
pub struct MassTargets {
    pub m: Vec<f64>,
}

impl MassTargets {
    pub fn new(m: Vec<f64>) -> Result<Self> {
        if m.is_empty() {
            return Err(SgError::Config("mass targets are empty".into()));
        }
        if let Some(bad) = m.iter().find(|v| !(**v > 0.0)) {
            return Err(SgError::Config(format!(
                "mass targets must be positive and finite, got {bad}"
            )));
        }
        Ok(MassTargets { m })
    }

    pub fn total(&self) -> f64 {
        self.m.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One accepted (or rejected-to-acceptance) Newton iteration, for the
/// verbose solver trace.
#[derive(Debug, Clone, Copy)]
pub struct TraceRecord {
    pub iteration: usize,
    pub residual: f64,
    pub step: f64,
    pub min_mass: f64,
}

/// Converged dual state.
#[derive(Debug, Clone)]
pub struct DualState {
    pub weights: Vec<f64>,
    /// gradient[i] = target mᵢ − current cell mass Mᵢ(w)
    pub gradient: Vec<f64>,
    /// ∂²𝒢/∂w², symmetric negative definite, at the returned weights
    pub hessian: DMatrix<f64>,
    /// max-norm of the gradient
    pub residual_norm: f64,
    pub iterations: usize,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonSettings {
    /// absolute tolerance on the max mass mismatch (masses are O(1/N))
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    pub quad_order: usize,
    /// λ stages traced by the initialization continuation
    pub continuation_steps: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            tolerance: 1e-10,
            max_iterations: 100,
            max_halvings: 30,
            quad_order: DEFAULT_QUAD_ORDER,
            continuation_steps: 4,
        }
    }
}

struct Evaluated {
    tess: Tessellation,
    ints: Vec<CellIntegrals>,
    gradient: Vec<f64>,
    residual: f64,
    min_mass: f64,
}

fn evaluate(
    seeds: &[Seed],
    weights: &[f64],
    targets: &MassTargets,
    domain: &SliceDomain,
    cp: &CostParams,
    cd: &ConjugateDensity,
    order: usize,
) -> Result<Evaluated> {
    let tess = build_tessellation(seeds, weights, domain, cp)?;
    let ints = all_cell_integrals(&tess, cd, order)?;
    let mut gradient = Vec::with_capacity(ints.len());
    let mut residual = 0.0f64;
    let mut min_mass = f64::INFINITY;
    for (i, ci) in ints.iter().enumerate() {
        let g = targets.m[i] - ci.mass;
        residual = residual.max(g.abs());
        min_mass = min_mass.min(ci.mass);
        gradient.push(g);
    }
    Ok(Evaluated { tess, ints, gradient, residual, min_mass })
}

/// Kantorovich dual 𝒢(w) = Σ wᵢmᵢ − Σ ∫ f*.
pub fn dual_functional(
    seeds: &[Seed],
    weights: &[f64],
    targets: &MassTargets,
    domain: &SliceDomain,
    cp: &CostParams,
    cd: &ConjugateDensity,
    order: usize,
) -> Result<f64> {
    let tess = build_tessellation(seeds, weights, domain, cp)?;
    let ints = all_cell_integrals(&tess, cd, order)?;
    let paid: f64 = weights.iter().zip(&targets.m).map(|(w, m)| w * m).sum();
    let conj: f64 = ints.iter().map(|ci| ci.dual_value).sum();
    Ok(paid - conj)
}

/// Maximize 𝒢 from `w0`. Returns the converged state or a non-convergence
/// error carrying the last iterate; a Hessian that fails to factorize
/// (possible when a cell has emptied) reports a degenerate configuration.
pub fn newton_solve(
    seeds: &[Seed],
    targets: &MassTargets,
    w0: &[f64],
    domain: &SliceDomain,
    cp: &CostParams,
    cd: &ConjugateDensity,
    settings: &NewtonSettings,
) -> Result<DualState> {
    if seeds.len() != targets.len() || seeds.len() != w0.len() {
        return Err(SgError::Config(format!(
            "solver inputs disagree: {} seeds, {} targets, {} weights",
            seeds.len(),
            targets.len(),
            w0.len()
        )));
    }
    let order = settings.quad_order;
    let mut weights = w0.to_vec();
    let mut state = evaluate(seeds, &weights, targets, domain, cp, cd, order)?;
    // mass floor for the damping criterion, fixed at the starting point
    let floor = 0.5
        * state
            .min_mass
            .min(targets.m.iter().cloned().fold(f64::INFINITY, f64::min));
    let mut trace = Vec::new();

    let mut iterations = 0;
    while state.residual > settings.tolerance {
        if iterations >= settings.max_iterations {
            return Err(SgError::NonConvergence {
                residual: state.residual,
                iterations,
                weights,
            });
        }
        let h = dual_hessian(&state.tess, cd, &state.ints, order)?;
        let chol = Cholesky::new(-h).ok_or_else(|| {
            SgError::DegeneratePair(
                "dual Hessian is not negative definite (empty or duplicated cell)".into(),
            )
        })?;
        // Newton direction: H δ = −∇𝒢, i.e. (−H) δ = ∇𝒢
        let delta = chol.solve(&DVector::from_column_slice(&state.gradient));

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let trial: Vec<f64> = weights
                .iter()
                .zip(delta.iter())
                .map(|(w, d)| w + step * d)
                .collect();
            match evaluate(seeds, &trial, targets, domain, cp, cd, order) {
                Ok(next) if next.min_mass >= floor && next.residual < state.residual => {
                    accepted = Some((trial, next));
                    break;
                }
                // singular trial geometry is treated like a rejected step
                Ok(_) | Err(SgError::SingularSeed { .. }) | Err(SgError::Numerics(_)) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        let Some((trial, next)) = accepted else {
            return Err(SgError::NonConvergence {
                residual: state.residual,
                iterations,
                weights,
            });
        };
        weights = trial;
        state = next;
        iterations += 1;
        trace.push(TraceRecord {
            iteration: iterations,
            residual: state.residual,
            step,
            min_mass: state.min_mass,
        });
    }

    let hessian = dual_hessian(&state.tess, cd, &state.ints, order)?;
    Ok(DualState {
        weights,
        gradient: state.gradient,
        hessian,
        residual_norm: state.residual,
        iterations,
        trace,
    })
}

/// Nominal physical anchor for seed i: the wrapped horizontal site paired
/// with the domain height scaled affinely across the seed z₂-range (domain
/// mid-height when the range collapses).
fn anchors(seeds: &[Seed], domain: &SliceDomain) -> Vec<Vec2> {
    let (zmin, zmax) = seeds.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s.z2), hi.max(s.z2))
    });
    let range = zmax - zmin;
    seeds
        .iter()
        .map(|s| {
            let x2 = if range > 0.0 {
                (domain.height * (s.z2 - zmin) / range).clamp(0.0, domain.height)
            } else {
                0.5 * domain.height
            };
            Vec2::new(domain.wrap(s.z1), x2)
        })
        .collect()
}

/// Slack scale that would produce the mean target density if spread
/// uniformly: δ₀ = κγ·(Σm/|X|)^(γ−1). Lands at the physical slack
/// magnitude in dimensional regimes and at O(1) in the benchmark.
fn slack_scale(targets: &MassTargets, domain: &SliceDomain, cd: &ConjugateDensity) -> f64 {
    let mean_sigma = targets.total() / domain.area();
    cd.kappa * cd.gamma * mean_sigma.powf(cd.gamma - 1.0)
}

/// One-shot rescaling start: wᵢ = c(x̂ᵢ, zᵢ) + δ₀.
fn heuristic_weights(
    seeds: &[Seed],
    targets: &MassTargets,
    domain: &SliceDomain,
    cp: &CostParams,
    cd: &ConjugateDensity,
) -> Result<Vec<f64>> {
    let anchors = anchors(seeds, domain);
    let delta0 = slack_scale(targets, domain, cd);
    seeds
        .iter()
        .zip(&anchors)
        .map(|(s, x)| Ok(cost(*x, *s, cp)? + delta0))
        .collect()
}

fn affine_onto(lo: f64, hi: f64, target_lo: f64, target_hi: f64) -> (f64, f64) {
    if hi - lo > 0.0 {
        let a = (target_hi - target_lo) / (hi - lo);
        (a, target_lo - a * lo)
    } else {
        (1.0, 0.5 * (target_lo + target_hi) - lo)
    }
}

/// Cyclically monotone start. The slack of seed i is the affine chart field
/// tᵢ(p) = Tᵢ·p + βᵢ with Tᵢ = (z₁ᵢ/z₂ᵢ, −1/z₂ᵢ), so assigning each seed
/// the chart target p̂ᵢ = A·Tᵢ + b (A diagonal positive) and choosing βᵢ =
/// δ₀ − ½Tᵢ·A·Tᵢ − b·Tᵢ gives, at p̂ᵢ,
///     tᵢ − tⱼ = ½(Tᵢ−Tⱼ)·A·(Tᵢ−Tⱼ) > 0,
/// i.e. every cell wins a strictly interior point with slack ≥ δ₀ against
/// all principal copies — regardless of the configuration. Periodic images
/// are outside the guarantee, so callers still verify masses.
fn monotone_weights(
    seeds: &[Seed],
    targets: &MassTargets,
    domain: &SliceDomain,
    cp: &CostParams,
    cd: &ConjugateDensity,
) -> Vec<f64> {
    let f2 = cp.f2();
    let delta0 = slack_scale(targets, domain, cd);
    let t: Vec<Vec2> = seeds
        .iter()
        .map(|s| Vec2::new(domain.wrap(s.z1) / s.z2, -1.0 / s.z2))
        .collect();
    let (mut lo, mut hi) = (Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY));
    for v in &t {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    // conservative target box strictly inside the chart band: |p₁| ≤ p1max
    // keeps the bottom parabola below every admissible p₂
    let p1max =
        (0.9 * f2 * domain.half_width).min(0.9 * (2.0 * f2 * cp.g * domain.height).sqrt());
    let p2_floor = p1max * p1max / (2.0 * f2);
    let gap = cp.g * domain.height - p2_floor;
    let (a1, b1) = affine_onto(lo.x, hi.x, -p1max, p1max);
    let (a2, b2) = affine_onto(lo.y, hi.y, p2_floor + 0.1 * gap, p2_floor + 0.9 * gap);
    seeds
        .iter()
        .zip(&t)
        .map(|(s, ti)| {
            let z1 = domain.wrap(s.z1);
            let beta = delta0
                - 0.5 * (a1 * ti.x * ti.x + a2 * ti.y * ti.y)
                - (b1 * ti.x + b2 * ti.y);
            beta - cp.c0 + f2 * z1 * z1 / (2.0 * s.z2)
        })
        .collect()
}

/// Rescaling cascade: the anchor heuristic, then the monotone construction,
/// then iterated bumps that raise each starved cell until it claims a
/// positive-slack neighborhood of its own anchor. Returns None if feeding
/// every cell keeps failing — the cue for the continuation path.
fn rescale_until_fed(
    seeds: &[Seed],
    targets: &MassTargets,
    domain: &SliceDomain,
    cp: &CostParams,
    cd: &ConjugateDensity,
    order: usize,
) -> Result<Option<Vec<f64>>> {
    let w = heuristic_weights(seeds, targets, domain, cp, cd)?;
    if evaluate(seeds, &w, targets, domain, cp, cd, order)?.min_mass > 0.0 {
        return Ok(Some(w));
    }
    let mut w = monotone_weights(seeds, targets, domain, cp, cd);
    let anchors = anchors(seeds, domain);
    let margin = 0.05 * slack_scale(targets, domain, cd);
    let period = domain.period();
    for _ in 0..16 {
        let state = evaluate(seeds, &w, targets, domain, cp, cd, order)?;
        if state.min_mass > 0.0 {
            return Ok(Some(w));
        }
        for i in 0..seeds.len() {
            if state.ints[i].mass > 0.0 {
                continue;
            }
            let mut t_win = f64::NEG_INFINITY;
            for (j, z) in seeds.iter().enumerate() {
                t_win = t_win.max(w[j] - cost_periodic(anchors[i], *z, cp, period)?);
            }
            let t_mine = w[i] - cost_periodic(anchors[i], seeds[i], cp, period)?;
            w[i] += t_win.max(0.0) + margin - t_mine;
        }
    }
    Ok(None)
}

fn shrink_toward_centroid(seeds: &[Seed], domain: &SliceDomain, lambda: f64) -> Vec<Seed> {
    let n = seeds.len() as f64;
    let c1 = seeds.iter().map(|s| domain.wrap(s.z1)).sum::<f64>() / n;
    let c2 = seeds.iter().map(|s| s.z2).sum::<f64>() / n;
    seeds
        .iter()
        .map(|s| Seed {
            z1: c1 + lambda * (domain.wrap(s.z1) - c1),
            z2: c2 + lambda * (s.z2 - c2),
        })
        .collect()
}

/// Rescaling initialization: wᵢ = c(x̂ᵢ, zᵢ) + δ₀ at a per-seed physical
/// anchor. If some cell still comes up empty, a continuation path shrinks
/// the seeds toward their common centroid, solves, and traces λ → 1; its
/// failure is an initialization error (never a silently-starved start).
pub fn init_weights(
    seeds: &[Seed],
    targets: &MassTargets,
    domain: &SliceDomain,
    cp: &CostParams,
    cd: &ConjugateDensity,
    settings: &NewtonSettings,
) -> Result<Vec<f64>> {
    if seeds.len() != targets.len() {
        return Err(SgError::Config(format!(
            "initialization inputs disagree: {} seeds, {} targets",
            seeds.len(),
            targets.len()
        )));
    }
    if let Some(w) = rescale_until_fed(seeds, targets, domain, cp, cd, settings.quad_order)? {
        return Ok(w);
    }

    let steps = settings.continuation_steps.max(1);
    let mut w: Option<Vec<f64>> = None;
    for k in 1..=steps {
        let lambda = k as f64 / steps as f64;
        let shrunk = shrink_toward_centroid(seeds, domain, lambda);
        let w0 = match &w {
            Some(prev) => prev.clone(),
            None => rescale_until_fed(&shrunk, targets, domain, cp, cd, settings.quad_order)?
                .ok_or_else(|| {
                    SgError::Initialization(format!(
                        "rescaling failed even on seeds shrunk by λ = {lambda}"
                    ))
                })?,
        };
        match newton_solve(&shrunk, targets, &w0, domain, cp, cd, settings) {
            Ok(state) => w = Some(state.weights),
            Err(e) => {
                return Err(SgError::Initialization(format!(
                    "continuation stalled at λ = {lambda}: {e}"
                )))
            }
        }
    }
    let w = w.expect("continuation ran at least one stage");
    let state = evaluate(seeds, &w, targets, domain, cp, cd, settings.quad_order)?;
    if state.min_mass > 0.0 {
        Ok(w)
    } else {
        Err(SgError::Initialization(
            "continuation finished but a cell is still empty".into(),
        ))
    }
}

/// Solve from a warm start, falling back to a cold rescaling start once if
/// the warm solve fails to converge. The dynamics loop's standard entry.
pub fn solve_with_retry(
    seeds: &[Seed],
    targets: &MassTargets,
    warm: &[f64],
    domain: &SliceDomain,
    cp: &CostParams,
    cd: &ConjugateDensity,
    settings: &NewtonSettings,
) -> Result<DualState> {
    match newton_solve(seeds, targets, warm, domain, cp, cd, settings) {
        Err(SgError::NonConvergence { .. }) | Err(SgError::DegeneratePair(_)) => {
            let cold = init_weights(seeds, targets, domain, cp, cd, settings)?;
            newton_solve(seeds, targets, &cold, domain, cp, cd, settings)
        }
        other => other,
    }
}
