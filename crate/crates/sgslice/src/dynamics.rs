//! Time integration of the particle system. Each step solves the transport
//! problem at the current seeds and masses, reads the velocities off the
//! solved tessellation (horizontal drift from the cell's internal energy,
//! vertical motion from the centroid offset), and advances the seeds with a
//! two-step Adams–Bashforth rule bootstrapped by one explicit Euler step.
//! Particle masses are never integrated: the transport structure ties mᵢ to
//! the seed height algebraically, and every step resets them through that law.

use rayon::prelude::*;

use crate::chart::{CostParams, Seed, SliceDomain, Vec2};
use crate::density::ConjugateDensity;
use crate::error::SgError;
use crate::integrals::{
    all_cell_integrals, cell_exner_integral, cell_internal_energy, total_energy,
};
use crate::metrics::relative_error_series;
use crate::newton::{init_weights, solve_with_retry, DualState, MassTargets, NewtonSettings};
use crate::tess::{build_tessellation, Tessellation};
use crate::Result;

/// Particle system at one time level. Seeds keep their cumulative horizontal
/// drift (z₁ is never wrapped here; the tessellation wraps internally), and
/// the frozen t = 0 columns anchor the exact mass–height law.
#[derive(Debug, Clone)]
pub struct ParticleState {
    pub t: f64,
    pub step: usize,
    pub seeds: Vec<Seed>,
    pub masses: Vec<f64>,
    /// Dual weights of the last solve; empty until something solves the state.
    pub weights: Vec<f64>,
    pub z2_initial: Vec<f64>,
    pub m_initial: Vec<f64>,
}

impl ParticleState {
    pub fn new(seeds: Vec<Seed>, masses: Vec<f64>) -> Result<Self> {
        if seeds.is_empty() || seeds.len() != masses.len() {
            return Err(SgError::Config(format!(
                "{} seeds but {} masses",
                seeds.len(),
                masses.len()
            )));
        }
        for (i, m) in masses.iter().enumerate() {
            if !m.is_finite() || *m <= 0.0 {
                return Err(SgError::Config(format!("mass {i} must be positive, got {m}")));
            }
        }
        let z2_initial: Vec<f64> = seeds.iter().map(|z| z.z2).collect();
        let m_initial = masses.clone();
        Ok(ParticleState {
            t: 0.0,
            step: 0,
            seeds,
            masses,
            weights: Vec::new(),
            z2_initial,
            m_initial,
        })
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    /// mᵢ(t) = mᵢ(0) · z₂ⁱ(t)/z₂ⁱ(0) — algebraic, never integrated.
    fn law_mass(&self, i: usize, z2: f64) -> f64 {
        self.m_initial[i] * (z2 / self.z2_initial[i])
    }
}

/// Velocity sample at one time level, with the per-cell statistics that
/// produced it (snapshots report them alongside the positions).
#[derive(Debug, Clone)]
pub struct RhsSample {
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub e_i: Vec<f64>,
    /// Cell centroids in the unwrapped frame of each seed.
    pub centroids: Vec<Vec2>,
}

/// Per-step conservation record; `energy_rel_err` is filled after the run,
/// when the series mean is known.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub total_mass: f64,
    pub energy: f64,
    pub energy_rel_err: f64,
    pub min_mass: f64,
    pub newton_iters: usize,
}

/// Everything a step needs besides the state itself. `cp.c0` must already
/// carry the reference-pressure gauge matching `pi0`.
#[derive(Debug, Clone)]
pub struct DynamicsContext<'a> {
    pub domain: &'a SliceDomain,
    pub cp: CostParams,
    pub cd: &'a ConjugateDensity,
    /// Horizontal coupling multiplying the internal-energy term.
    pub alpha: f64,
    /// Vertical coupling multiplying the centroid offset.
    pub beta: f64,
    pub pi0: f64,
    pub settings: NewtonSettings,
}

/// One solved time level: the velocity sample plus the solver by-products the
/// driver records (warm-start weights, iteration count, conservation data).
#[derive(Debug, Clone)]
pub struct SolvedStep {
    pub rhs: RhsSample,
    pub weights: Vec<f64>,
    pub newton_iters: usize,
    pub min_mass: f64,
    pub energy: f64,
}

/// Solves the transport problem at the current state (warm-started from the
/// carried weights, or initialized when none exist) and evaluates the ODE
/// right-hand side: v₁ⁱ = α·E_Iⁱ, v₂ⁱ = β·(C₁ⁱ − z₁ⁱ).
pub fn compute_rhs(state: &ParticleState, ctx: &DynamicsContext) -> Result<SolvedStep> {
    let targets = MassTargets::new(state.masses.clone())?;
    let warm = if state.weights.is_empty() {
        init_weights(&state.seeds, &targets, ctx.domain, &ctx.cp, ctx.cd, &ctx.settings)?
    } else {
        state.weights.clone()
    };
    let solved = solve_with_retry(
        &state.seeds,
        &targets,
        &warm,
        ctx.domain,
        &ctx.cp,
        ctx.cd,
        &ctx.settings,
    )?;
    let tess = build_tessellation(&state.seeds, &solved.weights, ctx.domain, &ctx.cp)?;
    let ints = all_cell_integrals(&tess, ctx.cd, ctx.settings.quad_order)?;

    let n = state.len();
    let mut v1 = Vec::with_capacity(n);
    let mut v2 = Vec::with_capacity(n);
    let mut e_i = Vec::with_capacity(n);
    let mut centroids = Vec::with_capacity(n);
    let mut min_mass = f64::INFINITY;
    for i in 0..n {
        let e = cell_internal_energy(i, &ints[i], ctx.cd, ctx.pi0)?;
        let delta1 = ints[i].m1_offset / ints[i].mass;
        v1.push(ctx.alpha * e);
        v2.push(ctx.beta * delta1);
        e_i.push(e);
        centroids.push(Vec2::new(
            state.seeds[i].z1 + delta1,
            ints[i].x2_moment / ints[i].mass,
        ));
        min_mass = min_mass.min(ints[i].mass);
    }
    let energy = total_energy(&tess, ctx.cd, &ints, ctx.settings.quad_order);
    Ok(SolvedStep {
        rhs: RhsSample { v1, v2, e_i, centroids },
        weights: solved.weights,
        newton_iters: solved.iterations,
        min_mass,
        energy,
    })
}

fn check_sample(state: &ParticleState, rhs: &RhsSample, which: &str) -> Result<()> {
    if rhs.v1.len() != state.len() || rhs.v2.len() != state.len() {
        return Err(SgError::StaleState(format!(
            "{which} velocity sample has {} entries for {} particles",
            rhs.v1.len().min(rhs.v2.len()),
            state.len()
        )));
    }
    Ok(())
}

/// Advances every seed by dt·(velocity from `dz`), then resets the masses
/// through the height law and carries the weights as the next warm start.
fn advanced(
    state: &ParticleState,
    dt: f64,
    dz: impl Fn(usize) -> (f64, f64),
) -> Result<ParticleState> {
    let n = state.len();
    let mut seeds = Vec::with_capacity(n);
    let mut masses = Vec::with_capacity(n);
    for i in 0..n {
        let (d1, d2) = dz(i);
        let z1 = state.seeds[i].z1 + dt * d1;
        let z2 = state.seeds[i].z2 + dt * d2;
        if !(z2 > 0.0) {
            return Err(SgError::BlowUp { index: i, step: state.step + 1, z2 });
        }
        seeds.push(Seed { z1, z2 });
        masses.push(state.law_mass(i, z2));
    }
    Ok(ParticleState {
        t: state.t + dt,
        step: state.step + 1,
        seeds,
        masses,
        weights: state.weights.clone(),
        z2_initial: state.z2_initial.clone(),
        m_initial: state.m_initial.clone(),
    })
}

/// Single explicit-Euler step seeding the two-step recurrence. Convergence
/// studies account for its first-order error by fitting from the second step.
pub fn bootstrap_first_step(
    state: &ParticleState,
    rhs0: &RhsSample,
    dt: f64,
) -> Result<ParticleState> {
    if !(dt > 0.0) {
        return Err(SgError::Config(format!("dt must be positive, got {dt}")));
    }
    check_sample(state, rhs0, "bootstrap")?;
    advanced(state, dt, |i| (rhs0.v1[i], rhs0.v2[i]))
}

/// Two-step Adams–Bashforth update: z ← z + dt·(3·curr − prev)/2.
pub fn step_ab2(
    state: &ParticleState,
    prev: &RhsSample,
    curr: &RhsSample,
    dt: f64,
) -> Result<ParticleState> {
    if !(dt > 0.0) {
        return Err(SgError::Config(format!("dt must be positive, got {dt}")));
    }
    check_sample(state, prev, "previous")?;
    check_sample(state, curr, "current")?;
    advanced(state, dt, |i| {
        (
            0.5 * (3.0 * curr.v1[i] - prev.v1[i]),
            0.5 * (3.0 * curr.v2[i] - prev.v2[i]),
        )
    })
}

/// Spatial mean of the Exner pressure over the whole slice; evaluated on the
/// t = 0 tessellation (solved with a provisional zero cost constant) to fix
/// the reference pressure for the rest of the run.
pub fn compute_pi0(tess: &Tessellation, cd: &ConjugateDensity, order: usize) -> f64 {
    let contributions: Vec<f64> = (0..tess.len())
        .into_par_iter()
        .map(|i| cell_exner_integral(tess, i, cd, order))
        .collect();
    contributions.iter().sum::<f64>() / tess.domain.area()
}

/// A fresh state with its gauge fixed: the transport problem is solved, the
/// mean dual level is folded into the cost offset, and the reference Exner
/// mean is recorded for the energy diagnostics.
#[derive(Debug, Clone)]
pub struct GaugedInitial {
    pub state: ParticleState,
    pub cp: CostParams,
    pub pi0: f64,
    /// Dual state of the initial solve (for traces and conditioning checks).
    pub solve: DualState,
}

/// Solves the transport problem of an initial state and absorbs the mean
/// dual level into the cost offset.
///
/// At physical scales the slack sits at t = c_p·Π ~ 5e2 while the Newton
/// increments near the tolerance are ~1e−16 (the Hessian is ~1e5 there, so
/// tiny weight moves carry whole cells). Weights holding the level would
/// quantise those increments away at ulp(level) ~ 6e−14 and stall the solver
/// around residual 1e−8. The slack only ever sees w + c₀, so moving the
/// level into c₀ is exact, and the weights stay at the size of the pressure
/// perturbation where f64 resolves every increment.
pub fn gauge_initial(
    state: &ParticleState,
    domain: &SliceDomain,
    cp: &CostParams,
    cd: &ConjugateDensity,
    settings: &NewtonSettings,
) -> Result<GaugedInitial> {
    let targets = MassTargets::new(state.masses.clone())?;
    let raw = if state.weights.is_empty() {
        init_weights(&state.seeds, &targets, domain, cp, cd, settings)?
    } else {
        state.weights.clone()
    };
    let level = raw.iter().sum::<f64>() / raw.len() as f64;
    let gauged = CostParams { c0: cp.c0 + level, ..*cp };
    let small: Vec<f64> = raw.iter().map(|w| w - level).collect();
    let solve =
        solve_with_retry(&state.seeds, &targets, &small, domain, &gauged, cd, settings)?;
    let tess = build_tessellation(&state.seeds, &solve.weights, domain, &gauged)?;
    let pi0 = compute_pi0(&tess, cd, settings.quad_order);
    let mut out = state.clone();
    out.weights = solve.weights.clone();
    Ok(GaugedInitial { state: out, cp: gauged, pi0, solve })
}

pub type SnapshotSink<'a> = Box<dyn FnMut(&ParticleState, &RhsSample) -> Result<()> + 'a>;
pub type DiagnosticsSink<'a> = Box<dyn FnMut(&[DiagnosticsRow]) -> Result<()> + 'a>;

/// Output hooks for a run. The snapshot hook fires at step 0, every
/// `snapshot_every`-th step, and the final step; the diagnostics hook fires
/// once after the run with the completed per-step table (the relative energy
/// error needs the whole series for its mean).
#[derive(Default)]
pub struct SimulationSinks<'a> {
    pub snapshot: Option<SnapshotSink<'a>>,
    pub diagnostics: Option<DiagnosticsSink<'a>>,
}

fn with_step(err: SgError, step: usize) -> SgError {
    match err {
        SgError::Numerics(m) => SgError::Numerics(format!("step {step}: {m}")),
        SgError::DegeneratePair(m) => SgError::DegeneratePair(format!("step {step}: {m}")),
        SgError::Initialization(m) => SgError::Initialization(format!("step {step}: {m}")),
        other => other,
    }
}

struct PendingRow {
    t: f64,
    total_mass: f64,
    energy: f64,
    min_mass: f64,
    newton_iters: usize,
}

/// Advances `initial` by `n_steps` uniform steps of `dt`, emitting snapshots
/// and a diagnostics table through `sinks`. Returns the final state with its
/// transport problem solved (weights warm for any follow-on run).
pub fn run_simulation(
    initial: &ParticleState,
    ctx: &DynamicsContext,
    dt: f64,
    n_steps: usize,
    snapshot_every: usize,
    sinks: &mut SimulationSinks,
) -> Result<ParticleState> {
    if !(dt > 0.0) {
        return Err(SgError::Config(format!("dt must be positive, got {dt}")));
    }
    let mut state = initial.clone();
    let mut rows: Vec<PendingRow> = Vec::with_capacity(n_steps + 1);
    let mut prev_rhs: Option<RhsSample> = None;

    for k in 0..=n_steps {
        let solved = compute_rhs(&state, ctx).map_err(|e| with_step(e, state.step))?;
        state.weights = solved.weights;
        rows.push(PendingRow {
            t: state.t,
            total_mass: state.masses.iter().sum(),
            energy: solved.energy,
            min_mass: solved.min_mass,
            newton_iters: solved.newton_iters,
        });
        let due = k == 0 || k == n_steps || (snapshot_every > 0 && k % snapshot_every == 0);
        if due {
            if let Some(hook) = sinks.snapshot.as_mut() {
                hook(&state, &solved.rhs)?;
            }
        }
        if k == n_steps {
            break;
        }
        state = match prev_rhs.take() {
            None => bootstrap_first_step(&state, &solved.rhs, dt)?,
            Some(prev) => step_ab2(&state, &prev, &solved.rhs, dt)?,
        };
        prev_rhs = Some(solved.rhs);
    }

    let energies: Vec<f64> = rows.iter().map(|r| r.energy).collect();
    let rel_err = relative_error_series(&energies)?;
    let table: Vec<DiagnosticsRow> = rows
        .iter()
        .zip(rel_err)
        .map(|(r, e)| DiagnosticsRow {
            t: r.t,
            total_mass: r.total_mass,
            energy: r.energy,
            energy_rel_err: e,
            min_mass: r.min_mass,
            newton_iters: r.newton_iters,
        })
        .collect();
    if let Some(hook) = sinks.diagnostics.as_mut() {
        hook(&table)?;
    }
    Ok(state)
}
