//! Error measures and convergence machinery: relative drift of conserved
//! series, mass-weighted trajectory norms, a balanced entropic
//! Wasserstein-2 distance between weighted point clouds, and log-log slope
//! fits over families of simulation runs.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::chart::{SliceDomain, Vec2};
use crate::dynamics::{run_simulation, DynamicsContext, ParticleState, SimulationSinks};
use crate::error::SgError;
use crate::Result;

/// Relative deviation (mean − Qₖ)/mean of each sample from the series mean;
/// samples above the mean come out negative.
pub fn relative_error_series(q: &[f64]) -> Result<Vec<f64>> {
    if q.is_empty() {
        return Err(SgError::Metric("relative error of an empty series".into()));
    }
    let mean = q.iter().sum::<f64>() / q.len() as f64;
    if mean == 0.0 || !mean.is_finite() {
        return Err(SgError::Metric(format!(
            "series mean {mean} cannot normalize a relative error"
        )));
    }
    Ok(q.iter().map(|v| (mean - v) / mean).collect())
}

/// Diameter of the periodic slice, the default trajectory-error normalizer.
pub fn domain_diameter(domain: &SliceDomain) -> f64 {
    let p = domain.period();
    let h = domain.height;
    (p * p + h * h).sqrt()
}

/// Normalized mass-weighted distance between matched-index ensembles,
/// (1/C)·√(Σᵢ mᵢ‖zᵢ − zᵢ_ref‖²), with masses taken from `state_a`.
pub fn trajectory_error(
    state_a: &ParticleState,
    state_b: &ParticleState,
    normalizer: f64,
) -> Result<f64> {
    if state_a.len() != state_b.len() {
        return Err(SgError::Metric(format!(
            "trajectory error needs matched ensembles, got {} vs {} particles",
            state_a.len(),
            state_b.len()
        )));
    }
    if !normalizer.is_finite() || normalizer <= 0.0 {
        return Err(SgError::Metric(format!(
            "trajectory-error normalizer must be positive, got {normalizer}"
        )));
    }
    let sum: f64 = state_a
        .seeds
        .iter()
        .zip(&state_b.seeds)
        .zip(&state_a.masses)
        .map(|((za, zb), m)| {
            let d1 = za.z1 - zb.z1;
            let d2 = za.z2 - zb.z2;
            m * (d1 * d1 + d2 * d2)
        })
        .sum();
    Ok(sum.sqrt() / normalizer)
}

/// A weighted point cloud in geostrophic coordinates.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    pub points: Vec<Vec2>,
    pub masses: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Vec2>, masses: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != masses.len() {
            return Err(SgError::Metric(format!(
                "a discrete measure needs matching nonempty points and masses, got {} and {}",
                points.len(),
                masses.len()
            )));
        }
        for p in &points {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(SgError::Metric(format!("non-finite support point {p:?}")));
            }
        }
        if let Some(m) = masses.iter().find(|m| !m.is_finite() || **m <= 0.0) {
            return Err(SgError::Metric(format!(
                "masses must be positive and finite, got {m}"
            )));
        }
        Ok(DiscreteMeasure { points, masses })
    }

    /// The ensemble's seeds and masses as a measure on geostrophic coordinates.
    pub fn from_state(state: &ParticleState) -> Result<Self> {
        let points = state.seeds.iter().map(|z| Vec2::new(z.z1, z.z2)).collect();
        DiscreteMeasure::new(points, state.masses.clone())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// Largest pairwise distance over both supports; sets the ε scale.
fn union_diameter(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let pts: Vec<&Vec2> = mu.points.iter().chain(nu.points.iter()).collect();
    let mut best: f64 = 0.0;
    for (k, a) in pts.iter().enumerate() {
        for b in &pts[k + 1..] {
            best = best.max((*a - *b).norm_squared());
        }
    }
    best.sqrt()
}

/// Deterministic ordering of measures so the transport solve sees the pair
/// in the same order either way round — swapping the arguments returns the
/// bit-identical distance.
fn canonical_cmp(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        for ((pa, ma), (pb, mb)) in
            a.points.iter().zip(&a.masses).zip(b.points.iter().zip(&b.masses))
        {
            let ka = (pa.x.to_bits(), pa.y.to_bits(), ma.to_bits());
            let kb = (pb.x.to_bits(), pb.y.to_bits(), mb.to_bits());
            match ka.cmp(&kb) {
                Ordering::Equal => continue,
                other => return other,
            }
        }
        Ordering::Equal
    })
}

/// Solve artifacts of one entropic transport problem.
#[derive(Debug, Clone, Serialize)]
pub struct W2Report {
    pub distance: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub marginal_residual: f64,
    /// The two totals disagreed (within the tolerated band) and both sides
    /// were rescaled to unit mass.
    pub renormalized: bool,
}

/// Total-mass disagreement beyond this relative band is an error rather
/// than a renormalization.
pub const SINKHORN_MASS_BAND: f64 = 1e-3;

const SINKHORN_TOLERANCE: f64 = 1e-11;
const ANNEAL_SWEEPS_PER_STAGE: usize = 4;

struct SinkhornProblem {
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    /// Row-major n×m squared-distance matrix and its transpose.
    cost: Vec<f64>,
    cost_t: Vec<f64>,
    n: usize,
    m: usize,
}

impl SinkhornProblem {
    fn new(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Self {
        let (n, m) = (mu.len(), nu.len());
        let ta = mu.total_mass();
        let tb = nu.total_mass();
        let log_a = mu.masses.iter().map(|v| (v / ta).ln()).collect();
        let log_b = nu.masses.iter().map(|v| (v / tb).ln()).collect();
        let mut cost = vec![0.0; n * m];
        let mut cost_t = vec![0.0; n * m];
        for (i, x) in mu.points.iter().enumerate() {
            for (j, y) in nu.points.iter().enumerate() {
                let c = (x - y).norm_squared();
                cost[i * m + j] = c;
                cost_t[j * n + i] = c;
            }
        }
        SinkhornProblem { log_a, log_b, cost, cost_t, n, m }
    }

    /// One f-then-g sweep at inverse temperature ε.
    fn sweep(&self, f: &mut [f64], g: &mut [f64], eps: f64) {
        let new_f: Vec<f64> = (0..self.n)
            .into_par_iter()
            .map(|i| {
                let row = &self.cost[i * self.m..(i + 1) * self.m];
                -eps * log_sum_exp(row.iter().zip(&*g).zip(&self.log_b).map(
                    |((c, gj), lb)| lb + (gj - c) / eps,
                ))
            })
            .collect();
        f.copy_from_slice(&new_f);
        let new_g: Vec<f64> = (0..self.m)
            .into_par_iter()
            .map(|j| {
                let col = &self.cost_t[j * self.n..(j + 1) * self.n];
                -eps * log_sum_exp(col.iter().zip(&*f).zip(&self.log_a).map(
                    |((c, fi), la)| la + (fi - c) / eps,
                ))
            })
            .collect();
        g.copy_from_slice(&new_g);
    }

    /// L1 defect of the first marginal under the plan implied by (f, g).
    fn row_residual(&self, f: &[f64], g: &[f64], eps: f64) -> f64 {
        (0..self.n)
            .into_par_iter()
            .map(|i| {
                let row = &self.cost[i * self.m..(i + 1) * self.m];
                let sum: f64 = row
                    .iter()
                    .zip(g)
                    .zip(&self.log_b)
                    .map(|((c, gj), lb)| {
                        (self.log_a[i] + lb + (f[i] + gj - c) / eps).exp()
                    })
                    .sum();
                (sum - self.log_a[i].exp()).abs()
            })
            .sum()
    }

    /// ⟨P, C⟩ for the plan implied by (f, g).
    fn transport_cost(&self, f: &[f64], g: &[f64], eps: f64) -> f64 {
        (0..self.n)
            .into_par_iter()
            .map(|i| {
                let row = &self.cost[i * self.m..(i + 1) * self.m];
                row.iter()
                    .zip(g)
                    .zip(&self.log_b)
                    .map(|((c, gj), lb)| {
                        c * (self.log_a[i] + lb + (f[i] + gj - c) / eps).exp()
                    })
                    .sum::<f64>()
            })
            .sum()
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let peak = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    peak + terms.map(|t| (t - peak).exp()).sum::<f64>().ln()
}

/// Balanced entropic transport between weighted clouds under the squared
/// Euclidean ground cost, annealing ε from the squared diameter down to its
/// final value, returning √⟨P, C⟩ and the solve artifacts.
pub fn sinkhorn_distance(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    epsilon: Option<f64>,
    max_iterations: usize,
) -> Result<W2Report> {
    let ta = mu.total_mass();
    let tb = nu.total_mass();
    let drift = (ta - tb).abs() / ta.max(tb);
    if !drift.is_finite() || drift >= SINKHORN_MASS_BAND {
        return Err(SgError::Metric(format!(
            "total masses {ta} and {tb} differ by {drift:.2e} relative, beyond the \
             {SINKHORN_MASS_BAND:.0e} renormalization band"
        )));
    }
    let renormalized = drift > 1e-12;
    // transport cost is symmetric; fix the operand order so both call
    // directions run the identical computation
    let (mu, nu) = match canonical_cmp(mu, nu) {
        Ordering::Greater => (nu, mu),
        _ => (mu, nu),
    };
    let diam = union_diameter(mu, nu);
    let eps_final = match epsilon {
        Some(e) if e.is_finite() && e > 0.0 => e,
        Some(e) => {
            return Err(SgError::Metric(format!("epsilon must be positive, got {e}")));
        }
        None => 1e-3 * diam * diam,
    };
    if max_iterations == 0 {
        return Err(SgError::Metric("sinkhorn needs at least one iteration".into()));
    }
    if diam == 0.0 {
        // all points coincide: the only plan has zero cost
        return Ok(W2Report {
            distance: 0.0,
            epsilon: eps_final,
            iterations: 0,
            marginal_residual: 0.0,
            renormalized,
        });
    }

    let problem = SinkhornProblem::new(mu, nu);
    let mut f = vec![0.0; problem.n];
    let mut g = vec![0.0; problem.m];
    let mut iterations = 0;

    let mut eps = (diam * diam).max(eps_final);
    while eps > eps_final && iterations < max_iterations {
        for _ in 0..ANNEAL_SWEEPS_PER_STAGE {
            if iterations >= max_iterations {
                break;
            }
            problem.sweep(&mut f, &mut g, eps);
            iterations += 1;
        }
        eps = (0.5 * eps).max(eps_final);
    }

    let mut residual = f64::INFINITY;
    while iterations < max_iterations {
        problem.sweep(&mut f, &mut g, eps_final);
        iterations += 1;
        residual = problem.row_residual(&f, &g, eps_final);
        if residual <= SINKHORN_TOLERANCE {
            break;
        }
    }
    if residual > SINKHORN_TOLERANCE {
        return Err(SgError::Metric(format!(
            "sinkhorn stalled after {iterations} iterations with marginal residual \
             {residual:.3e} (tolerance {SINKHORN_TOLERANCE:.0e})"
        )));
    }

    let cost = problem.transport_cost(&f, &g, eps_final);
    Ok(W2Report {
        distance: cost.max(0.0).sqrt(),
        epsilon: eps_final,
        iterations,
        marginal_residual: residual,
        renormalized,
    })
}

/// Entropic Wasserstein-2 distance; `epsilon` defaults to 10⁻³·diam².
pub fn wasserstein2_entropic(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    epsilon: Option<f64>,
    max_iterations: usize,
) -> Result<f64> {
    Ok(sinkhorn_distance(mu, nu, epsilon, max_iterations)?.distance)
}

/// Least-squares slope of ln(error) against ln(abscissa); also returns the
/// RMS residual of the fit.
pub fn log_log_slope(abscissae: &[f64], errors: &[f64]) -> Result<(f64, f64)> {
    if abscissae.len() != errors.len() || abscissae.len() < 2 {
        return Err(SgError::Metric(format!(
            "a slope fit needs at least two matched samples, got {} and {}",
            abscissae.len(),
            errors.len()
        )));
    }
    if abscissae.iter().chain(errors).any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(SgError::Metric(
            "slope fits need positive finite abscissae and errors".into(),
        ));
    }
    let xs: Vec<f64> = abscissae.iter().map(|a| a.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    if sxx == 0.0 {
        return Err(SgError::Metric("slope fit abscissae are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let fit = ybar + slope * (x - xbar);
            (y - fit) * (y - fit)
        })
        .sum();
    Ok((slope, (rss / n).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyMode {
    /// Fixed ensemble, shrinking dt, errors via the trajectory norm.
    Timestep,
    /// Fixed dt, growing ensemble, errors via the Wasserstein-2 distance.
    Particles,
}

/// One member run of a convergence family.
#[derive(Debug, Clone)]
pub struct StudyRun {
    /// Names the run in failure reports, e.g. "dt=0.45" or "N=256".
    pub label: String,
    /// dt in timestep mode, particle count in particles mode.
    pub abscissa: f64,
    pub initial: ParticleState,
    pub dt: f64,
    pub n_steps: usize,
}

pub struct StudyConfig<'a> {
    pub mode: StudyMode,
    pub ctx: &'a DynamicsContext<'a>,
    pub runs: Vec<StudyRun>,
    pub reference: StudyRun,
    /// Trajectory-error normalizer; None → domain diameter.
    pub normalizer: Option<f64>,
    /// Sinkhorn ε; None → 10⁻⁴·diam² of the reference cloud: small enough
    /// that the entropic bias sits below the quantization error being
    /// measured, warm enough that the log-domain iteration still contracts
    /// in f64.
    pub epsilon: Option<f64>,
    pub sinkhorn_max_iterations: usize,
    /// Errors at or below this level mean the family saturated the solver
    /// floor and the fitted slope carries no information.
    pub noise_floor: f64,
}

impl<'a> StudyConfig<'a> {
    pub fn new(
        mode: StudyMode,
        ctx: &'a DynamicsContext<'a>,
        runs: Vec<StudyRun>,
        reference: StudyRun,
    ) -> Self {
        StudyConfig {
            mode,
            ctx,
            runs,
            reference,
            normalizer: None,
            epsilon: None,
            sinkhorn_max_iterations: 200_000,
            noise_floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub mode: StudyMode,
    pub abscissae: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    pub fit_residual: f64,
    /// All errors sat at or below the configured noise floor; the slope is
    /// reported but meaningless.
    pub below_noise_floor: bool,
    /// Entropic regularisation the particle comparisons ran at (None in
    /// timestep mode); the bias floor √(ε·ln N) budgets against this.
    pub epsilon: Option<f64>,
}

fn run_member(run: &StudyRun, ctx: &DynamicsContext) -> Result<ParticleState> {
    if run.n_steps < 2 {
        return Err(SgError::Metric(format!(
            "study run {}: comparisons start after the bootstrap step, so a run needs \
             at least 2 steps, got {}",
            run.label, run.n_steps
        )));
    }
    let mut sinks = SimulationSinks::default();
    run_simulation(&run.initial, ctx, run.dt, run.n_steps, 0, &mut sinks)
        .map_err(|e| SgError::Metric(format!("study run {} failed: {e}", run.label)))
}

/// Runs the family plus its reference and fits the log-log error slope.
/// Every member is compared against the reference at the shared final time
/// (day one in the production studies); the first two steps of each run are
/// never comparison points, so the Euler bootstrap's local error does not
/// enter the fit.
pub fn convergence_study(config: &StudyConfig) -> Result<ConvergenceReport> {
    if config.runs.len() < 2 {
        return Err(SgError::Metric(format!(
            "a convergence study needs at least two member runs, got {}",
            config.runs.len()
        )));
    }
    let reference = run_member(&config.reference, config.ctx)?;
    // one ε for every comparison, fixed off the reference cloud
    let (ref_measure, epsilon) = match config.mode {
        StudyMode::Particles => {
            let nu = DiscreteMeasure::from_state(&reference).map_err(|e| {
                SgError::Metric(format!("study reference {}: {e}", config.reference.label))
            })?;
            let eps = config.epsilon.or_else(|| {
                let d = union_diameter(&nu, &nu);
                (d > 0.0).then(|| 1e-4 * d * d)
            });
            (Some(nu), eps)
        }
        StudyMode::Timestep => (None, None),
    };
    let mut errors = Vec::with_capacity(config.runs.len());
    let mut abscissae = Vec::with_capacity(config.runs.len());
    for run in &config.runs {
        let member = run_member(run, config.ctx)?;
        let dt_final = (member.t - reference.t).abs();
        if dt_final > 1e-9 * reference.t.abs().max(1.0) {
            return Err(SgError::Metric(format!(
                "study run {} ends at t = {} but the reference ends at t = {}",
                run.label, member.t, reference.t
            )));
        }
        let err = match config.mode {
            StudyMode::Timestep => {
                let c = config.normalizer.unwrap_or_else(|| domain_diameter(config.ctx.domain));
                trajectory_error(&member, &reference, c)
            }
            StudyMode::Particles => {
                let mu = DiscreteMeasure::from_state(&member)?;
                let nu = ref_measure.as_ref().expect("particles mode fixed the measure above");
                wasserstein2_entropic(&mu, nu, epsilon, config.sinkhorn_max_iterations)
            }
        }
        .map_err(|e| SgError::Metric(format!("study run {}: {e}", run.label)))?;
        errors.push(err);
        abscissae.push(run.abscissa);
    }

    let floor = config.noise_floor.max(0.0);
    let below_noise_floor = errors.iter().all(|e| *e <= floor);
    let (slope, fit_residual) = if errors.iter().any(|e| *e <= 0.0) {
        (0.0, 0.0)
    } else {
        log_log_slope(&abscissae, &errors)?
    };
    Ok(ConvergenceReport {
        mode: config.mode,
        abscissae,
        errors,
        slope,
        fit_residual,
        below_noise_floor,
        epsilon,
    })
}
