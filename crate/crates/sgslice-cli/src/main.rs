//! Command-line driver for the slice model: one subcommand per run mode,
//! TOML configuration in, CSV/TOML artifacts out.
//!
//! Every run echoes its fully resolved configuration into the output
//! directory, so an artifact directory reproduces on its own. Failures print
//! a human-readable message and then one machine-readable JSON line on
//! stderr; the exit code identifies the error category.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgslice::Result;
use sgslice::{
    compute_rhs, convergence_study, gauge_initial, load_config, read_diagnostics,
    run_simulation, sample_particles, save_config, single_seed_trajectory, write_diagnostics,
    write_report, write_snapshot, DiagnosticsRow, DynamicsContext,
    GaugedInitial, InitConfig, ParticleState, ResolvedRun, RhsSample, RunConfig, RunMode, Seed,
    SgError, SimulationSinks, StudyConfig, StudyMode, StudyRun,
};

/// Coarsening factors applied to the reference timestep in a dt study.
const DT_LADDER_FACTORS: [usize; 4] = [16, 8, 4, 2];

/// Member grid edge as a fraction of the reference grid edge in an N study.
const N_LADDER_RATIOS: [f64; 4] = [1.0 / 3.0, 0.5, 2.0 / 3.0, 5.0 / 6.0];

#[derive(Parser)]
#[command(
    name = "sgslice",
    version,
    about = "Semi-geostrophic slice model: particle dynamics coupled to semi-discrete optimal transport"
)]
struct Cli {
    #[command(subcommand)]
    command: Mode,
    /// TOML run configuration; built-in defaults for the subcommand when omitted
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir` from the configuration
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Print solver traces and per-snapshot progress
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Mode {
    /// Frontogenesis simulation at physical scales
    Simulate,
    /// Single-seed run at unit parameters, checked against the analytic trajectory
    Benchmark,
    /// Timestep-refinement study against the configured reference timestep
    ConvergenceDt,
    /// Particle-refinement study against the configured grid
    ConvergenceN,
    /// Solve the initial transport problem and write the cell sample, no time stepping
    SolveOt,
}

impl Mode {
    fn run_mode(&self) -> RunMode {
        match self {
            Mode::Simulate => RunMode::Simulate,
            Mode::Benchmark => RunMode::Benchmark,
            Mode::ConvergenceDt => RunMode::ConvergenceDt,
            Mode::ConvergenceN => RunMode::ConvergenceN,
            Mode::SolveOt => RunMode::SolveOt,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error: {e}");
            // the last stderr line stays machine readable
            eprintln!(
                "{}",
                serde_json::json!({ "error": category, "message": e.to_string() })
            );
            ExitCode::from(exit_code(category))
        }
    }
}

fn exit_code(category: &str) -> u8 {
    match category {
        "config" => 2,
        "singular-seed" => 3,
        "degenerate-pair" => 4,
        "numerics" => 5,
        "non-convergence" => 6,
        "initialization" => 7,
        "blow-up" => 8,
        "undefined-centroid" => 9,
        "stale-state" => 10,
        "metric" => 11,
        "io" => 12,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mode = cli.command.run_mode();
    let mut config = match &cli.config {
        Some(path) => {
            let c = load_config(path)?;
            if c.mode != mode {
                return Err(SgError::Config(format!(
                    "configuration mode '{}' does not match subcommand '{}'",
                    c.mode.label(),
                    mode.label()
                )));
            }
            c
        }
        None => RunConfig::minimal(mode),
    };

    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("out-{}", mode.label())));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| SgError::io(out_dir.display().to_string(), e))?;
    config.output_dir = Some(out_dir.display().to_string());

    let resolved = config.resolve()?;
    // defaults are materialised in the struct, so this echo is complete
    save_config(&config, out_dir.join("config.toml"))?;

    match mode {
        RunMode::Benchmark => run_benchmark(&resolved, &out_dir, cli.verbose),
        RunMode::Simulate => run_simulate(&resolved, &out_dir, cli.verbose),
        RunMode::SolveOt => run_solve_ot(&resolved, &out_dir, cli.verbose),
        RunMode::ConvergenceDt => run_convergence_dt(&resolved, &out_dir, cli.verbose),
        RunMode::ConvergenceN => run_convergence_n(&resolved, &out_dir, cli.verbose),
    }
}

/// Snapshot and diagnostics sinks writing CSV files into `dir`.
fn file_sinks(dir: &Path, verbose: bool) -> SimulationSinks<'_> {
    SimulationSinks {
        snapshot: Some(Box::new(move |state: &ParticleState, sample: &RhsSample| {
            let path = dir.join(format!("snapshot_{:06}.csv", state.step));
            write_snapshot(state, sample, &path)?;
            if verbose {
                eprintln!("step {:>6}  t = {:>12.6}  {}", state.step, state.t, path.display());
            }
            Ok(())
        })),
        diagnostics: Some(Box::new(move |rows: &[DiagnosticsRow]| {
            write_diagnostics(rows, dir.join("diagnostics.csv"))
        })),
    }
}

/// Solves the initial transport problem with the dual level folded into the
/// cost offset, printing solver traces when asked.
fn prepare_initial(
    run: &ResolvedRun,
    seeds: Vec<Seed>,
    masses: Vec<f64>,
    verbose: bool,
) -> Result<GaugedInitial> {
    let state = ParticleState::new(seeds, masses)?;
    let gauged = gauge_initial(&state, &run.domain, &run.cost, &run.density, &run.settings)?;
    if verbose {
        for r in &gauged.solve.trace {
            eprintln!(
                "  newton iter {:>3}: residual {:.3e}, step {:.3}, min mass {:.3e}",
                r.iteration, r.residual, r.step, r.min_mass
            );
        }
        eprintln!(
            "initial transport solve: {} iterations, residual {:.3e}, offset c0 = {:.6}, mean Exner {:.8}",
            gauged.solve.iterations, gauged.solve.residual_norm, gauged.cp.c0, gauged.pi0
        );
    }
    Ok(gauged)
}

fn sample_initial(run: &ResolvedRun, cfg: &InitConfig) -> Result<(Vec<Seed>, Vec<f64>)> {
    let sampled = sample_particles(cfg, &run.params, &run.scales)?;
    for w in &sampled.warnings {
        eprintln!("warning: {w}");
    }
    Ok((sampled.seeds, sampled.masses))
}

fn write_toml(value: &impl serde::Serialize, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(value)
        .map_err(|e| SgError::Config(format!("summary encode failed: {e}")))?;
    std::fs::write(path, text).map_err(|e| SgError::io(path.display().to_string(), e))
}

#[derive(serde::Serialize)]
struct BenchmarkSummary {
    n_steps: usize,
    dt: f64,
    t_final: f64,
    z1_final: f64,
    z1_analytic: f64,
    z2_final: f64,
    trajectory_abs_error: f64,
    mass_drift: f64,
}

fn run_benchmark(run: &ResolvedRun, dir: &Path, verbose: bool) -> Result<()> {
    let seed = Seed::new(0.0, 2.0)?;
    let state0 = ParticleState::new(vec![seed], vec![1.0])?;
    let ctx = DynamicsContext {
        domain: &run.domain,
        cp: run.cost,
        cd: &run.density,
        alpha: run.alpha,
        beta: run.beta,
        // unit reference pressure pairs with the benchmark offset c0 = 1
        pi0: 1.0,
        settings: run.settings.clone(),
    };
    let mut sinks = file_sinks(dir, verbose);
    let final_state =
        run_simulation(&state0, &ctx, run.dt, run.n_steps, run.snapshot_every, &mut sinks)?;

    let t_final = final_state.t;
    let analytic = single_seed_trajectory(seed, t_final)?;
    let err = (final_state.seeds[0].z1 - analytic.z1)
        .abs()
        .max((final_state.seeds[0].z2 - analytic.z2).abs());
    let summary = BenchmarkSummary {
        n_steps: run.n_steps,
        dt: run.dt,
        t_final,
        z1_final: final_state.seeds[0].z1,
        z1_analytic: analytic.z1,
        z2_final: final_state.seeds[0].z2,
        trajectory_abs_error: err,
        mass_drift: (final_state.masses[0] - 1.0).abs(),
    };
    write_toml(&summary, &dir.join("benchmark.toml"))?;
    println!(
        "benchmark: {} steps to t = {:.4}, |z - analytic| = {:.3e}, mass drift {:.3e}",
        run.n_steps, t_final, err, summary.mass_drift
    );
    Ok(())
}

fn run_simulate(run: &ResolvedRun, dir: &Path, verbose: bool) -> Result<()> {
    let (seeds, masses) = sample_initial(run, &run.config.init)?;
    let prep = prepare_initial(run, seeds, masses, verbose)?;
    let ctx = DynamicsContext {
        domain: &run.domain,
        cp: prep.cp,
        cd: &run.density,
        alpha: run.alpha,
        beta: run.beta,
        pi0: prep.pi0,
        settings: run.settings.clone(),
    };
    let mut sinks = file_sinks(dir, verbose);
    let final_state =
        run_simulation(&prep.state, &ctx, run.dt, run.n_steps, run.snapshot_every, &mut sinks)?;
    drop(sinks);

    let rows = read_diagnostics(dir.join("diagnostics.csv"))?;
    let max_energy_err = rows
        .iter()
        .map(|r| r.energy_rel_err.abs())
        .fold(0.0_f64, f64::max);
    let mass0 = rows.first().map(|r| r.total_mass).unwrap_or(1.0);
    let mass_drift = rows
        .iter()
        .map(|r| (r.total_mass - mass0).abs() / mass0)
        .fold(0.0_f64, f64::max);
    println!(
        "simulate: {} particles, {} steps to t = {:.4}, max |energy rel err| = {:.3e}, mass drift {:.3e}",
        final_state.len(),
        run.n_steps,
        final_state.t,
        max_energy_err,
        mass_drift
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct SolveSummary {
    particles: usize,
    newton_iters: usize,
    min_cell_mass: f64,
    energy: f64,
    pi0: f64,
}

fn run_solve_ot(run: &ResolvedRun, dir: &Path, verbose: bool) -> Result<()> {
    let (seeds, masses) = sample_initial(run, &run.config.init)?;
    let prep = prepare_initial(run, seeds, masses, verbose)?;
    let ctx = DynamicsContext {
        domain: &run.domain,
        cp: prep.cp,
        cd: &run.density,
        alpha: run.alpha,
        beta: run.beta,
        pi0: prep.pi0,
        settings: run.settings.clone(),
    };
    let solved = compute_rhs(&prep.state, &ctx)?;
    let mut state = prep.state;
    state.weights = solved.weights.clone();
    write_snapshot(&state, &solved.rhs, dir.join("snapshot_000000.csv"))?;
    let summary = SolveSummary {
        particles: state.len(),
        newton_iters: solved.newton_iters,
        min_cell_mass: solved.min_mass,
        energy: solved.energy,
        pi0: prep.pi0,
    };
    write_toml(&summary, &dir.join("solve.toml"))?;
    println!(
        "solve-ot: {} particles, {} newton iterations, min cell mass {:.3e}",
        summary.particles, summary.newton_iters, summary.min_cell_mass
    );
    Ok(())
}

fn run_convergence_dt(run: &ResolvedRun, dir: &Path, verbose: bool) -> Result<()> {
    if run.n_steps < 2 {
        return Err(SgError::Config(format!(
            "a timestep study needs a reference run of at least two steps, got {}",
            run.n_steps
        )));
    }
    let (seeds, masses) = sample_initial(run, &run.config.init)?;
    let prep = prepare_initial(run, seeds, masses, verbose)?;
    let ctx = DynamicsContext {
        domain: &run.domain,
        cp: prep.cp,
        cd: &run.density,
        alpha: run.alpha,
        beta: run.beta,
        pi0: prep.pi0,
        settings: run.settings.clone(),
    };

    let t_final = run.dt * run.n_steps as f64;
    let runs: Vec<StudyRun> = DT_LADDER_FACTORS
        .iter()
        .map(|&f| {
            // snap to an integer step count holding the final time fixed
            let n = ((run.n_steps as f64 / f as f64).round() as usize).max(2);
            let dt = t_final / n as f64;
            StudyRun {
                label: format!("dt={dt:.6}"),
                abscissa: dt,
                initial: prep.state.clone(),
                dt,
                n_steps: n,
            }
        })
        .collect();
    let reference = StudyRun {
        label: format!("dt={:.6}", run.dt),
        abscissa: run.dt,
        initial: prep.state.clone(),
        dt: run.dt,
        n_steps: run.n_steps,
    };

    let study = StudyConfig::new(StudyMode::Timestep, &ctx, runs, reference);
    let report = convergence_study(&study)?;
    write_report(&report, None, dir.join("report.toml"))?;
    print_report_line("convergence-dt", &report.abscissae, report.slope, report.below_noise_floor);
    Ok(())
}

fn run_convergence_n(run: &ResolvedRun, dir: &Path, verbose: bool) -> Result<()> {
    let ref_cfg = &run.config.init;
    let (seeds, masses) = sample_initial(run, ref_cfg)?;
    let prep = prepare_initial(run, seeds, masses, verbose)?;
    let ctx = DynamicsContext {
        domain: &run.domain,
        cp: prep.cp,
        cd: &run.density,
        alpha: run.alpha,
        beta: run.beta,
        // every member shares the reference gauge, so the uniform drift
        // alpha*pi0 cancels from the transport distances
        pi0: prep.pi0,
        settings: run.settings.clone(),
    };

    let n_ref = prep.state.len();
    let edge_ref = (n_ref as f64).sqrt();
    let mut runs = Vec::with_capacity(N_LADDER_RATIOS.len());
    for r in N_LADDER_RATIOS {
        let k = ((edge_ref * r).round() as usize).max(2);
        let member_cfg = InitConfig { m1: k, m2: k, ..ref_cfg.clone() };
        let (seeds, masses) = sample_initial(run, &member_cfg)?;
        let state = ParticleState::new(seeds, masses)?;
        runs.push(StudyRun {
            label: format!("N={}", k * k),
            abscissa: (k * k) as f64,
            initial: state,
            dt: run.dt,
            n_steps: run.n_steps,
        });
    }
    let reference = StudyRun {
        label: format!("N={n_ref}"),
        abscissa: n_ref as f64,
        initial: prep.state.clone(),
        dt: run.dt,
        n_steps: run.n_steps,
    };

    // ε defaults to 1e-4·diam² of the reference final cloud (in geostrophic
    // coordinates, whose diameter the fluid domain says nothing about)
    let study = StudyConfig::new(StudyMode::Particles, &ctx, runs, reference);
    let report = convergence_study(&study)?;
    let bias_floor = report.epsilon.map(|e| (e * (n_ref as f64).ln()).sqrt());
    write_report(&report, bias_floor, dir.join("report.toml"))?;
    if let (Some(floor), Some(eps)) = (bias_floor, report.epsilon) {
        println!("entropic bias floor: {floor:.3e} (epsilon = {eps:.3e})");
    }
    print_report_line("convergence-n", &report.abscissae, report.slope, report.below_noise_floor);
    Ok(())
}

fn print_report_line(mode: &str, abscissae: &[f64], slope: f64, below_floor: bool) {
    let note = if below_floor { " (all errors below the noise floor)" } else { "" };
    println!("{mode}: slope {slope:.3} over {} member runs{note} -> report.toml", abscissae.len());
}
