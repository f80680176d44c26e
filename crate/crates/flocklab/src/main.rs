use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use flocklab::checks::{
    divergence_identity, energy_inequality, growth_constant, lbound_inequality, lp_growth,
    scheme_tolerance,
};
use flocklab::config::{AlignmentMode, RunConfig};
use flocklab::kernels::{mt_ratio_sup, Mollifier};
use flocklab::output::{self, CheckRow};
use flocklab::particles::run_particles;
use flocklab::solver::{run, DiagRow, RunOutput};
use flocklab::sweep::r_sweep;
use flocklab::{Error, Result};

/// Kinetic flocking laboratory: a finite-volume phase-space solver with
/// locally averaged velocity alignment, its particle twin, and the checks
/// and sweeps that probe the strictly local r → 0 limit.
#[derive(Parser)]
#[command(name = "flocklab", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the phase-space equation; emit diagnostics.csv + snapshots.
    Kinetic {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Integrate the particle system; emit trajectory.csv + diagnostics.csv.
    Particles {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the configuration over a radius list against the local limit;
    /// emit sweep.csv + check.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated radii overriding the config's r_list, e.g.
        /// "0.4,0.2,0.1,0.05,0" (must include 0).
        #[arg(long)]
        r: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every inequality/identity check on one configuration and print
    /// the table; exits 1 if any check fails.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
}

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn init_threads() -> std::result::Result<(), String> {
    match std::env::var("FLOCKLAB_THREADS") {
        Err(_) => Ok(()),
        Ok(v) => {
            let n: usize = v
                .parse()
                .map_err(|_| format!("FLOCKLAB_THREADS: expected a positive integer, got `{v}`"))?;
            if n == 0 {
                return Err("FLOCKLAB_THREADS: expected a positive integer, got `0`".to_string());
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| e.to_string())
        }
    }
}

fn load_config(path: &Path) -> Result<(RunConfig, String)> {
    if !path.is_file() {
        return Err(Error::invalid(
            "config",
            format!(
                "`{}` not found\nusage: flocklab <kinetic|particles|sweep|check> --config <file> [--out <dir>] [--r <list>]",
                path.display()
            ),
        ));
    }
    RunConfig::load(path)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = init_threads() {
        eprintln!("error,2,{}", csv_quote(&msg));
        return ExitCode::from(2);
    }
    match dispatch(&cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let code = e.exit_code();
            eprintln!("error,{code},{}", csv_quote(&e.to_string()));
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(cmd: &Cmd) -> Result<u8> {
    match cmd {
        Cmd::Kinetic { config, out } => cmd_kinetic(config, out),
        Cmd::Particles { config, out } => cmd_particles(config, out),
        Cmd::Sweep { config, r, out } => cmd_sweep(config, r.as_deref(), out),
        Cmd::Check { config } => cmd_check(config),
    }
}

fn kinetic_run(cfg: &RunConfig) -> Result<RunOutput> {
    let f0 = cfg.initial()?.density(cfg.phase_grid()?);
    Ok(run(&cfg.physics()?, &cfg.solver(), f0))
}

fn cmd_kinetic(config: &Path, out_dir: &Path) -> Result<u8> {
    let (cfg, text) = load_config(config)?;
    std::fs::create_dir_all(out_dir)?;
    let clock = Instant::now();
    let mut run_out = kinetic_run(&cfg)?;
    output::write_diagnostics(&out_dir.join("diagnostics.csv"), &run_out.diagnostics)?;
    output::write_snapshots(out_dir, &run_out.snapshots)?;
    output::write_manifest(&out_dir.join("manifest.csv"), "kinetic", &text, clock.elapsed().as_secs_f64())?;
    if let Some(e) = run_out.failure.take() {
        return Err(e);
    }
    println!(
        "wrote {}: diagnostics.csv ({} rows), {} snapshots, manifest.csv",
        out_dir.display(),
        run_out.diagnostics.len(),
        run_out.snapshots.len()
    );
    Ok(0)
}

fn cmd_particles(config: &Path, out_dir: &Path) -> Result<u8> {
    let (cfg, text) = load_config(config)?;
    std::fs::create_dir_all(out_dir)?;
    let model = cfg.particle_model()?;
    let dt = cfg
        .time
        .dt
        .ok_or_else(|| Error::invalid("time.dt", "particle runs need an explicit step"))?;
    let clock = Instant::now();
    let (frames, diags, failure) = match cfg.particles.dim {
        1 => {
            let ens = cfg.ensemble_1d()?;
            let mass = ens.total_mass();
            let mut run = run_particles(&model, ens, dt, cfg.time.t_end, cfg.time.snapshot_stride);
            output::write_trajectory(&out_dir.join("trajectory.csv"), &run.snapshots)?;
            (run.snapshots.len(), output::particle_diag_rows(&run.diagnostics, mass), run.failure.take())
        }
        _ => {
            let ens = cfg.ensemble_2d()?;
            let mass = ens.total_mass();
            let mut run = run_particles(&model, ens, dt, cfg.time.t_end, cfg.time.snapshot_stride);
            output::write_trajectory(&out_dir.join("trajectory.csv"), &run.snapshots)?;
            (run.snapshots.len(), output::particle_diag_rows(&run.diagnostics, mass), run.failure.take())
        }
    };
    output::write_diagnostics(&out_dir.join("diagnostics.csv"), &diags)?;
    output::write_manifest(&out_dir.join("manifest.csv"), "particles", &text, clock.elapsed().as_secs_f64())?;
    if let Some(e) = failure {
        return Err(e);
    }
    println!(
        "wrote {}: trajectory.csv ({frames} frames), diagnostics.csv ({} rows), manifest.csv",
        out_dir.display(),
        diags.len()
    );
    Ok(0)
}

fn cmd_sweep(config: &Path, r_override: Option<&str>, out_dir: &Path) -> Result<u8> {
    let (mut cfg, text) = load_config(config)?;
    if let Some(list) = r_override {
        let mut rs = Vec::new();
        for part in list.split(',') {
            let part = part.trim();
            let r: f64 = part
                .parse()
                .map_err(|_| Error::invalid("--r", format!("expected a number, got `{part}`")))?;
            rs.push(r);
        }
        cfg.sweep.r_list = rs;
    }
    std::fs::create_dir_all(out_dir)?;
    let clock = Instant::now();
    let setup = cfg.sweep_setup()?;
    let f0 = cfg.initial()?.density(cfg.phase_grid()?);
    let e0 = f0.energy(|x| match cfg.potential() {
        flocklab::solver::Potential::Zero => 0.0,
        flocklab::solver::Potential::Harmonic { kappa } => 0.5 * kappa * x * x,
    });
    let mut report = r_sweep(&setup, &f0, &cfg.sweep.r_list)?;
    output::write_sweep(&out_dir.join("sweep.csv"), &report)?;

    let c = Mollifier::new(cfg.profile()?, 1.0, 1)?.mt_constant();
    let grid = f0.grid();
    let dt = cfg.time.dt.expect("the sweep validated dt");
    let tol_scheme = scheme_tolerance(grid.x.h(), grid.v.h(), dt, e0);
    let worst_energy = report.rows.iter().map(|r| r.energy_margin).fold(f64::NEG_INFINITY, f64::max);
    let worst_sup = report.rows.iter().map(|r| r.mt_sup).fold(f64::NEG_INFINITY, f64::max);
    let smallest_pos = report
        .rows
        .iter()
        .filter(|r| r.r > 0.0)
        .min_by(|a, b| a.r.partial_cmp(&b.r).expect("radii are finite"))
        .map(|r| r.product_gap);
    let mut checks = vec![
        CheckRow::new("gaps_decrease_in_r", report.monotone_violation(), cfg.sweep.gap_tol),
        CheckRow::new("mt_sup_bounded", worst_sup - c, 1e-8),
        CheckRow::new("energy_inequality", worst_energy, tol_scheme),
    ];
    if let Some(gap) = smallest_pos {
        checks.push(CheckRow::new("product_gap_floor", gap - 3.0 * report.weak_residual_r0, 0.0));
    }
    output::write_checks(&out_dir.join("check.csv"), &checks)?;
    output::write_manifest(&out_dir.join("manifest.csv"), "sweep", &text, clock.elapsed().as_secs_f64())?;
    if let Some(e) = report.failure.take() {
        return Err(e);
    }
    let all_pass = checks.iter().all(|c| c.passed);
    println!(
        "wrote {}: sweep.csv ({} rows), check.csv ({} checks, {}), manifest.csv",
        out_dir.display(),
        report.rows.len(),
        checks.len(),
        if all_pass { "all pass" } else { "FAILURES" }
    );
    Ok(if all_pass { 0 } else { 1 })
}

fn cmd_check(config: &Path) -> Result<u8> {
    let (cfg, _) = load_config(config)?;
    let run_out = kinetic_run(&cfg)?;
    if let Some(e) = run_out.failure {
        return Err(e);
    }
    let rows = single_run_checks(&cfg, &run_out)?;
    print!("{}", output::checks_csv(&rows));
    Ok(if rows.iter().all(|c| c.passed) { 0 } else { 1 })
}

fn single_run_checks(cfg: &RunConfig, run_out: &RunOutput) -> Result<Vec<CheckRow>> {
    let phys = cfg.physics()?;
    let diags: &[DiagRow] = &run_out.diagnostics;
    let first = &diags[0];
    let e0 = first.energy;
    let grid = run_out.snapshots[0].1.grid();
    let dt_max = diags.windows(2).map(|w| w[1].t - w[0].t).fold(0.0, f64::max);
    let tol_scheme = scheme_tolerance(grid.x.h(), grid.v.h(), dt_max, e0);

    // The pinned pairing constant and the mollifier ratio-bound constant.
    let c_pair = phys.lbound_c();
    let mut rows = vec![
        CheckRow::new("energy_inequality", energy_inequality(diags, c_pair)?.worst_margin, tol_scheme),
        CheckRow::new("lbound_inequality", lbound_inequality(diags)?.worst_margin, 1e-8 * e0.max(1.0)),
    ];
    // Norm growth against the closed-form constant, with 5% scheme slack.
    let c_grow = growth_constant(&cfg.influence()?, first.mass) * 1.05;
    rows.push(CheckRow::new("linf_growth", lp_growth(diags, f64::INFINITY, c_grow)?.worst_margin, 0.0));
    rows.push(CheckRow::new("lp_growth", lp_growth(diags, 2.0, c_grow)?.worst_margin, 0.0));
    rows.push(CheckRow::new(
        "divergence_identity",
        divergence_identity(&phys, &run_out.snapshots[0].1)?,
        1e-12,
    ));
    let last = diags.last().expect("runs emit at least the initial row");
    let mass_drift = ((last.mass + last.outflow) - first.mass).abs() / first.mass;
    rows.push(CheckRow::new("mass_conservation", mass_drift, 1e-10));
    if cfg.kernel.lambda == 0.0
        && cfg.kernel.alignment == AlignmentMode::Off
        && cfg.potential.kappa == 0.0
    {
        let p_drift = (last.momentum - first.momentum).abs();
        rows.push(CheckRow::new("momentum_conservation", p_drift, 1e-8));
    }
    if cfg.kernel.alignment == AlignmentMode::Mt && cfg.kernel.r > 0.0 {
        let m = Mollifier::new(cfg.profile()?, cfg.kernel.r, 1)?;
        let c_bound = Mollifier::new(cfg.profile()?, 1.0, 1)?.mt_constant();
        let mut sup = 0.0f64;
        for (_, f) in &run_out.snapshots {
            sup = sup.max(mt_ratio_sup(&m, &grid.x, &f.rho())?);
        }
        rows.push(CheckRow::new("mt_sup_bounded", sup - c_bound, 1e-8));
    }
    Ok(rows)
}
