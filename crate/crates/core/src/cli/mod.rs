//! Subcommand dispatch and file outputs of the `infmodel` binary.
//!
//! Exit codes: 0 on success, 1 on invalid input or a failed validation,
//! 2 on a runtime error.

pub mod config;
pub mod verify;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::convergence_sweep;
use crate::profiles::{v_star, ReferenceTrajectory, SERIES_TOL};
use crate::selection::{check_assumptions, AssumptionReport};
use crate::solver;

pub use config::{parse_config, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "infmodel",
    version,
    about = "Simulate and verify the infinitesimal model in the small-variance regime"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evolve the density and write snapshots, mass and mode series.
    Simulate(CommonArgs),
    /// Write the reference trajectory and the profile V* at snapshot times.
    Profiles(CommonArgs),
    /// Run the operator, spectral and series self-tests.
    Verify(CommonArgs),
    /// Run the convergence sweep over a list of eps.
    Sweep(SweepArgs),
    /// Report which structural assumptions on the selection hold.
    Check(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Configuration file of `section.key = value` lines.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated eps list, overriding `epsilon`.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
}

enum Outcome {
    Ok,
    Failed(String),
}

/// Parse `args` (program name first), run the subcommand, return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::Failed(msg)) => {
            eprintln!("validation failed: {msg}");
            EXIT_VALIDATION
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Parse { .. } => EXIT_VALIDATION,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn load(args: &CommonArgs) -> Result<RunConfig> {
    let text = fs::read_to_string(&args.config)?;
    let mut cfg = parse_config(&text)?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<Outcome> {
    match command {
        Command::Simulate(a) => simulate(&load(&a)?),
        Command::Profiles(a) => profiles(&load(&a)?),
        Command::Verify(a) => verify(&load(&a)?),
        Command::Sweep(a) => {
            let mut cfg = load(&a.common)?;
            if let Some(eps) = a.eps {
                if eps.is_empty() || eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
                    return Err(Error::Config("--eps entries must be positive".into()));
                }
                if eps.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::Config("--eps must be strictly decreasing".into()));
                }
                cfg.epsilon = eps;
            }
            sweep(&cfg)
        }
        Command::Check(a) => check(&load(&a)?),
    }
}

fn assumptions(cfg: &RunConfig, traj: &ReferenceTrajectory) -> Result<AssumptionReport> {
    Ok(check_assumptions(&cfg.model, traj, &cfg.base_grid()?, cfg.alpha))
}

fn warn_assumptions(report: &AssumptionReport) {
    let flags = report.passed;
    if !flags.cond_gamma {
        eprintln!(
            "warning: cond_Gamma violated, inf M = {:.4e} at t = {:.4}, z = {:.4}",
            report.inf_m, report.inf_m_at.0, report.inf_m_at.1
        );
    }
    if !flags.decay_gamma {
        eprintln!("warning: decay_Gamma violated, weighted derivative ratios unbounded");
    }
    if !flags.superlinear {
        eprintln!(
            "warning: superlinear growth condition violated, a estimate = {:.4}",
            report.a_estimate
        );
    }
}

/// Write `meta.txt`: subcommand, resolved config, assumption summary and extras.
pub fn write_meta(dir: &Path, command: &str, cfg: &RunConfig, report: &AssumptionReport, extra: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(File::create(dir.join("meta.txt"))?);
    writeln!(out, "command = {command}")?;
    writeln!(out, "\n[config]")?;
    write!(out, "{}", cfg.echo())?;
    writeln!(out, "\n[assumptions]")?;
    writeln!(out, "{}", report.summary())?;
    if !extra.is_empty() {
        writeln!(out, "\n[run]")?;
        write!(out, "{extra}")?;
    }
    out.flush()?;
    Ok(())
}

fn eps_dir(cfg: &RunConfig, eps: f64) -> PathBuf {
    if cfg.epsilon.len() == 1 {
        cfg.out_dir.clone()
    } else {
        cfg.out_dir.join(format!("eps_{eps}"))
    }
}

fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let traj = cfg.reference()?;
    let report = assumptions(cfg, &traj)?;
    warn_assumptions(&report);
    let mut invalid = Vec::new();
    for &eps in &cfg.epsilon {
        let g = cfg.grid_for(eps)?;
        let out = solver::run(&cfg.model, &traj, &g, &cfg.run_config(eps))?;
        let dir = eps_dir(cfg, eps);
        out.write_dir(&dir)?;
        let last = out.last();
        let extra = format!(
            "eps = {eps}\ngrid.n = {}\nsnapshots = {}\nfinal_t = {}\nfinal_log_mass = {:.12e}\nfinal_mode = {:.12e}\nclamped_mass = {:.6e}\nvalid = {}\n",
            g.len(),
            out.snapshots.len(),
            last.t,
            last.log_mass,
            last.mode(),
            last.clamped,
            out.is_valid(),
        );
        write_meta(&dir, "simulate", cfg, &report, &extra)?;
        println!(
            "eps = {eps}: n = {}, t = {}, mode = {:.6}, log_mass = {:.6e}, valid = {}",
            g.len(),
            last.t,
            last.mode(),
            last.log_mass,
            out.is_valid()
        );
        if !out.is_valid() {
            invalid.push(eps);
        }
    }
    if invalid.is_empty() {
        Ok(Outcome::Ok)
    } else {
        Ok(Outcome::Failed(format!("clamped mass above tolerance for eps {invalid:?}")))
    }
}

fn profiles(cfg: &RunConfig) -> Result<Outcome> {
    let traj = cfg.reference()?;
    let report = assumptions(cfg, &traj)?;
    warn_assumptions(&report);
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(File::create(dir.join("trajectory.csv"))?);
    traj.write_csv(&mut out)?;
    out.flush()?;

    let g = cfg.base_grid()?;
    let mut t = 0.0;
    let mut k = 0usize;
    let mut undefined = 0usize;
    while t <= cfg.t_end + 1e-12 {
        let zs = traj.state_at(t)?.z_star;
        let mut out = BufWriter::new(File::create(dir.join(format!("v_star_t{t:.4}.csv")))?);
        writeln!(out, "z,V_star")?;
        for z in g.points() {
            // Points where M <= 0 along the dyadic path have no V*.
            let v = v_star(&cfg.model, zs, z, SERIES_TOL).unwrap_or_else(|_| {
                undefined += 1;
                f64::NAN
            });
            writeln!(out, "{z:.16e},{v:.16e}")?;
        }
        out.flush()?;
        k += 1;
        t = k as f64 * cfg.snapshot_every;
    }
    let extra = format!("profile_files = {k}\nundefined_points = {undefined}\n");
    write_meta(dir, "profiles", cfg, &report, &extra)?;
    println!("wrote trajectory and {k} profile files to {}", dir.display());
    Ok(Outcome::Ok)
}

fn verify(cfg: &RunConfig) -> Result<Outcome> {
    let tests = verify::self_tests(&cfg.model, cfg.z_star0, cfg.quad_order)?;
    print!("{}", verify::format_table(&tests));
    if verify::all_passed(&tests) {
        Ok(Outcome::Ok)
    } else {
        let n = tests.iter().filter(|t| t.status == verify::Status::Fail).count();
        Ok(Outcome::Failed(format!("{n} self-test(s) failed")))
    }
}

fn sweep(cfg: &RunConfig) -> Result<Outcome> {
    let scfg = cfg.sweep_config();
    let traj = scfg.reference()?;
    let report = assumptions(cfg, &traj)?;
    warn_assumptions(&report);
    let conv = convergence_sweep(&scfg, &cfg.epsilon, Some(&cfg.out_dir))?;
    let mut out = BufWriter::new(File::create(cfg.out_dir.join("report.csv"))?);
    conv.write_csv(&mut out)?;
    out.flush()?;
    let summary = conv.summary();
    fs::write(cfg.out_dir.join("summary.txt"), &summary)?;
    write_meta(&cfg.out_dir, "sweep", cfg, &report, &summary)?;
    print!("{summary}");
    if conv.passed() {
        Ok(Outcome::Ok)
    } else {
        Ok(Outcome::Failed("convergence report did not pass".into()))
    }
}

fn check(cfg: &RunConfig) -> Result<Outcome> {
    let traj = cfg.reference()?;
    let report = assumptions(cfg, &traj)?;
    println!("{}", report.summary());
    match traj.local_convexity(&cfg.model) {
        Some((t0, mu0)) => println!("local convexity: m''(z*(t)) >= {mu0:.4e} for t >= {t0:.4}"),
        None => println!("local convexity: not established on [0, {}]", cfg.t_end),
    }
    warn_assumptions(&report);
    Ok(Outcome::Ok)
}
