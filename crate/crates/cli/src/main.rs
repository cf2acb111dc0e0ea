use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use piezosim::analysis::{spectrum, SpectrumReport};
use piezosim::config::{load_model_config_with, RunConfig, Sweep};
use piezosim::control::close_loop;
use piezosim::output::{emit_plot_script, write_fields_csv, write_json, write_trajectory_csv};
use piezosim::pipeline::{build, run_config, with_kappa, with_segments, RunSummary};
use piezosim::verify::verify;
use piezosim::{Controller, Error};

const EXIT_VERIFICATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "piezosim", version, about = "Simulate and certify piezoelectric beams, actuators and composites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write trajectory, fields, report and plot script.
    Simulate(Common),
    /// Print a PASS/FAIL table of structural and physical checks.
    Verify(Common),
    /// Write open- and closed-loop eigenvalues.
    Spectrum(Common),
    /// Repeat the run over the config's kappa or segments list.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `dotted.key=value`, applied before validation. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for randomised checks; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let code = match e {
            Error::NotPositiveDefinite { .. } | Error::Singular { .. } | Error::ToleranceNotMet { .. } => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<(), Failure>;

fn load(c: &Common) -> Result<(RunConfig, u64), Failure> {
    let cfg = load_model_config_with(&c.config, &c.overrides)?;
    let seed = c.seed.unwrap_or_else(|| cfg.seed_or_default());
    Ok((cfg, seed))
}

fn out_dir(c: &Common) -> Result<&Path, Failure> {
    std::fs::create_dir_all(&c.out).map_err(|e| Failure::from(Error::Io(e)))?;
    Ok(&c.out)
}

fn simulate_into(cfg: &RunConfig, dir: &Path) -> Result<(RunSummary, usize), Failure> {
    let run = run_config(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Failure::from(Error::Io(e)))?;
    let csv = dir.join("trajectory.csv");
    write_trajectory_csv(&run.traj, &run.frames, &csv)?;
    write_fields_csv(&run.frames, &dir.join("fields.csv"))?;
    write_json(&run.summary, &dir.join("decay_report.json"))?;
    emit_plot_script(&csv, &dir.join("plot_tip.py"))?;
    Ok((run.summary, run.traj.len()))
}

fn cmd_simulate(c: &Common) -> CliResult {
    let (cfg, _) = load(c)?;
    let dir = out_dir(c)?;
    let (s, samples) = simulate_into(&cfg, dir)?;
    println!(
        "{samples} samples written to {}; H({} s) = {:.6e} J, H(end) = {:.6e} J, peak |w_tip| = {:.6e} m",
        dir.display(),
        s.excitation_end_s,
        s.decay.h0,
        s.decay.h_end,
        s.peak_abs_w_tip_m
    );
    Ok(())
}

fn cmd_verify(c: &Common) -> CliResult {
    let (cfg, seed) = load(c)?;
    let report = verify(&cfg, seed)?;
    print!("{}", report.table());
    write_json(&report, &out_dir(c)?.join("verify_report.json"))?;
    if report.all_passed() {
        println!("all checks pass");
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VERIFICATION,
            message: "verification failed".into(),
        })
    }
}

#[derive(Serialize)]
struct SpectrumSummary {
    segments: usize,
    open_loop: LoopSummary,
    closed_loop: Option<LoopSummary>,
}

#[derive(Serialize)]
struct LoopSummary {
    controller: String,
    max_real: f64,
    max_abs: f64,
    ratio: f64,
    paired_conjugates: bool,
    eigenvalue_count: usize,
}

impl LoopSummary {
    fn new(ctl: &Controller, r: &SpectrumReport) -> LoopSummary {
        LoopSummary {
            controller: ctl.name().into(),
            max_real: r.max_real,
            max_abs: r.max_abs,
            ratio: r.max_real / r.max_abs.max(f64::MIN_POSITIVE),
            paired_conjugates: r.paired_conjugates,
            eigenvalue_count: r.eigenvalues.len(),
        }
    }
}

const SPECTRUM_TOL: f64 = 1e-8;

fn cmd_spectrum(c: &Common) -> CliResult {
    let (cfg, _) = load(c)?;
    let sys = build(&cfg)?;
    let mut loops = vec![(Controller::Zero, spectrum(&close_loop(&sys, &Controller::Zero)?)?)];
    if cfg.controller.is_feedback() {
        loops.push((cfg.controller, spectrum(&close_loop(&sys, &cfg.controller)?)?));
    }
    let dir = out_dir(c)?;
    let mut csv = String::from("loop,re,im\n");
    for (ctl, r) in &loops {
        for (re, im) in &r.eigenvalues {
            csv.push_str(&format!("{},{re:e},{im:e}\n", ctl.name()));
        }
    }
    std::fs::write(dir.join("spectrum.csv"), csv).map_err(|e| Failure::from(Error::Io(e)))?;
    let summary = SpectrumSummary {
        segments: cfg.segments,
        open_loop: LoopSummary::new(&loops[0].0, &loops[0].1),
        closed_loop: loops.get(1).map(|(c, r)| LoopSummary::new(c, r)),
    };
    write_json(&summary, &dir.join("spectrum_summary.json"))?;
    let mut ok = true;
    for (ctl, r) in &loops {
        let pass = r.no_unstable_modes(SPECTRUM_TOL);
        ok &= pass;
        println!(
            "{:<4}  {:<14} {} eigenvalues, max Re = {:.3e}, max|l| = {:.3e}, ratio {:.1e} (tol {SPECTRUM_TOL:e})",
            if pass { "PASS" } else { "FAIL" },
            ctl.name(),
            r.eigenvalues.len(),
            r.max_real,
            r.max_abs,
            r.max_real / r.max_abs.max(f64::MIN_POSITIVE)
        );
    }
    if ok {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VERIFICATION,
            message: "spectrum has modes with positive real part".into(),
        })
    }
}

fn cmd_sweep(c: &Common) -> CliResult {
    let (cfg, _) = load(c)?;
    let Some(sweep) = cfg.sweep.clone() else {
        return Err(Failure {
            code: EXIT_CONFIG,
            message: format!("{}: schema violation: sweep needs a `sweep.kappa` or `sweep.segments` list", c.config.display()),
        });
    };
    let dir = out_dir(c)?;
    let points: Vec<(String, RunConfig)> = match &sweep {
        Sweep::Kappa(ks) => ks.iter().map(|&k| (format!("kappa_{k}"), with_kappa(&cfg, k))).collect(),
        Sweep::Segments(ns) => ns.iter().map(|&n| (format!("segments_{n}"), with_segments(&cfg, n))).collect(),
    };
    let results: Vec<Result<(RunSummary, usize), Failure>> =
        points.par_iter().map(|(name, point)| simulate_into(point, &dir.join(name))).collect();
    let mut csv = match sweep {
        Sweep::Kappa(_) => String::from("kappa,half_life_s,h_ratio,power_balance_rel\n"),
        Sweep::Segments(_) => String::from("segments,energy_drift,h_ratio,half_life_s\n"),
    };
    for r in results {
        let (s, _) = r?;
        let drift = s.power_balance_residual / s.max_energy.max(f64::MIN_POSITIVE);
        let half = s.decay.half_life_estimate.map_or(String::from("nan"), |h| format!("{h:e}"));
        match sweep {
            Sweep::Kappa(_) => csv.push_str(&format!(
                "{:e},{half},{:e},{drift:e}\n",
                s.kappa.unwrap_or(f64::NAN),
                s.decay.ratio
            )),
            Sweep::Segments(_) => csv.push_str(&format!("{},{drift:e},{:e},{half}\n", s.segments, s.decay.ratio)),
        }
    }
    std::fs::write(dir.join("sweep.csv"), &csv).map_err(|e| Failure::from(Error::Io(e)))?;
    print!("{csv}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Verify(c) => cmd_verify(c),
        Command::Spectrum(c) => cmd_spectrum(c),
        Command::Sweep(c) => cmd_sweep(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
