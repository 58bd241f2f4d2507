//! Command-line front end: `fit`, `simulate`, `calibrate`, `summarize`.
//!
//! Output files written by `fit` (and `summarize`) into `--out`:
//!
//! - `state_trajectory.csv`: c, E, I, R, D, cases, deaths per day
//! - `param_trajectory.csv`: alpha, beta, lambda, gamma, phi_f per day
//! - `r0_trajectory.csv`: R0 per day
//! - `diagnostics.json`: per-step ESS, projection counts, evidence
//! - `snapshots.csv` with `--snapshots`: every particle on every day
//! - `recovery.json` with `--truth`: errors against a synthetic truth
//!
//! The trajectory files share the summary layout
//! `day_index,date,observed,quantity,mean,median,q...`.
//!
//! Exit codes: 0 success, 1 invalid input or failure, 2 filter degeneracy,
//! 64 usage error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{load_config, ObservationConfig, RunConfig};
use crate::data::{guinea, parse_report_csv, ReportDataset};
use crate::error::{Error, Result};
use crate::kdpf::{run_filter, RunOptions, StepReport};
use crate::model::CompartmentState;
use crate::observation::calibrate_link;
use crate::simulator::{recovery_report, seeded_report_days, simulate, GroundTruth, SimNoise, SimulationSpec};
use crate::summary::{
    read_snapshots_csv, read_summary_csv, summarize, write_snapshots_csv, write_summary_csv, Quantity,
    TrajectorySummary,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_DEGENERACY: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "kdpf", version, about = "Particle filter inference for a stochastic SEIR epidemic model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the filter on a report file.
    Fit {
        /// Report CSV; the bundled Guinea series when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// JSON config; falls back to $KDPF_CONFIG, then defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of particles.
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write every particle cloud.
        #[arg(long)]
        snapshots: bool,
        /// Ground truth JSON from `simulate`; writes recovery.json.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Simulate an outbreak with the configured prior means as truth.
    Simulate {
        #[arg(long, default_value_t = 120)]
        days: i64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "sim")]
        out: PathBuf,
        /// Start date of the synthetic calendar.
        #[arg(long, default_value = "2014-03-23")]
        start: NaiveDate,
        /// Turn off process and observation noise.
        #[arg(long)]
        noiseless: bool,
    },
    /// Fit the observation link by regression against latent states.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        /// truth.json from `simulate`, or a state_trajectory.csv whose
        /// posterior means serve as the latent states.
        #[arg(long)]
        latent: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the fitted `observation` section here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-summarize a snapshots.csv written by `fit --snapshots`.
    Summarize {
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated quantile probabilities.
        #[arg(long, value_delimiter = ',')]
        quantiles: Option<Vec<f64>>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Parses `argv` (including the program name) and runs it.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("kdpf: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Degeneracy { .. } => EXIT_DEGENERACY,
        _ => EXIT_FAILURE,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit {
            data,
            config,
            seed,
            particles,
            workers,
            out,
            snapshots,
            truth,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.filter.seed = s;
            }
            if let Some(j) = particles {
                cfg.filter.num_particles = j;
            }
            if let Some(w) = workers {
                cfg.filter.workers = w;
            }
            cfg.validate()?;
            let dataset = match data {
                Some(p) => parse_report_csv(p)?,
                None => guinea(),
            };
            let truth = truth.map(read_truth).transpose()?;
            fit(&dataset, &cfg, &out, snapshots, truth.as_ref())
        }
        Command::Simulate {
            days,
            seed,
            config,
            out,
            start,
            noiseless,
        } => {
            let cfg = load_config(config.as_deref())?;
            let noise = if noiseless {
                SimNoise {
                    process: false,
                    observation: false,
                }
            } else {
                SimNoise::default()
            };
            simulate_to(&cfg, days, seed, start, noise, &out)
        }
        Command::Calibrate {
            data,
            latent,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let dataset = parse_report_csv(&data)?;
            let states = latent_states(&latent, &dataset)?;
            let link = calibrate_link(&dataset.records, &states, &cfg.link())?;
            let text = serde_json::to_string_pretty(&ObservationConfig::from_link(&link)).expect("serializes");
            match out {
                Some(p) => fs::write(&p, text + "\n").map_err(|e| Error::io(p, e)),
                None => {
                    println!("{text}");
                    Ok(())
                }
            }
        }
        Command::Summarize {
            snapshots,
            config,
            quantiles,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let quantiles = quantiles.unwrap_or(cfg.summary.quantiles.clone());
            let file = File::open(&snapshots).map_err(|e| Error::io(&snapshots, e))?;
            let (clouds, epoch) = read_snapshots_csv(file)?;
            let summary = summarize(&clouds, &quantiles, cfg.filter.population, epoch)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_trajectories(&summary, &out)
        }
    }
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    seed: u64,
    num_particles: usize,
    discount: f64,
    shrinkage_a: f64,
    shrinkage_h: f64,
    reports: usize,
    min_ess: f64,
    total_param_projections: usize,
    total_state_projections: usize,
    log_evidence: f64,
    steps: &'a [StepReport],
}

/// Runs the filter and writes every output file into `out`.
pub fn fit(
    dataset: &ReportDataset,
    cfg: &RunConfig,
    out: &Path,
    snapshots: bool,
    truth: Option<&GroundTruth>,
) -> Result<()> {
    let options = RunOptions {
        quantiles: cfg.summary.quantiles.clone(),
        keep_clouds: snapshots,
    };
    let run = run_filter(dataset, &cfg.priors, &cfg.link(), &cfg.filter, &options)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_trajectories(&run.summary, out)?;

    let shrinkage = crate::kdpf::shrinkage_for(cfg.filter.shrinkage, cfg.filter.discount)?;
    let diagnostics = Diagnostics {
        seed: cfg.filter.seed,
        num_particles: cfg.filter.num_particles,
        discount: cfg.filter.discount,
        shrinkage_a: shrinkage.a,
        shrinkage_h: shrinkage.h,
        reports: run.steps.len(),
        min_ess: run.steps.iter().map(|s| s.ess).fold(f64::INFINITY, f64::min),
        total_param_projections: run.steps.iter().map(|s| s.param_projections).sum(),
        total_state_projections: run.steps.iter().map(|s| s.state_projections).sum(),
        log_evidence: run.steps.iter().map(|s| s.log_evidence).sum(),
        steps: &run.steps,
    };
    write_json(&out.join("diagnostics.json"), &diagnostics)?;

    if snapshots {
        let path = out.join("snapshots.csv");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_snapshots_csv(&run.clouds, Some(dataset.epoch), BufWriter::new(file))?;
    }
    if let Some(truth) = truth {
        let report = recovery_report(truth, &run.summary)?;
        write_json(&out.join("recovery.json"), &report)?;
    }
    Ok(())
}

pub fn write_trajectories(summary: &TrajectorySummary, out: &Path) -> Result<()> {
    let files: [(&str, &[Quantity]); 3] = [
        ("state_trajectory.csv", &Quantity::STATES),
        ("param_trajectory.csv", &Quantity::PARAMS),
        ("r0_trajectory.csv", &[Quantity::R0]),
    ];
    for (name, quantities) in files {
        let path = out.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        write_summary_csv(summary, Some(quantities), &mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Simulates with the configured prior means and midpoint state, writing
/// `reports.csv` and `truth.json`.
pub fn simulate_to(cfg: &RunConfig, days: i64, seed: u64, start: NaiveDate, noise: SimNoise, out: &Path) -> Result<()> {
    cfg.validate()?;
    let spec = SimulationSpec {
        true_params: cfg.priors.param_means(),
        x0: cfg.priors.state_midpoint(),
        horizon_days: days,
        report_days: seeded_report_days(days, seed),
        link: cfg.link(),
        epoch: start,
        noise,
    };
    let run = simulate(&spec, seed)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    run.reports.save(out.join("reports.csv"))?;
    write_json(&out.join("truth.json"), &run.truth())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        row: e.line(),
        message: format!("{}: {e}", path.display()),
    })
}

/// Latent states on each report day, from a truth file or from the
/// posterior means of a state trajectory.
fn latent_states(path: &Path, dataset: &ReportDataset) -> Result<Vec<CompartmentState>> {
    let lookup = |day: i64, get: &dyn Fn(i64) -> Option<CompartmentState>| {
        get(day).ok_or_else(|| Error::Mismatch {
            context: "calibrate".into(),
            message: format!("no latent state for report day {day}"),
        })
    };
    if path.extension().is_some_and(|e| e == "json") {
        let truth = read_truth(path)?;
        let get = |d: i64| usize::try_from(d).ok().and_then(|d| truth.latent.get(d)).copied();
        dataset.records.iter().map(|r| lookup(r.day_index, &get)).collect()
    } else {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let summary = read_summary_csv(file)?;
        let get = |d: i64| {
            let day = summary.days.iter().find(|s| s.day_index == d)?;
            let m = |q| day.get(q).map(|s| s.mean);
            Some(CompartmentState::new(
                m(Quantity::C)?,
                m(Quantity::E)?,
                m(Quantity::I)?,
                m(Quantity::R)?,
                m(Quantity::D)?,
            ))
        };
        dataset.records.iter().map(|r| lookup(r.day_index, &get)).collect()
    }
}
