//! Command-line front end: `run`, `fit`, `calibrate` and `report`.

pub mod config;
pub mod experiments;
pub mod table;

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::analysis::{frequency_ratio, pair_loss_probability, renormalized_fidelity, FidelityReport, RabiFit};
use crate::error::{Error, Result};
use config::{ExperimentConfig, ExperimentKind};

/// Exit status for malformed configs, tables or arguments.
pub const EXIT_INPUT: i32 = 2;
/// Exit status for numerical failures (invariant violations, failed fits).
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rydsim", version, about = "Two-atom Rydberg blockade simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Overrides {
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the number of Monte Carlo shots.
    #[arg(long)]
    pub shots: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the configured experiment and write its scan table as CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV (defaults to `output` in the config, else stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fit a scan table: Rabi fit for time scans, Bell fidelity for parity scans.
    Fit {
        /// Config the table was produced with.
        #[arg(long)]
        config: PathBuf,
        /// Scan CSV (defaults to `output` in the config).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Single-atom Rydberg scan to compare against, reported as a frequency ratio.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Report file (defaults to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search noise parameters that reproduce target outcome probabilities.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        /// Where to write the calibrated config (defaults to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Loss and fidelity arithmetic: p → pair loss → renormalized fidelity.
    Report {
        /// Config with a `[report]` section.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Per-atom loss probability.
        #[arg(long)]
        loss_prob: Option<f64>,
        /// Measured fidelity to renormalize.
        #[arg(long)]
        fidelity: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path, overrides: Option<&Overrides>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = overrides {
        if let Some(seed) = o.seed {
            cfg.seed = seed;
        }
        if let Some(shots) = o.shots {
            cfg.shots = shots;
        }
        cfg.validate()?;
    }
    Ok(cfg)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|e| Error::Config(format!("cannot create {}: {e}", p.display())))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn read_table(path: &Path) -> Result<Vec<table::ScanRow>> {
    let file = File::open(path).map_err(|e| Error::Csv(format!("cannot open {}: {e}", path.display())))?;
    table::read_rows(BufReader::new(file)).map_err(|e| match e {
        Error::Csv(msg) => Error::Csv(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn write_rabi(out: &mut dyn Write, prefix: &str, fit: &RabiFit) -> io::Result<()> {
    writeln!(out, "{prefix}frequency_hz = {:.9e}", fit.frequency_hz())?;
    writeln!(out, "{prefix}contrast = {:.6}", fit.contrast)?;
    writeln!(out, "{prefix}decay = {:.6}", fit.decay)?;
    writeln!(out, "{prefix}offset = {:.6}", fit.offset)?;
    writeln!(out, "{prefix}residual_rms = {:.3e}", fit.residual_rms)?;
    writeln!(out, "{prefix}identifiable = {}", fit.identifiable)?;
    writeln!(out, "{prefix}iterations = {}", fit.iterations)
}

fn write_fidelity(out: &mut dyn Write, r: &FidelityReport) -> io::Result<()> {
    writeln!(out, "fidelity = {:.6}", r.fidelity)?;
    if let (Some(s), Some(f)) = (r.pair_survival, r.fidelity_renormalized) {
        writeln!(out, "pair_survival = {s:.6}")?;
        writeln!(out, "fidelity_renormalized = {f:.6}")?;
    }
    writeln!(out, "p_down_down = {:.6}", r.p_down_down)?;
    writeln!(out, "p_up_up = {:.6}", r.p_up_up)?;
    writeln!(out, "single_sum = {:.6}", r.single_sum)?;
    writeln!(out, "coherence = {:.6}", r.coherence)?;
    writeln!(out, "cosine_series = [{:.6}, {:.6}, {:.6}]", r.a, r.b, r.c2)?;
    writeln!(out, "# {}", FidelityReport::ASSUMPTION)
}

fn cmd_run(config: &Path, out: Option<&Path>, overrides: &Overrides) -> Result<()> {
    let cfg = load_config(config, Some(overrides))?;
    let rows = experiments::run_experiment(&cfg)?;
    let target = out.map(Path::to_path_buf).or_else(|| cfg.output.clone());
    table::write_rows(open_output(target.as_deref())?, &rows)
}

fn cmd_fit(config: &Path, input: Option<&Path>, reference: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config, None)?;
    let input = input
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Config("no input table: pass --input or set `output` in the config".into()))?;
    let rows = read_table(&input)?;
    let mut w = open_output(out)?;
    writeln!(w, "experiment = {}", cfg.experiment.name())?;
    match cfg.experiment {
        ExperimentKind::EntangleParity => {
            if reference.is_some() {
                return Err(Error::Config("--reference applies to time scans only".into()));
            }
            write_fidelity(&mut *w, &experiments::fit_parity_scan(&cfg, &rows)?)?;
        }
        ExperimentKind::Calibrate => return Err(Error::Config("calibrate configs have no scan table to fit".into())),
        kind => {
            let fit = experiments::fit_time_scan(kind, &rows)?;
            write_rabi(&mut *w, "", &fit)?;
            if let Some(path) = reference {
                let single = experiments::fit_time_scan(ExperimentKind::RydbergSingle, &read_table(path)?)?;
                write_rabi(&mut *w, "reference_", &single)?;
                writeln!(w, "frequency_ratio = {:.6}", frequency_ratio(&fit, &single))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_calibrate(config: &Path, out: Option<&Path>, overrides: &Overrides) -> Result<()> {
    let mut cfg = load_config(config, Some(overrides))?;
    if cfg.calibrate.is_none() {
        return Err(Error::Config("field `calibrate`: section required".into()));
    }
    if let Some(shots) = overrides.shots {
        cfg.calibrate.as_mut().expect("checked").shots = shots;
    }
    let result = experiments::calibrate(&cfg, |stage, best| {
        let p = &best.probs;
        eprintln!(
            "calibrate [{stage}] objective {:.3e}  (P11, P01, P10, P00) = ({:.4}, {:.4}, {:.4}, {:.4})",
            best.objective, p.p11, p.p01, p.p10, p.p00
        );
    })?;
    let text = experiments::calibrated_config_text(&cfg, &result)?;
    let mut w = open_output(out)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn cmd_report(config: Option<&Path>, loss_prob: Option<f64>, fidelity: Option<f64>, out: Option<&Path>) -> Result<()> {
    let defaults = match config {
        Some(path) => load_config(path, None)?.report.unwrap_or_default(),
        None => Default::default(),
    };
    let p = loss_prob.unwrap_or(defaults.loss_prob);
    let f = fidelity.unwrap_or(defaults.fidelity);
    let pair_loss = pair_loss_probability(p).map_err(|e| Error::Config(format!("--loss-prob: {e}")))?;
    let renorm = renormalized_fidelity(f, pair_loss).map_err(|e| Error::Config(format!("--loss-prob: {e}")))?;
    let mut w = open_output(out)?;
    writeln!(w, "loss_prob = {p:.4}")?;
    writeln!(w, "pair_loss_prob = {pair_loss:.4}")?;
    writeln!(w, "pair_survival = {:.4}", 1.0 - pair_loss)?;
    writeln!(w, "fidelity = {f:.4}")?;
    writeln!(w, "fidelity_renormalized = {renorm:.3}")?;
    w.flush()?;
    Ok(())
}

/// Worker threads from `RYDSIM_THREADS`; results do not depend on it.
fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RYDSIM_THREADS") {
        let n: usize = v.parse().map_err(|_| Error::Config(format!("RYDSIM_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Run { config, out, overrides } => cmd_run(config, out.as_deref(), overrides),
        Command::Fit { config, input, reference, out } => {
            cmd_fit(config, input.as_deref(), reference.as_deref(), out.as_deref())
        }
        Command::Calibrate { config, out, overrides } => cmd_calibrate(config, out.as_deref(), overrides),
        Command::Report { config, loss_prob, fidelity, out } => {
            cmd_report(config.as_deref(), *loss_prob, *fidelity, out.as_deref())
        }
    }
}

/// Runs the CLI and maps the outcome to a process exit status.
pub fn main_with_args() -> i32 {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("rydsim: error: {e}");
            if e.is_input_error() {
                EXIT_INPUT
            } else {
                EXIT_NUMERICAL
            }
        }
    }
}
