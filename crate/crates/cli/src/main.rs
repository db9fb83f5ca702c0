use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use he_sim_core::config::ExperimentConfig;
use he_sim_core::io::{write_artifacts, ArtifactKind};
use he_sim_core::pipeline::{self, RunOutput};
use he_sim_core::Error;

/// Simulated hybrid polarization-OAM entanglement experiments.
#[derive(Parser, Debug)]
#[command(name = "he-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides `detector.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Validate the configuration, print the resolved parameters and exit.
    #[arg(long, global = true)]
    dry_run: bool,

    /// Only write these artifact kinds (repeat or comma-separate).
    #[arg(long, global = true, value_enum, value_delimiter = ',')]
    format: Vec<Format>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Polarization-projected images of the vector-vortex pump.
    PumpGallery,
    /// Fringe visibilities, CHSH and tomography of the Gaussian-pumped source.
    PolarizationBell,
    /// Heralded petal images, angular histograms and the hybrid witness.
    HybridWitness,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Pgm,
    Csv,
    Json,
}

impl From<Format> for ArtifactKind {
    fn from(f: Format) -> Self {
        match f {
            Format::Pgm => ArtifactKind::Pgm,
            Format::Csv => ArtifactKind::Csv,
            Format::Json => ArtifactKind::Json,
        }
    }
}

fn thread_pool() -> Result<(), Error> {
    let Ok(v) = std::env::var("HE_SIM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("HE_SIM_THREADS = {v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<(), Error> {
    thread_pool()?;
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
            Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let resolved = cfg.resolved()?;
    if cli.dry_run {
        println!("{}", serde_json::to_string_pretty(&resolved)?);
        return Ok(());
    }
    let RunOutput { report, artifacts } = match cli.command {
        Command::PumpGallery => pipeline::pump_gallery(&cfg)?,
        Command::PolarizationBell => pipeline::polarization_bell(&cfg)?,
        Command::HybridWitness => pipeline::hybrid_witness(&cfg)?,
    };
    let kinds: Vec<ArtifactKind> = cli.format.iter().map(|&f| f.into()).collect();
    let selected: Vec<_> = artifacts
        .into_iter()
        .filter(|a| kinds.is_empty() || kinds.contains(&a.kind))
        .collect();
    write_artifacts(&cli.out, &selected)?;

    for a in &selected {
        println!("wrote {}", cli.out.join(&a.name).display());
    }
    if let Some(s) = report.chsh {
        println!("S = {:.4} +/- {:.4}", s.value, s.sigma.unwrap_or(f64::NAN));
    }
    if let Some(f) = report.fidelity {
        println!("fidelity = {f:.4}");
    }
    if let Some(w) = report.witness {
        println!("W = {:.4} +/- {:.4}", w.value, w.sigma.unwrap_or(f64::NAN));
    }
    let v = report.violation_sigmas();
    if let Some(x) = v.chsh.or(v.witness) {
        println!("violation = {x:.1} sigma");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("he-sim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
