mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use copula_conformal::dataio::{load_csv, synth_dataset};
use copula_conformal::eval::{
    run_experiment, summary_table, validity_svg, volume_boxplot_svg, write_curves_csv, ExperimentReport,
};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "ccmtr", version, about = "Copula-calibrated conformal multi-target regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a cross-validated experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Folds evaluated in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides the config seed and `CC_SEED`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset with correlated targets as CSV.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        dependence: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        features: usize,
    },
    /// Print the summary table of a report.json.
    Report { path: PathBuf },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn cmd_run(config: PathBuf, jobs: usize, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(&config).map_err(Failure::Config)?;
    if let Ok(s) = std::env::var("CC_SEED") {
        cfg.seed = s
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("CC_SEED must be an unsigned integer, got {s:?}")))?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    cfg.validate(jobs).map_err(Failure::Config)?;

    let data = load_csv(&cfg.dataset, &cfg.targets)
        .map_err(|e| Failure::Config(format!("cannot load dataset {}: {e}", cfg.dataset.display())))?;
    let mut report = run_experiment(&data, &cfg.settings(jobs)).map_err(Failure::runtime)?;
    report.config = Some(serde_json::to_value(&cfg).map_err(Failure::runtime)?);

    let plots = cfg.output_dir.join("plots");
    fs::create_dir_all(&plots).map_err(Failure::runtime)?;
    let json = File::create(cfg.output_dir.join("report.json")).map_err(Failure::runtime)?;
    serde_json::to_writer_pretty(BufWriter::new(json), &report).map_err(Failure::runtime)?;
    let csv = File::create(cfg.output_dir.join("curves.csv")).map_err(Failure::runtime)?;
    write_curves_csv(&report, BufWriter::new(csv)).map_err(Failure::runtime)?;
    fs::write(plots.join("validity.svg"), validity_svg(&report)).map_err(Failure::runtime)?;
    fs::write(plots.join("volumes.svg"), volume_boxplot_svg(&report)).map_err(Failure::runtime)?;

    print!("{}", summary_table(&report));
    eprintln!("wrote results to {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_synth(
    n: usize,
    m: usize,
    dependence: f64,
    seed: u64,
    out: PathBuf,
    features: usize,
) -> Result<(), Failure> {
    let data = synth_dataset(n, m, features, dependence, seed).map_err(|e| Failure::Config(e.to_string()))?;
    let file = File::create(&out).map_err(Failure::runtime)?;
    data.write_csv(BufWriter::new(file)).map_err(Failure::runtime)
}

fn cmd_report(path: PathBuf) -> Result<(), Failure> {
    let text = fs::read_to_string(&path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let report: ExperimentReport =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("malformed report: {e}")))?;
    print!("{}", summary_table(&report));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, jobs, seed, out } => cmd_run(config, jobs, seed, out),
        Command::Synth {
            n,
            m,
            dependence,
            seed,
            out,
            features,
        } => cmd_synth(n, m, dependence, seed, out, features),
        Command::Report { path } => cmd_report(path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
