use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lrbms::config::{EstimatorSelection, Mode, ProblemConfig};
use lrbms::experiment::run_experiment;

#[derive(Parser)]
#[command(version, about = "Certified localized reduced basis runs for parametric parabolic diffusion")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Truth solves at `parameters.solve`, snapshots written as CSV.
    Solve(Flags),
    /// Reduced solves with estimator breakdowns on the initial bases.
    Certify(Flags),
    /// POD-Greedy with a decay report.
    Greedy(Flags),
    /// Greedy followed by certification of the final model.
    Full(Flags),
}

#[derive(ValueEnum, Clone, Copy)]
enum EstimatorArg {
    Oracle,
    Surrogate,
    Both,
}

#[derive(clap::Args, Clone)]
struct Flags {
    /// TOML config; defaults are used for absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (mode, flags) = match cli.verb {
        Verb::Solve(f) => (Mode::TruthOnly, f),
        Verb::Certify(f) => (Mode::Certify, f),
        Verb::Greedy(f) => (Mode::Greedy, f),
        Verb::Full(f) => (Mode::Full, f),
    };
    let result = load(&flags).and_then(|mut config| {
        config.mode = mode;
        config.validate()?;
        run_experiment(&config)
    });
    match result {
        Ok(report) => {
            println!("wrote {} files to {}", report.manifest.files.len() + 1, report.output_dir.display());
            if let Some((log, last)) = &report.greedy {
                println!(
                    "greedy: {} iterations, final dim {}, max estimate train {:.4e}, test {:.4e}",
                    log.len(),
                    last.dim,
                    last.eta_train_max,
                    last.eta_test_max
                );
            }
            for c in &report.certificates {
                let totals: Vec<String> = c.estimates.iter().map(|(m, b)| format!("{m} {:.4e}", b.total)).collect();
                println!("mu = {}: error {:.4e}, {}", c.mu, c.truth_error, totals.join(", "));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(flags: &Flags) -> lrbms::Result<ProblemConfig> {
    let mut config = match &flags.config {
        Some(path) => ProblemConfig::load(path)?,
        None => ProblemConfig::default(),
    };
    if let Some(out) = &flags.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = flags.seed {
        config.seed = seed;
    }
    if let Some(e) = flags.estimator {
        config.estimator.mode = match e {
            EstimatorArg::Oracle => EstimatorSelection::Oracle,
            EstimatorArg::Surrogate => EstimatorSelection::Surrogate,
            EstimatorArg::Both => EstimatorSelection::Both,
        };
    }
    Ok(config)
}
