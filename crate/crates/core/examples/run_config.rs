//! Runs a TOML experiment config end to end, the same path the `lrbms`
//! binary takes. Pass a config path, or the bundled small config is used.

use std::path::PathBuf;

use lrbms::config::ProblemConfig;
use lrbms::experiment::{run_experiment, Report};

pub fn run_example(config: Option<PathBuf>, out: PathBuf) -> lrbms::Result<Report> {
    let path = config.unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs/small.toml"));
    let mut config = ProblemConfig::load(&path)?;
    config.output_dir = out;
    let report = run_experiment(&config)?;
    println!("{:?} run written to {}", report.manifest.mode, report.output_dir.display());
    for file in &report.manifest.files {
        println!("  {}  {}", &file.sha256[..12], file.name);
    }
    for c in &report.certificates {
        for (mode, b) in &c.estimates {
            println!("mu = {:<4} {mode}: estimate {:.3e}, error {:.3e}", c.mu, b.total, c.truth_error);
        }
    }
    Ok(report)
}

#[allow(dead_code)]
fn main() -> lrbms::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args.next().filter(|a| !a.is_empty()).map(PathBuf::from);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("lrbms-run"));
    run_example(config, out).map(|_| ())
}
