//! Estimator-driven POD-Greedy for two subdomain layouts, printed as the
//! decay CSV.

use lrbms::config::{build_problem, ProblemConfig};
use lrbms::greedy::{run_greedy, write_decay_csv, GreedyRecord, GreedySettings};
use lrbms::reduction::Reductor;

pub fn run_example() -> lrbms::Result<Vec<(Vec<GreedyRecord>, GreedyRecord)>> {
    let mut runs = Vec::new();
    for subdomains in [[1, 1], [4, 2]] {
        let mut config = ProblemConfig::default();
        config.domain.fine_cells = [32, 8];
        config.domain.subdomains = subdomains;
        config.greedy.training = 6;
        config.greedy.test = 4;
        config.greedy.max_iterations = 4;
        let disc = build_problem(&config)?;
        let reductor = Reductor::new(&disc, config.anchors().mu_tilde)?;
        let settings = GreedySettings {
            training: config.training_set()?,
            test: config.test_set(),
            max_iterations: config.greedy.max_iterations,
            tolerance: config.greedy.tolerance,
            anchors: config.anchors(),
        };
        let (state, last) = run_greedy(&reductor, reductor.project(reductor.initial_bases())?, settings)?;
        let header = format!("subdomains {}x{}", subdomains[0], subdomains[1]);
        let mut csv = Vec::new();
        write_decay_csv(&mut csv, &header, &state.log, &last)?;
        print!("{}", String::from_utf8_lossy(&csv));
        runs.push((state.log, last));
    }
    Ok(runs)
}

#[allow(dead_code)]
fn main() -> lrbms::Result<()> {
    run_example().map(|_| ())
}
