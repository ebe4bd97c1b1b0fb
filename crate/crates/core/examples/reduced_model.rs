//! Offline/online split: build a reduced model once, store it, reload it and
//! evaluate solutions and estimates without touching the truth space.

use std::time::Instant;

use lrbms::config::{build_problem, ProblemConfig};
use lrbms::reduction::{ReducedModel, Reductor};

pub fn run_example() -> lrbms::Result<(ReducedModel, ReducedModel)> {
    let mut config = ProblemConfig::default();
    config.domain.fine_cells = [40, 8];
    config.domain.subdomains = [4, 2];
    let disc = build_problem(&config)?;
    let anchors = config.anchors();

    let start = Instant::now();
    let reductor = Reductor::new(&disc, anchors.mu_tilde)?;
    let mut model = reductor.project(reductor.initial_bases())?;
    // enrich every subdomain with the final truth snapshot at the middle parameter
    let snapshot = disc.solve(0.5)?.snapshots.pop().expect("at least one snapshot");
    let candidates = model
        .bases
        .iter()
        .map(|b| vec![snapshot.rows(b.dofs.start, b.dofs.len()).into_owned()])
        .collect();
    reductor.extend(&mut model, candidates)?;
    println!("offline: truth dim {} -> reduced dim {} in {:.2?}", disc.dim(), model.dim(), start.elapsed());

    let path = std::env::temp_dir().join(format!("lrbms-example-{}.lrbms", std::process::id()));
    model.save(std::fs::File::create(&path)?)?;
    let loaded = ReducedModel::load(std::fs::File::open(&path)?)?;
    std::fs::remove_file(&path)?;

    let start = Instant::now();
    for mu in [0.15, 0.4, 0.65, 0.9] {
        let (_, est) = loaded.solve_and_estimate(mu, anchors)?;
        println!("mu = {mu:<4} estimate {:.4e}", est.total);
    }
    println!("online: 4 solves with estimates in {:.2?}", start.elapsed());
    Ok((model, loaded))
}

#[allow(dead_code)]
fn main() -> lrbms::Result<()> {
    run_example().map(|_| ())
}
