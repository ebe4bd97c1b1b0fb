//! Truth solves of the channel problem at a few parameters.
//!
//! Prints the DG energy norm of the final snapshot and the mean of the
//! solution over time, for a coarse version of the default setup.

use lrbms::config::{build_problem, ProblemConfig};
use lrbms::estimator::NormEvaluator;

pub fn run_example() -> lrbms::Result<Vec<(f64, f64)>> {
    let mut config = ProblemConfig::default();
    config.domain.fine_cells = [40, 8];
    config.domain.subdomains = [4, 1];
    let disc = build_problem(&config)?;
    let norms = NormEvaluator::from_discretization(&disc);
    println!("truth dimension {}, {} steps up to T = {}", disc.dim(), config.time.steps, config.time.t_end);

    let ones = nalgebra::DVector::from_element(disc.dim(), 1.0);
    let area = disc.ops.mass.mul_vec(&ones).sum();
    let mut finals = Vec::new();
    for &mu in &config.parameters.solve {
        let traj = disc.solve(mu)?;
        let last = &traj.snapshots[traj.num_steps()];
        let energy = norms.dg_norm_squared(last, mu)?.sqrt();
        let mean = disc.ops.mass.mul_vec(last).sum() / area;
        println!("mu = {mu:<4} |||p(T)||| = {energy:.5e}  mean p(T) = {mean:+.5e}");
        finals.push((mu, energy));
    }
    Ok(finals)
}

#[allow(dead_code)]
fn main() -> lrbms::Result<()> {
    run_example().map(|_| ())
}
