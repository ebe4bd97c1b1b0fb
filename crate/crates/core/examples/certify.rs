//! Certified reduced solves: surrogate and oracle estimates next to the
//! true error, on the initial local bases `{1, f|_T}`.

use lrbms::config::{build_problem, ProblemConfig};
use lrbms::estimator::{space_time_error, total_estimate, ApproximationSpace, Indicator, NormEvaluator};
use lrbms::reduction::Reductor;
use lrbms::truth::EllipticReconstructor;

pub struct Row {
    pub mu: f64,
    pub error: f64,
    pub surrogate: f64,
    pub oracle: f64,
}

pub fn run_example() -> lrbms::Result<Vec<Row>> {
    let mut config = ProblemConfig::default();
    config.domain.fine_cells = [40, 8];
    config.domain.subdomains = [4, 1];
    let disc = build_problem(&config)?;
    let anchors = config.anchors();
    let reductor = Reductor::new(&disc, anchors.mu_tilde)?;
    let model = reductor.project(reductor.initial_bases())?;
    let error_norm = NormEvaluator::from_discretization(&disc).dg_matrix(anchors.mu_bar)?;
    let norms = NormEvaluator::from_discretization(&disc);
    let space = ApproximationSpace::reduced(model.basis_matrix(), &disc.ops.mass);
    println!("reduced dimension {} (bases {:?})", model.dim(), model.basis_sizes());

    let mut rows = Vec::new();
    for &mu in &config.parameters.solve {
        let (reduced, surrogate) = model.solve_and_estimate(mu, anchors)?;
        let lifted = model.lift_trajectory(&reduced)?;
        let error = space_time_error(&error_norm, &disc.solve(mu)?, &lifted)?;
        let reconstructor = EllipticReconstructor::new(&disc, mu, None)?;
        let oracle = total_estimate(
            &disc,
            &space,
            &lifted,
            mu,
            anchors,
            &Indicator::Oracle { reconstructor: &reconstructor, norms: &norms },
        )?;
        println!(
            "mu = {mu:<4} error {error:.3e}  surrogate {:.3e} (eff {:.1})  oracle {:.3e} (eff {:.1})",
            surrogate.total,
            surrogate.total / error,
            oracle.total,
            oracle.total / error
        );
        println!(
            "          terms: nc {:.2e}  dt-nc {:.2e}  ell {:.2e}  R_T {:.2e}",
            surrogate.nonconformity_norm,
            surrogate.nonconformity_time_derivative,
            surrogate.elliptic_indicator,
            surrogate.time_residual_norm
        );
        rows.push(Row { mu, error, surrogate: surrogate.total, oracle: oracle.total });
    }
    Ok(rows)
}

#[allow(dead_code)]
fn main() -> lrbms::Result<()> {
    run_example().map(|_| ())
}
