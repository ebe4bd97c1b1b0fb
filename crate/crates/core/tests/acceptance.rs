//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line; the process fails if any criterion does.

mod common;

use std::time::{Duration, Instant};

use lrbms::config::build_problem;
use lrbms::estimator::{
    c_constant, min_theta_constants, space_time_error, total_estimate, trajectory_terms, Anchors,
    ApproximationSpace, Indicator, IndicatorMode, NormEvaluator, B_CONTINUITY,
};
use lrbms::greedy::{run_greedy, GreedySettings};
use lrbms::reduction::{gram_schmidt, LocalBasis, ReducedModel, Reductor};
use lrbms::space::DgFunction;
use lrbms::truth::{elliptic_reconstruction, time_residual, Discretization, EllipticReconstructor, Trajectory};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Criterion = fn() -> lrbms::Result<Outcome>;

fn main() {
    let criteria: [(u32, &str, Duration, Criterion); 9] = [
        (1, "elliptic reconstruction Galerkin property", Duration::from_secs(10), galerkin_property),
        (2, "implicit Euler residual closed form", Duration::from_secs(10), residual_closed_form),
        (3, "reliability of the oracle estimate", Duration::from_secs(120), reliability),
        (4, "full-basis exactness", Duration::from_secs(30), full_basis_exactness),
        (5, "offline/online identity", Duration::from_secs(30), offline_online_identity),
        (6, "norm equivalence", Duration::from_secs(5), norm_equivalence),
        (7, "Oswald operator", Duration::from_secs(5), oswald_operator),
        (8, "greedy decay", Duration::from_secs(600), greedy_decay),
        (9, "constants", Duration::from_secs(1), constants),
    ];
    let mut failures = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed <= budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "acceptance {id} [{}] {name}: {detail} ({:.2} s, budget {} s)",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

/// Orthogonality of `b(E(q), v) − (B(q) − Π̃f + f, v)` to every conforming hat `v`.
fn galerkin_property() -> lrbms::Result<Outcome> {
    // moderate contrast keeps the load vector near unit size; the check is absolute
    let mut config = unit_square_config([4, 4], [2, 1]);
    config.field.kappa_contrast = 10.0;
    config.field.channel_contrast = 10.0;
    let disc = build_problem(&config)?;
    let hats = interior_hats(&disc.space);
    let mass = disc.ops.mass.to_dense();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for mu in [0.1, 0.5, 0.9] {
        let rec = EllipticReconstructor::new(&disc, mu, None)?;
        let a = disc.operator_at(mu)?;
        for _ in 0..3 {
            let q = random_vector(disc.dim(), &mut rng);
            let e = elliptic_reconstruction(&DgFunction::new(q.clone()), &disc, mu, &rec)?;
            // Π̃ is the identity on the truth space, so the datum is B(q).
            let datum = dense_solve(&mass, &a.mul_vec(&q));
            let ae = a.mul_vec(&e.coefficients);
            let md = &mass * &datum;
            for h in &hats {
                worst = worst.max((h.dot(&ae) - h.dot(&md)).abs());
                scale = scale.max(h.dot(&md).abs());
            }
        }
    }
    Ok(outcome(worst <= 1e-10, format!("max residual {worst:.2e} (tol 1e-10), load scale {scale:.2e}")))
}

/// Closed-form residual versus the direct residual `∂_t p + B p(t) − Π̃ f`.
fn residual_closed_form() -> lrbms::Result<Outcome> {
    let disc = build_problem(&unit_square_config([4, 4], [2, 1]))?;
    let mu = 0.4;
    let traj = disc.solve(mu)?;
    let a = disc.operator_at(mu)?;
    let mass = disc.ops.mass.to_dense();
    let dt = traj.dt;
    let direct = |n: usize, t: f64| -> DVector<f64> {
        let s = (t - (n - 1) as f64 * dt) / dt;
        let p = &traj.snapshots[n - 1] * (1.0 - s) + &traj.snapshots[n] * s;
        let dpdt = (&traj.snapshots[n] - &traj.snapshots[n - 1]) / dt;
        dense_solve(&mass, &(&mass * dpdt + a.mul_vec(&p) - &disc.rhs))
    };
    // both residuals are affine in t on each interval, so Simpson is exact for
    // the squared norms of the residual and of the difference
    let mut simpson = 0.0;
    let mut difference = 0.0;
    for n in 1..=traj.num_steps() {
        let t0 = (n - 1) as f64 * dt;
        let sq = |v: &DVector<f64>| v.dot(&(&mass * v));
        let mut vals = [0.0; 3];
        let mut diffs = [0.0; 3];
        let mid = time_residual(&traj, &a, &disc.mass_inverse, t0 + 0.5 * dt)?.coefficients;
        for (k, frac) in [0.0, 0.5, 1.0].into_iter().enumerate() {
            let t = t0 + frac * dt;
            let r_direct = direct(n, t);
            // the closed form is linear in t, so its right limit at t0 is twice the midpoint value
            let r_closed = if k == 0 {
                &mid * 2.0
            } else {
                time_residual(&traj, &a, &disc.mass_inverse, t)?.coefficients
            };
            vals[k] = sq(&r_direct);
            diffs[k] = sq(&(&r_closed - &r_direct));
        }
        simpson += dt / 6.0 * (vals[0] + 4.0 * vals[1] + vals[2]);
        difference += dt / 6.0 * (diffs[0] + 4.0 * diffs[1] + diffs[2]);
    }
    let pointwise = (difference / simpson).sqrt();
    let simpson = simpson.sqrt();
    let terms = trajectory_terms(
        &disc,
        &ApproximationSpace::Full,
        &traj,
        mu,
        &Indicator::Surrogate(&lrbms::estimator::SurrogateWeights::new(&disc, 0.1)?),
    )?;
    let norm_rel = rel(terms.time_residual_norm(), simpson);
    Ok(outcome(
        pointwise <= 1e-9 && norm_rel <= 1e-9,
        format!("residual rel L2(0,T;L2) {pointwise:.2e}, norm rel {norm_rel:.2e} (tol 1e-9)"),
    ))
}

/// Local bases of exactly `size` vectors: `{1, f|_T}` completed by truth snapshots.
fn bases_of_size(reductor: &Reductor, disc: &Discretization, size: usize) -> lrbms::Result<Vec<LocalBasis>> {
    let snapshots: Vec<DVector<f64>> = [0.55, 0.1, 0.9]
        .iter()
        .map(|&mu| disc.solve(mu))
        .collect::<lrbms::Result<Vec<Trajectory>>>()?
        .into_iter()
        .flat_map(|t| [t.snapshots[t.num_steps()].clone(), t.snapshots[2].clone()])
        .collect();
    let mut out = Vec::new();
    for mut b in reductor.initial_bases() {
        let g = reductor.local_product(b.subdomain);
        let mut candidates = b.vectors.clone();
        candidates.extend(snapshots.iter().map(|s| s.rows(b.dofs.start, b.dofs.len()).into_owned()));
        b.vectors = gram_schmidt(&candidates, &g);
        if b.vectors.len() < size {
            return Err(lrbms::Error::Numerical("not enough independent snapshots".into()));
        }
        b.vectors.truncate(size);
        out.push(b);
    }
    Ok(out)
}

/// Prolongs a coarse-grid trajectory in space and interpolates it linearly
/// onto a time grid with `ratio` times as many steps.
fn to_reference(traj: &Trajectory, transfer: &lrbms::linalg::SparseMatrix, ratio: usize) -> Trajectory {
    let fine: Vec<DVector<f64>> = traj.snapshots.iter().map(|s| transfer.mul_vec(s)).collect();
    let mut snapshots = vec![fine[0].clone()];
    for n in 1..fine.len() {
        for k in 1..=ratio {
            let s = k as f64 / ratio as f64;
            snapshots.push(&fine[n - 1] * (1.0 - s) + &fine[n] * s);
        }
    }
    Trajectory {
        dt: traj.dt / ratio as f64,
        snapshots,
    }
}

fn reliability() -> lrbms::Result<Outcome> {
    let disc = build_problem(&unit_square_config([8, 8], [2, 1]))?;
    let anchors = Anchors::uniform(0.1);
    let reductor = Reductor::new(&disc, anchors.mu_tilde)?;
    let model = reductor.project(bases_of_size(&reductor, &disc, 3)?)?;
    let (fine, transfer) = disc.refined(40)?;
    let fine_norms = NormEvaluator::from_discretization(&fine);
    let error_norm = fine_norms.dg_matrix(anchors.mu_bar)?;
    let space = ApproximationSpace::reduced(model.basis_matrix(), &disc.ops.mass);
    let mut worst_ratio = f64::INFINITY;
    let mut details = Vec::new();
    for mu in [0.1, 0.55, 0.9] {
        let p_ref = fine.solve(mu)?;
        let lifted = model.lift_trajectory(&model.solve(mu)?)?;
        let error = space_time_error(&error_norm, &p_ref, &to_reference(&lifted, &transfer, 4))?;
        let rec = EllipticReconstructor::new(&fine, mu, Some(transfer.clone()))?;
        let eta = total_estimate(
            &disc,
            &space,
            &lifted,
            mu,
            anchors,
            &Indicator::Oracle {
                reconstructor: &rec,
                norms: &fine_norms,
            },
        )?
        .total;
        worst_ratio = worst_ratio.min(eta / error);
        details.push(format!("mu {mu}: eta {eta:.3e} / error {error:.3e}"));
    }
    Ok(outcome(
        worst_ratio >= 1.0,
        format!("min eta/error {worst_ratio:.2} (need >= 1); {}", details.join("; ")),
    ))
}

fn full_basis_exactness() -> lrbms::Result<Outcome> {
    let disc = build_problem(&unit_square_config([8, 8], [2, 1]))?;
    let anchors = Anchors::uniform(0.1);
    let reductor = Reductor::new(&disc, anchors.mu_tilde)?;
    let model = reductor.project(reductor.full_bases())?;
    if model.dim() != disc.dim() {
        return Ok(outcome(false, format!("full basis has dimension {} of {}", model.dim(), disc.dim())));
    }
    let mut snap: f64 = 0.0;
    let mut terms: f64 = 0.0;
    for mu in [0.1, 0.55, 0.9] {
        let truth = disc.solve(mu)?;
        let reduced = model.solve(mu)?;
        let lifted = model.lift_trajectory(&reduced)?;
        for (p, q) in truth.snapshots.iter().zip(&lifted.snapshots) {
            let d = p - q;
            let norm = disc.ops.mass.quadratic(p).sqrt();
            if norm > 0.0 {
                snap = snap.max(disc.ops.mass.quadratic(&d).sqrt() / norm);
            } else {
                snap = snap.max(disc.ops.mass.quadratic(&d).sqrt());
            }
        }
        let online = model.online_estimate(&reduced, mu, anchors, IndicatorMode::Surrogate)?;
        let direct = total_estimate(
            &disc,
            &ApproximationSpace::Full,
            &truth,
            mu,
            anchors,
            &Indicator::Surrogate(reductor.weights()),
        )?;
        for (a, b) in [
            (online.time_residual_norm, direct.time_residual_norm),
            (online.nonconformity_norm, direct.nonconformity_norm),
            (online.nonconformity_time_derivative, direct.nonconformity_time_derivative),
        ] {
            terms = terms.max(rel(a, b));
        }
    }
    Ok(outcome(
        snap <= 1e-10 && terms <= 1e-12,
        format!("snapshot rel L2 {snap:.2e} (tol 1e-10), term rel {terms:.2e} (tol 1e-12)"),
    ))
}

fn offline_online_identity() -> lrbms::Result<Outcome> {
    let disc = build_problem(&unit_square_config([8, 8], [2, 1]))?;
    let anchors = Anchors::uniform(0.1);
    let reductor = Reductor::new(&disc, anchors.mu_tilde)?;
    let model = reductor.project(bases_of_size(&reductor, &disc, 3)?)?;
    let space = ApproximationSpace::reduced(model.basis_matrix(), &disc.ops.mass);
    let mut worst: f64 = 0.0;
    for mu in [0.23, 0.61, 0.87] {
        let reduced = model.solve(mu)?;
        let online = model.online_estimate(&reduced, mu, anchors, IndicatorMode::Surrogate)?;
        let direct = total_estimate(
            &disc,
            &space,
            &model.lift_trajectory(&reduced)?,
            mu,
            anchors,
            &Indicator::Surrogate(reductor.weights()),
        )?;
        worst = worst.max(rel(online.total, direct.total));
    }
    Ok(outcome(worst <= 1e-8, format!("max rel difference {worst:.2e} (tol 1e-8)")))
}

fn norm_equivalence() -> lrbms::Result<Outcome> {
    let disc = build_problem(&unit_square_config([8, 8], [2, 2]))?;
    let norms = NormEvaluator::from_discretization(&disc);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pairs = [(0.1, 0.9), (0.9, 0.1), (0.5, 0.5), (1.0, 0.3), (0.35, 0.75)];
    let mut worst: f64 = f64::INFINITY;
    for (mu, mu_bar) in pairs {
        // θ = (1, 1 − μ)
        let ratios: [f64; 2] = [1.0, (1.0 - mu) / (1.0 - mu_bar)];
        let alpha = ratios[0].min(ratios[1]);
        let gamma = ratios[0].max(ratios[1]);
        let (a_lib, g_lib) = min_theta_constants(mu, mu_bar, &disc.params)?;
        if rel(a_lib, alpha) > 1e-15 || rel(g_lib, gamma) > 1e-15 {
            return Ok(outcome(false, format!("alpha/gamma mismatch at ({mu}, {mu_bar})")));
        }
        for _ in 0..20 {
            let q = random_vector(disc.dim(), &mut rng);
            let n_mu = norms.dg_norm_squared(&q, mu)?.sqrt();
            let n_bar = norms.dg_norm_squared(&q, mu_bar)?.sqrt();
            let lower = n_mu - alpha.sqrt() * n_bar;
            let upper = gamma.sqrt() * n_bar - n_mu;
            worst = worst.min(lower.min(upper) / n_mu);
        }
    }
    Ok(outcome(worst >= -1e-12, format!("min relative slack {worst:.2e} (need >= -1e-12)")))
}

fn oswald_operator() -> lrbms::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for (fine, sub, x) in [([2, 2], [1, 1], [0.0, 1.0]), ([4, 4], [2, 2], [0.0, 1.0]), ([8, 4], [4, 1], [0.0, 5.0])] {
        let mut config = unit_square_config(fine, sub);
        config.domain.x = x;
        let disc = build_problem(&config)?;
        let space = &disc.space;
        let o = space.oswald_matrix();
        let groups = dofs_by_point(space);
        let y = [config.domain.y[0], config.domain.y[1]];
        for _ in 0..3 {
            let q = random_vector(space.dim(), &mut rng);
            let r = random_vector(space.dim(), &mut rng);
            let oq = o.mul_vec(&q);
            worst = worst.max((o.mul_vec(&oq) - &oq).amax());
            let lin = o.mul_vec(&(&q * 2.5 - &r * 0.75)) - (&oq * 2.5 - o.mul_vec(&r) * 0.75);
            worst = worst.max(lin.amax());
            for (p, dofs) in &groups {
                if on_boundary(*p, x, y) {
                    for &d in dofs {
                        worst = worst.max(oq[d].abs());
                    }
                } else {
                    let v0 = oq[dofs[0]];
                    for &d in dofs {
                        worst = worst.max((oq[d] - v0).abs());
                    }
                }
            }
        }
    }
    Ok(outcome(worst <= 1e-13, format!("max defect {worst:.2e} (tol 1e-13)")))
}

fn greedy_decay() -> lrbms::Result<Outcome> {
    let mut finals = Vec::new();
    let mut pass = true;
    let mut details = Vec::new();
    for sub in [[1, 1], [4, 1], [8, 2]] {
        let mut config = lrbms::config::ProblemConfig::default();
        config.domain.fine_cells = [64, 16];
        config.domain.subdomains = sub;
        config.greedy.training = 10;
        config.greedy.test = 10;
        config.greedy.max_iterations = 8;
        let disc = build_problem(&config)?;
        let anchors = Anchors::uniform(0.1);
        let reductor = Reductor::new(&disc, anchors.mu_tilde)?;
        let model: ReducedModel = reductor.project(reductor.initial_bases())?;
        let settings = GreedySettings {
            training: config.training_set()?,
            test: config.test_set(),
            max_iterations: 8,
            tolerance: None,
            anchors,
        };
        let (state, last) = run_greedy(&reductor, model, settings)?;
        let initial = state.log.first().map(|r| r.eta_test_max).unwrap_or(last.eta_test_max);
        let ratio = last.eta_test_max / initial;
        pass &= ratio <= 0.2;
        details.push(format!(
            "{}x{}: test max {initial:.3e} -> {:.3e} (ratio {ratio:.3}, need <= 0.2)",
            sub[0], sub[1], last.eta_test_max
        ));
        finals.push(last.eta_test_max);
    }
    let ordered = finals[2] <= finals[0];
    details.push(format!("8x2 final <= 1x1 final: {ordered}"));
    Ok(outcome(pass && ordered, details.join("; ")))
}

fn constants() -> lrbms::Result<Outcome> {
    let disc = build_problem(&unit_square_config([4, 4], [2, 1]))?;
    let anchors = Anchors {
        mu_hat: 0.3,
        mu_bar: 0.1,
        mu_tilde: 0.1,
    };
    let traj = disc.solve(0.5)?;
    let weights = lrbms::estimator::SurrogateWeights::new(&disc, anchors.mu_tilde)?;
    let b = total_estimate(&disc, &ApproximationSpace::Full, &traj, 0.5, anchors, &Indicator::Surrogate(&weights))?;
    let c_ok = B_CONTINUITY == 1.0 && b.b_continuity == 1.0 && c_constant() == 5f64.sqrt() && b.c_constant == 5f64.sqrt();
    // c_ε(μ̂) = min_t λ_t(μ̂) λ_min(κ_t) with θ = (1, 1 − μ̂)
    let theta = [1.0, 1.0 - anchors.mu_hat];
    let c_eps = (0..disc.mesh().num_triangles())
        .map(|t| {
            let lambda: f64 = disc.fields.lambda.iter().zip(theta).map(|(l, th)| th * l[t]).sum();
            let k = disc.fields.kappa[t];
            let (a, c, off) = (k[(0, 0)], k[(1, 1)], k[(0, 1)]);
            let kmin = 0.5 * (a + c) - (0.25 * (a - c) * (a - c) + off * off).sqrt();
            lambda * kmin
        })
        .fold(f64::INFINITY, f64::min);
    let c_p = 1.0 / std::f64::consts::PI;
    let expected = c_p / c_eps;
    let from_breakdown = b.poincare_constant / b.c_eps;
    let err = rel(b.c_hqb, expected).max(rel(from_breakdown, b.c_hqb));
    Ok(outcome(
        c_ok && err <= 1e-14,
        format!("C = sqrt(5) exactly: {c_ok}; C_HQ rel {err:.2e} (tol 1e-14)"),
    ))
}
