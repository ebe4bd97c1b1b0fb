//! Estimator-driven POD-Greedy.

use std::io::Write;

use log::{info, warn};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{Anchors, IndicatorMode};
use crate::linalg::SparseMatrix;
use crate::reduction::{ReducedModel, Reductor, DISCARD_TOLERANCE};

/// Dominant POD mode of `snapshots` in the product `g`, with unit norm and
/// its largest-magnitude coefficient positive. `None` if all are zero.
pub fn pod_dominant_mode(snapshots: &[DVector<f64>], g: &SparseMatrix) -> Option<DVector<f64>> {
    if snapshots.is_empty() {
        return None;
    }
    let images: Vec<DVector<f64>> = snapshots.iter().map(|s| g.mul_vec(s)).collect();
    let k = snapshots.len();
    let gram = DMatrix::from_fn(k, k, |i, j| snapshots[i].dot(&images[j]));
    let eig = SymmetricEigen::new(gram);
    let (top, lambda) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    if !(lambda > 0.0) {
        return None;
    }
    let v = eig.eigenvectors.column(top);
    let mut mode = snapshots
        .iter()
        .zip(v.iter())
        .fold(DVector::zeros(snapshots[0].len()), |acc, (s, c)| acc + s * *c);
    let norm = g.quadratic(&mode).max(0.0).sqrt();
    if !(norm > 0.0) {
        return None;
    }
    mode /= norm;
    let pivot = mode.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
    if pivot < 0.0 {
        mode.neg_mut();
    }
    Some(mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedySettings {
    pub training: Vec<f64>,
    pub test: Vec<f64>,
    pub max_iterations: usize,
    /// Stop once the training maximum is at or below this value.
    pub tolerance: Option<f64>,
    pub anchors: Anchors,
}

/// Maximum online estimate over a parameter set and where it occurs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepMax {
    pub mu: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyRecord {
    pub iteration: usize,
    /// `None` for the closing evaluation of the final model.
    pub mu_star: Option<f64>,
    pub eta_train_max: f64,
    pub eta_test_max: f64,
    pub dim: usize,
    pub basis_sizes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GreedyState {
    pub model: ReducedModel,
    pub settings: GreedySettings,
    /// One record per completed iteration, taken before the extension.
    pub log: Vec<GreedyRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Extended(GreedyRecord),
    /// Tolerance met or no subdomain could grow; carries the evaluation.
    Stopped(GreedyRecord),
}

/// Online estimates over `params`, in order.
pub fn estimate_sweep(model: &ReducedModel, params: &[f64], anchors: Anchors) -> Result<Vec<f64>> {
    params
        .par_iter()
        .map(|&mu| {
            let traj = model.solve(mu)?;
            Ok(model.online_estimate(&traj, mu, anchors, IndicatorMode::Surrogate)?.total)
        })
        .collect()
}

/// Largest value; ties go to the smallest parameter.
pub fn arg_max(params: &[f64], etas: &[f64]) -> Option<SweepMax> {
    params
        .iter()
        .zip(etas)
        .map(|(&mu, &eta)| SweepMax { mu, eta })
        .fold(None, |best: Option<SweepMax>, c| match best {
            Some(b) if b.eta > c.eta || (b.eta == c.eta && b.mu <= c.mu) => Some(b),
            _ => Some(c),
        })
}

fn evaluate(state: &GreedyState, iteration: usize) -> Result<(GreedyRecord, SweepMax)> {
    let s = &state.settings;
    let train = estimate_sweep(&state.model, &s.training, s.anchors)?;
    let best = arg_max(&s.training, &train).ok_or_else(|| Error::Config("empty training set".into()))?;
    if !best.eta.is_finite() {
        return Err(Error::Numerical(format!("estimator is not finite at mu = {}", best.mu)));
    }
    let test = estimate_sweep(&state.model, &s.test, s.anchors)?;
    let eta_test_max = test.iter().copied().fold(f64::NAN, f64::max);
    Ok((
        GreedyRecord {
            iteration,
            mu_star: Some(best.mu),
            eta_train_max: best.eta,
            eta_test_max,
            dim: state.model.dim(),
            basis_sizes: state.model.basis_sizes(),
        },
        best,
    ))
}

/// `H¹(T)` projection errors of one trajectory, one list per subdomain.
pub fn local_projection_errors(
    reductor: &Reductor,
    model: &ReducedModel,
    snapshots: &[DVector<f64>],
) -> Vec<Vec<DVector<f64>>> {
    model
        .bases
        .par_iter()
        .map(|b| {
            let g = reductor.local_product(b.subdomain);
            snapshots
                .iter()
                .map(|p| b.projection_error(&p.rows(b.dofs.start, b.dofs.len()).into_owned(), &g))
                .collect()
        })
        .collect()
}

/// One POD-Greedy iteration: sweep, truth solve at the worst parameter, and
/// one new mode per subdomain.
pub fn greedy_step(reductor: &Reductor, state: &mut GreedyState) -> Result<StepOutcome> {
    let iteration = state.log.len();
    let (record, best) = evaluate(state, iteration)?;
    if let Some(tol) = state.settings.tolerance {
        if best.eta <= tol {
            info!("greedy: tolerance met ({:.3e} <= {tol:.3e})", best.eta);
            return Ok(StepOutcome::Stopped(record));
        }
    }
    let truth = reductor.discretization().solve(best.mu)?;
    let errors = local_projection_errors(reductor, &state.model, &truth.snapshots);
    let candidates: Vec<Vec<DVector<f64>>> = state
        .model
        .bases
        .par_iter()
        .zip(&errors)
        .map(|(b, errs)| {
            let g = reductor.local_product(b.subdomain);
            let energy: f64 = truth
                .snapshots
                .iter()
                .map(|p| g.quadratic(&p.rows(b.dofs.start, b.dofs.len()).into_owned()))
                .sum();
            let error_energy: f64 = errs.iter().map(|e| g.quadratic(e)).sum();
            if error_energy <= DISCARD_TOLERANCE * DISCARD_TOLERANCE * energy {
                return Vec::new();
            }
            pod_dominant_mode(errs, &g).into_iter().collect()
        })
        .collect();
    let added = reductor.extend(&mut state.model, candidates)?;
    if added.iter().all(|&a| a == 0) {
        warn!("greedy: no subdomain basis could be extended at mu = {}", best.mu);
        return Ok(StepOutcome::Stopped(record));
    }
    info!(
        "greedy iteration {iteration}: mu* = {}, eta_train = {:.4e}, eta_test = {:.4e}, dim = {} -> {}",
        best.mu,
        record.eta_train_max,
        record.eta_test_max,
        record.dim,
        state.model.dim()
    );
    state.log.push(record.clone());
    Ok(StepOutcome::Extended(record))
}

/// Runs iterations until a stopping rule holds. The returned record
/// evaluates the final model.
pub fn run_greedy(reductor: &Reductor, model: ReducedModel, settings: GreedySettings) -> Result<(GreedyState, GreedyRecord)> {
    if settings.training.is_empty() {
        return Err(Error::Config("greedy needs a nonempty training set".into()));
    }
    for &mu in settings.training.iter().chain(&settings.test) {
        model.params.check(mu)?;
    }
    settings.anchors.check(&model.params)?;
    let mut state = GreedyState { model, settings, log: Vec::new() };
    while state.log.len() < state.settings.max_iterations {
        if let StepOutcome::Stopped(mut record) = greedy_step(reductor, &mut state)? {
            record.mu_star = None;
            return Ok((state, record));
        }
    }
    let (mut last, _) = evaluate(&state, state.log.len())?;
    last.mu_star = None;
    Ok((state, last))
}

/// Decay CSV: `header` lines as `#` comments, then one row per iteration
/// and the closing evaluation with an empty `mu_star`.
pub fn write_decay_csv<W: Write>(mut w: W, header: &str, log: &[GreedyRecord], last: &GreedyRecord) -> Result<()> {
    for line in header.lines() {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "iteration,mu_star,eta_train_max,eta_test_max,dim_Qred")?;
    for r in log.iter().chain(std::iter::once(last)) {
        let mu = r.mu_star.map(|m| format!("{m:.17e}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{:.17e},{:.17e},{}",
            r.iteration, mu, r.eta_train_max, r.eta_test_max, r.dim
        )?;
    }
    Ok(())
}
