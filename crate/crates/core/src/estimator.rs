//! Certified bound on the space-time error of reduced (or truth)
//! trajectories in `L²(0, T_end; |||·|||_μ̄)`.
//!
//! ```text
//! η = α(μ,μ̄)^{-1/2} { ‖e^c(0)‖ + √5 ‖p^d‖ + 2 α(μ,μ̂)^{-1} C_HQ ‖∂_t p^d‖
//!                     + (√5 + 1) η_ell + 2 α(μ,μ̂)^{-1} C_HQ ‖R_T‖ }
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{AffineForm, CoefficientField, ParameterSpec};
use crate::grid::Rect;
use crate::linalg::SparseMatrix;
use crate::space::local_mass;
use crate::truth::{riesz_representative, Discretization, EllipticReconstructor, Trajectory};

/// `|||b|||_μ` in its own energy norm.
pub const B_CONTINUITY: f64 = 1.0;

/// `C = (3|||b|||² + 2)^{1/2}`.
pub fn c_constant() -> f64 {
    (3.0 * B_CONTINUITY * B_CONTINUITY + 2.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorMode {
    /// `|||E(p^n) − p^n|||_μ` from an actual reconstruction solve.
    Oracle,
    /// Residual-type indicator with weights frozen at `μ̃`.
    Surrogate,
}

impl fmt::Display for IndicatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IndicatorMode::Oracle => "oracle",
            IndicatorMode::Surrogate => "surrogate",
        })
    }
}

impl FromStr for IndicatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(IndicatorMode::Oracle),
            "surrogate" => Ok(IndicatorMode::Surrogate),
            other => Err(Error::Config(format!("unknown estimator mode '{other}'"))),
        }
    }
}

/// Which `C_HQ` enters `total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstantVariant {
    /// `C_P / c_ε`.
    #[default]
    Literal,
    /// `C_P / √c_ε`.
    Sharp,
}

/// The parameters `μ̂` (constants), `μ̄` (error norm) and `μ̃` (indicator weights).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchors {
    pub mu_hat: f64,
    pub mu_bar: f64,
    pub mu_tilde: f64,
}

impl Anchors {
    pub fn uniform(mu: f64) -> Self {
        Self {
            mu_hat: mu,
            mu_bar: mu,
            mu_tilde: mu,
        }
    }

    pub fn check(&self, params: &ParameterSpec) -> Result<()> {
        for mu in [self.mu_hat, self.mu_bar, self.mu_tilde] {
            params.check(mu)?;
        }
        Ok(())
    }
}

/// `(α, γ)`: minimum and maximum of `θ_ξ(μ)/θ_ξ(μ̄)` over the components.
///
/// A component vanishing at both parameters is skipped.
pub fn min_theta_constants(mu: f64, mu_bar: f64, params: &ParameterSpec) -> Result<(f64, f64)> {
    let num = params.coefficients(mu)?;
    let den = params.coefficients(mu_bar)?;
    let mut alpha = f64::INFINITY;
    let mut gamma = 0.0f64;
    for (xi, (&a, &b)) in num.iter().zip(&den).enumerate() {
        if b == 0.0 {
            if a == 0.0 {
                continue;
            }
            return Err(Error::ParameterIncompatible {
                component: xi,
                mu,
                reference: mu_bar,
            });
        }
        alpha = alpha.min(a / b);
        gamma = gamma.max(a / b);
    }
    Ok((alpha, gamma))
}

/// `C_P`, `c_ε(μ̂)` and both variants of `C_HQ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConstants {
    pub poincare_constant: f64,
    pub c_eps: f64,
    pub c_hqb: f64,
    pub c_hqb_sharp: f64,
}

/// Friedrichs constant of the bounding strip, `(shorter side)/π`.
pub fn poincare_constant(domain: &Rect) -> f64 {
    domain.width().min(domain.height()) / PI
}

impl EstimatorConstants {
    pub fn new(c_eps: f64, poincare: f64) -> Result<Self> {
        if !(c_eps > 0.0) {
            return Err(Error::Numerical(format!("c_eps = {c_eps} is not positive")));
        }
        Ok(Self {
            poincare_constant: poincare,
            c_eps,
            c_hqb: poincare / c_eps,
            c_hqb_sharp: poincare / c_eps.sqrt(),
        })
    }
}

pub fn constants_from(c_eps: f64, domain: &Rect) -> Result<EstimatorConstants> {
    EstimatorConstants::new(c_eps, poincare_constant(domain))
}

pub fn poincare_and_ceps(
    mu_hat: f64,
    fields: &CoefficientField,
    params: &ParameterSpec,
    domain: &Rect,
) -> Result<EstimatorConstants> {
    let theta = params.coefficients(mu_hat)?;
    constants_from(fields.min_eigenvalue(&theta), domain)
}

/// `|q|_μ` and `|||q|||_μ` from the affine volume and penalty forms.
#[derive(Debug, Clone)]
pub struct NormEvaluator {
    volume: AffineForm,
    penalty: AffineForm,
}

impl NormEvaluator {
    pub fn new(volume: AffineForm, penalty: AffineForm) -> Self {
        Self { volume, penalty }
    }

    pub fn from_discretization(disc: &Discretization) -> Self {
        Self::new(disc.ops.volume.clone(), disc.ops.penalty.clone())
    }

    pub fn seminorm_squared(&self, q: &DVector<f64>, mu: f64) -> Result<f64> {
        Ok(self.volume.quadratic(mu, q)?.max(0.0))
    }

    pub fn penalty_squared(&self, q: &DVector<f64>, mu: f64) -> Result<f64> {
        Ok(self.penalty.quadratic(mu, q)?.max(0.0))
    }

    pub fn dg_norm_squared(&self, q: &DVector<f64>, mu: f64) -> Result<f64> {
        Ok(self.seminorm_squared(q, mu)? + self.penalty_squared(q, mu)?)
    }

    /// `(|q|_μ, |||q|||_μ)`.
    pub fn energy_and_dg_norm(&self, q: &DVector<f64>, mu: f64) -> Result<(f64, f64)> {
        let s = self.seminorm_squared(q, mu)?;
        let p = self.penalty_squared(q, mu)?;
        Ok((s.sqrt(), (s + p).sqrt()))
    }

    /// The matrix of `|||·|||²_μ`.
    pub fn dg_matrix(&self, mu: f64) -> Result<SparseMatrix> {
        Ok(self.volume.evaluate_at(mu)?.add_scaled(1.0, &self.penalty.evaluate_at(mu)?, 1.0))
    }
}

/// Weights of the residual indicator
///
/// ```text
/// η²(p; g) = Σ_t h_t² / c_t(μ̃) ‖g‖²_t + Σ_{e inner} h_e |e| / c_e(μ̃) [λ(μ) κ ∇p · n]²
/// ```
///
/// where `g = B(p) − Π̃f + f` and `c_t(μ̃)` is the smallest eigenvalue of
/// `λ(μ̃)κ` on `t` (`c_e` the smaller of the two neighbours).
#[derive(Debug, Clone)]
pub struct SurrogateWeights {
    pub mu_tilde: f64,
    /// Block-diagonal, `W_t = h_t²/c_t · M_t`.
    pub element: SparseMatrix,
    /// Per component, one row per inner face: the weighted normal-flux jump.
    pub flux_jumps: Vec<SparseMatrix>,
}

impl SurrogateWeights {
    pub fn new(disc: &Discretization, mu_tilde: f64) -> Result<Self> {
        let mesh = disc.mesh();
        let fields = &disc.fields;
        let theta = disc.params.coefficients(mu_tilde)?;
        let c: Vec<f64> = (0..mesh.num_triangles())
            .map(|t| fields.local_min_eigenvalue(t, &theta))
            .collect();
        let mut triplets = Vec::with_capacity(9 * mesh.num_triangles());
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let m = local_mass(tri.area) * (tri.diameter * tri.diameter / c[t]);
            for a in 0..3 {
                for b in 0..3 {
                    triplets.push((3 * t + a, 3 * t + b, m[(a, b)]));
                }
            }
        }
        let element = SparseMatrix::from_triplets(disc.dim(), disc.dim(), &triplets);

        let inner: Vec<_> = mesh.faces.iter().filter(|f| !f.is_boundary()).collect();
        let flux_jumps = fields
            .lambda
            .iter()
            .map(|comp| {
                let mut trip = Vec::with_capacity(6 * inner.len());
                for (row, face) in inner.iter().enumerate() {
                    let plus = face.plus.expect("inner face");
                    let ce = c[face.minus].min(c[plus]);
                    let w = (face.diameter() * face.length / ce).sqrt();
                    let n = Vector2::new(face.normal[0], face.normal[1]);
                    for (t, sign) in [(face.minus, 1.0), (plus, -1.0)] {
                        let tri = &mesh.triangles[t];
                        for k in 0..3 {
                            let g = Vector2::new(tri.gradients[k][0], tri.gradients[k][1]);
                            let flux = comp[t] * (fields.kappa[t] * g).dot(&n);
                            trip.push((row, 3 * t + k, sign * w * flux));
                        }
                    }
                }
                SparseMatrix::from_triplets(inner.len(), disc.dim(), &trip)
            })
            .collect();
        Ok(Self {
            mu_tilde,
            element,
            flux_jumps,
        })
    }

    pub fn element_term(&self, datum: &DVector<f64>) -> f64 {
        self.element.quadratic(datum).max(0.0)
    }

    pub fn face_term(&self, p: &DVector<f64>, theta: &[f64]) -> f64 {
        let mut jump = DVector::zeros(self.flux_jumps[0].nrows());
        for (f, th) in self.flux_jumps.iter().zip(theta) {
            jump += f.mul_vec(p) * *th;
        }
        jump.norm_squared()
    }

    pub fn indicator_squared(&self, p: &DVector<f64>, datum: &DVector<f64>, theta: &[f64]) -> f64 {
        self.element_term(datum) + self.face_term(p, theta)
    }
}

/// Per-snapshot ingredients of the bound; every entry is a squared norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTerms {
    pub dt: f64,
    /// `‖p0 − I_OS(p^0)‖²`.
    pub initial_error_sq: f64,
    /// `|||p^{d,n}|||²_μ`, `n = 0..n_t`.
    pub nonconformity_sq: Vec<f64>,
    /// `‖p^{d,n} − p^{d,n−1}‖²`, `n = 1..n_t`.
    pub nonconformity_increment_sq: Vec<f64>,
    /// `‖B(p^n − p^{n−1})‖²`, `n = 1..n_t`.
    pub riesz_increment_sq: Vec<f64>,
    /// Elliptic indicator squared, `n = 0..n_t`.
    pub indicator_sq: Vec<f64>,
    /// `Σ_e b_p^e(p^n, p^n; μ)`, `n = 0..n_t`.
    pub penalty_sq: Vec<f64>,
}

impl TrajectoryTerms {
    pub fn initial_error(&self) -> f64 {
        self.initial_error_sq.max(0.0).sqrt()
    }

    /// `2 {Σ_{n=0}^{n_t} Δt/3 |||p^{d,n}|||²}^{1/2}`.
    pub fn nonconformity_norm(&self) -> f64 {
        2.0 * (self.dt / 3.0 * self.nonconformity_sq.iter().map(|v| v.max(0.0)).sum::<f64>()).sqrt()
    }

    /// `{Σ_{n=1}^{n_t} ‖Δp^{d,n}‖²/Δt}^{1/2}`.
    pub fn nonconformity_time_derivative(&self) -> f64 {
        (self.nonconformity_increment_sq.iter().map(|v| v.max(0.0)).sum::<f64>() / self.dt).sqrt()
    }

    /// `{4Δt/3 Σ_{n=0}^{n_t} (η_n² + penalty_n)}^{1/2}`.
    pub fn elliptic_indicator(&self) -> f64 {
        let s: f64 = self
            .indicator_sq
            .iter()
            .zip(&self.penalty_sq)
            .map(|(a, b)| a.max(0.0) + b.max(0.0))
            .sum();
        (4.0 * self.dt / 3.0 * s).sqrt()
    }

    /// `{Σ_{n=1}^{n_t} Δt/3 ‖B(p^n − p^{n−1})‖²}^{1/2}`.
    pub fn time_residual_norm(&self) -> f64 {
        (self.dt / 3.0 * self.riesz_increment_sq.iter().map(|v| v.max(0.0)).sum::<f64>()).sqrt()
    }
}

/// Every constant and term of the bound at one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorBreakdown {
    pub mu: f64,
    pub mu_hat: f64,
    pub mu_bar: f64,
    pub mu_tilde: f64,
    pub indicator: IndicatorMode,
    pub alpha_mu_mubar: f64,
    pub alpha_mu_muhat: f64,
    pub gamma_mu_mubar: f64,
    pub c_eps: f64,
    pub poincare_constant: f64,
    pub b_continuity: f64,
    pub c_constant: f64,
    pub c_hqb: f64,
    pub c_hqb_sharp: f64,
    pub initial_error: f64,
    pub nonconformity_norm: f64,
    pub nonconformity_time_derivative: f64,
    pub elliptic_indicator: f64,
    pub time_residual_norm: f64,
    pub total: f64,
    pub total_sharp: f64,
}

impl EstimatorBreakdown {
    pub fn assemble(
        terms: &TrajectoryTerms,
        mu: f64,
        anchors: Anchors,
        params: &ParameterSpec,
        constants: &EstimatorConstants,
        indicator: IndicatorMode,
    ) -> Result<Self> {
        let (alpha_bar, gamma_bar) = min_theta_constants(mu, anchors.mu_bar, params)?;
        let (alpha_hat, _) = min_theta_constants(mu, anchors.mu_hat, params)?;
        for (alpha, reference) in [(alpha_bar, anchors.mu_bar), (alpha_hat, anchors.mu_hat)] {
            if !(alpha > 0.0) {
                let component = params
                    .coefficients(mu)?
                    .iter()
                    .position(|&v| v == 0.0)
                    .unwrap_or(0);
                return Err(Error::ParameterIncompatible { component, mu, reference });
            }
        }
        let mut b = Self {
            mu,
            mu_hat: anchors.mu_hat,
            mu_bar: anchors.mu_bar,
            mu_tilde: anchors.mu_tilde,
            indicator,
            alpha_mu_mubar: alpha_bar,
            alpha_mu_muhat: alpha_hat,
            gamma_mu_mubar: gamma_bar,
            c_eps: constants.c_eps,
            poincare_constant: constants.poincare_constant,
            b_continuity: B_CONTINUITY,
            c_constant: c_constant(),
            c_hqb: constants.c_hqb,
            c_hqb_sharp: constants.c_hqb_sharp,
            initial_error: terms.initial_error(),
            nonconformity_norm: terms.nonconformity_norm(),
            nonconformity_time_derivative: terms.nonconformity_time_derivative(),
            elliptic_indicator: terms.elliptic_indicator(),
            time_residual_norm: terms.time_residual_norm(),
            total: 0.0,
            total_sharp: 0.0,
        };
        b.total = b.recompute_total(ConstantVariant::Literal);
        b.total_sharp = b.recompute_total(ConstantVariant::Sharp);
        Ok(b)
    }

    /// The bound recomputed from the stored terms and constants.
    pub fn recompute_total(&self, variant: ConstantVariant) -> f64 {
        let c_hq = match variant {
            ConstantVariant::Literal => self.c_hqb,
            ConstantVariant::Sharp => self.c_hqb_sharp,
        };
        let time_factor = 2.0 / self.alpha_mu_muhat * c_hq;
        (self.initial_error
            + self.c_constant * self.nonconformity_norm
            + time_factor * self.nonconformity_time_derivative
            + (self.c_constant + 1.0) * self.elliptic_indicator
            + time_factor * self.time_residual_norm)
            / self.alpha_mu_mubar.sqrt()
    }

    pub fn value(&self, variant: ConstantVariant) -> f64 {
        match variant {
            ConstantVariant::Literal => self.total,
            ConstantVariant::Sharp => self.total_sharp,
        }
    }
}

/// The discrete space `Q̃` the trajectory lives in. It fixes the Riesz map
/// `B` and the projection `Π̃`.
#[derive(Debug, Clone)]
pub enum ApproximationSpace {
    /// The full DG space; `f` is a DG function, so `Π̃f = f`.
    Full,
    /// `span` of the columns of `basis` (DG coefficient vectors).
    Reduced { basis: DMatrix<f64>, mass: DMatrix<f64> },
}

impl ApproximationSpace {
    pub fn reduced(basis: DMatrix<f64>, dg_mass: &SparseMatrix) -> Self {
        let mass = basis.transpose() * dg_mass.mul_dense(&basis);
        ApproximationSpace::Reduced { basis, mass }
    }

    /// `Φ M_red⁻¹ Φᵀ v` for a functional `v`, or `M⁻¹ v` on the full space.
    fn lift_functional(&self, disc: &Discretization, v: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            ApproximationSpace::Full => Ok(disc.mass_inverse.apply(v)),
            ApproximationSpace::Reduced { basis, mass } => {
                let chol = mass
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::Numerical("reduced mass matrix is not positive definite".into()))?;
                Ok(basis * chol.solve(&(basis.transpose() * v)))
            }
        }
    }

    pub fn riesz(&self, disc: &Discretization, operator: &SparseMatrix, q: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            ApproximationSpace::Full => Ok(riesz_representative(&q.clone().into(), operator, &disc.mass_inverse).coefficients),
            _ => self.lift_functional(disc, &operator.mul_vec(q)),
        }
    }

    /// `Π̃ f`.
    pub fn project(&self, disc: &Discretization, f: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            ApproximationSpace::Full => Ok(f.clone()),
            _ => self.lift_functional(disc, &disc.ops.mass.mul_vec(f)),
        }
    }
}

/// How the elliptic indicator is evaluated by [`trajectory_terms`].
pub enum Indicator<'a> {
    Oracle {
        reconstructor: &'a EllipticReconstructor,
        /// Norms on the reconstruction's reference space.
        norms: &'a NormEvaluator,
    },
    Surrogate(&'a SurrogateWeights),
}

impl Indicator<'_> {
    pub fn mode(&self) -> IndicatorMode {
        match self {
            Indicator::Oracle { .. } => IndicatorMode::Oracle,
            Indicator::Surrogate(_) => IndicatorMode::Surrogate,
        }
    }
}

/// Evaluates every per-snapshot term with high-dimensional operations.
pub fn trajectory_terms(
    disc: &Discretization,
    space: &ApproximationSpace,
    traj: &Trajectory,
    mu: f64,
    indicator: &Indicator<'_>,
) -> Result<TrajectoryTerms> {
    if traj.snapshots.iter().any(|s| s.len() != disc.dim()) {
        return Err(Error::Dimension("trajectory does not live in the truth space".into()));
    }
    let a = disc.operator_at(mu)?;
    let theta = disc.params.coefficients(mu)?;
    let norms = NormEvaluator::from_discretization(disc);
    let oswald = disc.space.oswald_matrix();
    let mass = &disc.ops.mass;
    let f = &disc.f.coefficients;
    let data_correction = f - space.project(disc, f)?;

    let nonconforming: Vec<DVector<f64>> = traj
        .snapshots
        .iter()
        .map(|s| s - oswald.mul_vec(s))
        .collect();

    let e0 = &disc.p0.coefficients - oswald.mul_vec(&traj.snapshots[0]);
    let initial_error_sq = mass.quadratic(&e0);

    let per_snapshot: Vec<(f64, f64, f64)> = traj
        .snapshots
        .par_iter()
        .zip(&nonconforming)
        .map(|(p, pd)| -> Result<(f64, f64, f64)> {
            let nc = norms.dg_norm_squared(pd, mu)?;
            let pen = norms.penalty_squared(p, mu)?;
            let riesz = space.riesz(disc, &a, p)?;
            let datum = riesz + &data_correction;
            let ind = match indicator {
                Indicator::Oracle { reconstructor, norms } => {
                    let e = reconstructor.reconstruct(&datum)?;
                    let diff = e.coefficients - reconstructor.to_reference(p);
                    norms.dg_norm_squared(&diff, mu)?
                }
                Indicator::Surrogate(w) => w.indicator_squared(p, &datum, &theta),
            };
            Ok((nc, pen, ind))
        })
        .collect::<Result<_>>()?;

    let increments: Vec<(f64, f64)> = (1..traj.snapshots.len())
        .into_par_iter()
        .map(|n| -> Result<(f64, f64)> {
            let dpd = &nonconforming[n] - &nonconforming[n - 1];
            let dp = &traj.snapshots[n] - &traj.snapshots[n - 1];
            let b = space.riesz(disc, &a, &dp)?;
            Ok((mass.quadratic(&dpd), mass.quadratic(&b)))
        })
        .collect::<Result<_>>()?;

    Ok(TrajectoryTerms {
        dt: traj.dt,
        initial_error_sq,
        nonconformity_sq: per_snapshot.iter().map(|v| v.0).collect(),
        nonconformity_increment_sq: increments.iter().map(|v| v.0).collect(),
        riesz_increment_sq: increments.iter().map(|v| v.1).collect(),
        indicator_sq: per_snapshot.iter().map(|v| v.2).collect(),
        penalty_sq: per_snapshot.iter().map(|v| v.1).collect(),
    })
}

/// Direct (high-dimensional) evaluation of the full bound.
pub fn total_estimate(
    disc: &Discretization,
    space: &ApproximationSpace,
    traj: &Trajectory,
    mu: f64,
    anchors: Anchors,
    indicator: &Indicator<'_>,
) -> Result<EstimatorBreakdown> {
    disc.params.check(mu)?;
    anchors.check(&disc.params)?;
    match indicator {
        Indicator::Surrogate(w) if w.mu_tilde != anchors.mu_tilde => {
            return Err(Error::Config(format!(
                "surrogate weights were built at mu_tilde = {}, anchors ask for {}",
                w.mu_tilde, anchors.mu_tilde
            )));
        }
        Indicator::Oracle { reconstructor, .. } if reconstructor.mu() != mu => {
            return Err(Error::Config(format!(
                "reconstruction was set up at mu = {}, estimate requested at {mu}",
                reconstructor.mu()
            )));
        }
        _ => {}
    }
    let constants = poincare_and_ceps(anchors.mu_hat, &disc.fields, &disc.params, &disc.mesh().domain)?;
    let terms = trajectory_terms(disc, space, traj, mu, indicator)?;
    EstimatorBreakdown::assemble(&terms, mu, anchors, &disc.params, &constants, indicator.mode())
}

/// `‖p − q‖_{L²(0,T;|||·|||_μ)}` for two trajectories that are piecewise
/// linear on the same time grid.
pub fn space_time_error(norm_matrix: &SparseMatrix, a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.snapshots.len() != b.snapshots.len() || (a.dt - b.dt).abs() > 1e-14 * a.dt {
        return Err(Error::Dimension("trajectories live on different time grids".into()));
    }
    let e: Vec<DVector<f64>> = a.snapshots.iter().zip(&b.snapshots).map(|(x, y)| x - y).collect();
    let mut sum = 0.0;
    for n in 1..e.len() {
        let (x, y) = (&e[n - 1], &e[n]);
        sum += a.dt / 3.0 * (norm_matrix.quadratic(x) + norm_matrix.bilinear(x, y) + norm_matrix.quadratic(y));
    }
    Ok(sum.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Mesh;
    use crate::space::DgSpace;
    use crate::truth::TimeGrid;
    use nalgebra::Matrix2;
    use std::sync::Arc;

    #[test]
    fn min_theta_examples() {
        let p = ParameterSpec::channel((0.1, 1.0)).unwrap();
        assert_eq!(min_theta_constants(0.4, 0.4, &p).unwrap(), (1.0, 1.0));
        let (a, g) = min_theta_constants(0.5, 0.1, &p).unwrap();
        assert!((a - 5.0 / 9.0).abs() < 1e-15 && g == 1.0);
        let (a, g) = min_theta_constants(0.1, 0.5, &p).unwrap();
        assert!(a == 1.0 && (g - 1.8).abs() < 1e-15);
        assert!(matches!(
            min_theta_constants(0.5, 1.0, &p),
            Err(Error::ParameterIncompatible { component: 1, .. })
        ));
        assert_eq!(min_theta_constants(1.0, 1.0, &p).unwrap(), (1.0, 1.0));
        assert_eq!(min_theta_constants(1.0, 0.1, &p).unwrap().0, 0.0);
    }

    #[test]
    fn poincare_and_ceps_examples() {
        let f = CoefficientField::new(vec![Matrix2::new(2.0, 0.0, 0.0, 3.0); 4], vec![vec![1.0; 4]]).unwrap();
        let p = ParameterSpec::nonparametric((0.0, 1.0)).unwrap();
        let c = poincare_and_ceps(0.5, &f, &p, &Rect::new(0.0, 5.0, 0.0, 1.0)).unwrap();
        assert_eq!(c.c_eps, 2.0);
        assert_eq!(c.poincare_constant, 1.0 / PI);
        let id = CoefficientField::identity(4);
        let c = poincare_and_ceps(0.5, &id, &p, &Rect::unit_square()).unwrap();
        assert_eq!(c.c_hqb, c.poincare_constant);
        assert_eq!(c.c_hqb_sharp, c.poincare_constant);
    }

    #[test]
    fn c_is_root_five() {
        assert_eq!(c_constant(), 5f64.sqrt());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("oracle".parse::<IndicatorMode>().unwrap(), IndicatorMode::Oracle);
        assert!(matches!("exact".parse::<IndicatorMode>(), Err(Error::Config(_))));
    }

    fn disc(nonparametric: bool) -> Discretization {
        let mesh = Arc::new(Mesh::build(Rect::unit_square(), (4, 4), (2, 1)).unwrap());
        let space = DgSpace::new(mesh);
        let n = space.mesh().num_triangles();
        let (fields, params) = if nonparametric {
            (CoefficientField::identity(n), ParameterSpec::nonparametric((0.1, 1.0)).unwrap())
        } else {
            let lc = (0..n).map(|t| if space.mesh().triangles[t].centroid[0] > 0.5 { 9.0 } else { 0.0 }).collect();
            (
                CoefficientField::new(vec![Matrix2::identity(); n], vec![vec![1.0; n], lc]).unwrap(),
                ParameterSpec::channel((0.1, 1.0)).unwrap(),
            )
        };
        let f = space.interpolate(|p| if p[0] < 0.5 { 1.0 } else { -0.5 }).unwrap();
        let p0 = space.zeros();
        Discretization::new(space, fields, params, crate::forms::DEFAULT_PENALTY, f, p0, TimeGrid::new(0.05, 5).unwrap())
            .unwrap()
    }

    #[test]
    fn dg_norm_dominates_seminorm() {
        let d = disc(false);
        let norms = NormEvaluator::from_discretization(&d);
        let q = d.space.interpolate_per_triangle(|t, p| (t as f64).sin() + p[0]).unwrap();
        let (s, n) = norms.energy_and_dg_norm(&q.coefficients, 0.3).unwrap();
        assert!(n >= s && s > 0.0);
        assert_eq!(norms.energy_and_dg_norm(&d.space.zeros().coefficients, 0.3).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn nonparametric_total_is_plain_sum() {
        let d = disc(true);
        let traj = d.solve(0.5).unwrap();
        let w = SurrogateWeights::new(&d, 0.5).unwrap();
        let b = total_estimate(&d, &ApproximationSpace::Full, &traj, 0.5, Anchors::uniform(0.5), &Indicator::Surrogate(&w))
            .unwrap();
        assert_eq!((b.alpha_mu_mubar, b.alpha_mu_muhat, b.gamma_mu_mubar), (1.0, 1.0, 1.0));
        let c = 5f64.sqrt();
        let sum = b.initial_error
            + c * b.nonconformity_norm
            + 2.0 * b.c_hqb * (b.nonconformity_time_derivative + b.time_residual_norm)
            + (c + 1.0) * b.elliptic_indicator;
        assert!((b.total - sum).abs() <= 1e-14 * sum);
    }

    #[test]
    fn conforming_trajectory_has_no_nonconformity() {
        let d = disc(false);
        let c = crate::truth::ConformingSpace::new(&d.space);
        let snaps = (0..=5)
            .map(|n| c.prolongate(&DVector::from_fn(c.dim(), |i, _| ((i * (n + 1)) as f64).cos())).coefficients)
            .collect();
        let traj = Trajectory { dt: 0.01, snapshots: snaps };
        let w = SurrogateWeights::new(&d, 0.1).unwrap();
        let terms = trajectory_terms(&d, &ApproximationSpace::Full, &traj, 0.7, &Indicator::Surrogate(&w)).unwrap();
        assert!(terms.nonconformity_norm() < 1e-10);
        assert!(terms.nonconformity_time_derivative() < 1e-10);
        let norms = NormEvaluator::from_discretization(&d);
        for (p, pen) in traj.snapshots.iter().zip(&terms.penalty_sq) {
            assert!(*pen <= 1e-13 * norms.dg_norm_squared(p, 0.7).unwrap());
        }
    }

    #[test]
    fn zero_data_zero_estimate() {
        let mut d = disc(false);
        d.f = d.space.zeros();
        d.rhs = DVector::zeros(d.dim());
        let traj = d.solve(0.5).unwrap();
        let w = SurrogateWeights::new(&d, 0.1).unwrap();
        let rec = EllipticReconstructor::new(&d, 0.5, None).unwrap();
        let norms = NormEvaluator::from_discretization(&d);
        for ind in [Indicator::Surrogate(&w), Indicator::Oracle { reconstructor: &rec, norms: &norms }] {
            let b = total_estimate(&d, &ApproximationSpace::Full, &traj, 0.5, Anchors::uniform(0.1), &ind).unwrap();
            assert_eq!(b.total, 0.0);
        }
    }

    #[test]
    fn space_time_error_of_linear_ramp() {
        let m = SparseMatrix::identity(1);
        let a = Trajectory {
            dt: 0.5,
            snapshots: vec![DVector::from_element(1, 0.0), DVector::from_element(1, 1.0), DVector::from_element(1, 2.0)],
        };
        let z = Trajectory { dt: 0.5, snapshots: vec![DVector::zeros(1); 3] };
        // ∫_0^1 (2t)² dt = 4/3
        assert!((space_time_error(&m, &a, &z).unwrap() - (4.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn oracle_vanishes_on_conforming_galerkin_solution() {
        let d = disc(false);
        let mu = 0.4;
        let a = d.operator_at(mu).unwrap();
        let c = crate::truth::ConformingSpace::new(&d.space);
        let ac = c.restrict_operator(&a);
        let uc = crate::linalg::SpdSolver::factor(&ac).unwrap().solve(&c.prolongation().transpose_mul_vec(&d.rhs));
        let q = c.prolongate(&uc).coefficients;
        let rec = EllipticReconstructor::new(&d, mu, None).unwrap();
        let norms = NormEvaluator::from_discretization(&d);
        let traj = Trajectory { dt: 0.01, snapshots: vec![q.clone(), q] };
        let terms = trajectory_terms(
            &d,
            &ApproximationSpace::Full,
            &traj,
            mu,
            &Indicator::Oracle { reconstructor: &rec, norms: &norms },
        )
        .unwrap();
        let scale = norms.dg_norm_squared(&traj.snapshots[0], mu).unwrap();
        assert!(terms.indicator_sq.iter().all(|&v| v <= 1e-18 * scale));
    }
}
