//! Localized reduced bases and the reduced model.
//!
//! Each subdomain `T` carries its own basis, orthonormal in the broken
//! `H¹(T)` product. Reduced DoFs are numbered subdomain by subdomain, so
//! every reduced matrix has the block structure of the coarse grid. Blocks
//! are projected locally: a basis vector on `T` only meets the truth rows of
//! `T` and its neighbours.

use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    poincare_constant, Anchors, EstimatorBreakdown, EstimatorConstants, IndicatorMode, SurrogateWeights,
    TrajectoryTerms,
};
use crate::forms::{min_eigenvalue, ParameterSpec};
use crate::linalg::SparseMatrix;
use crate::truth::{Discretization, Trajectory};

/// Relative norm below which Gram-Schmidt discards a vector.
pub const DISCARD_TOLERANCE: f64 = 1e-10;

/// Orthonormalizes `vectors` against `basis` and each other in the product
/// `g`, with one re-orthogonalization pass. Returns the accepted vectors.
pub fn gram_schmidt_extend(basis: &[DVector<f64>], vectors: &[DVector<f64>], g: &SparseMatrix) -> Vec<DVector<f64>> {
    let mut all: Vec<DVector<f64>> = basis.to_vec();
    let mut accepted = Vec::new();
    for v in vectors {
        let original = g.quadratic(v).max(0.0).sqrt();
        if !(original > 0.0) || !original.is_finite() {
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for u in &all {
                let c = g.bilinear(u, &w);
                w.axpy(-c, u, 1.0);
            }
        }
        let norm = g.quadratic(&w).max(0.0).sqrt();
        if norm < DISCARD_TOLERANCE * original {
            continue;
        }
        w /= norm;
        all.push(w.clone());
        accepted.push(w);
    }
    accepted
}

pub fn gram_schmidt(vectors: &[DVector<f64>], g: &SparseMatrix) -> Vec<DVector<f64>> {
    gram_schmidt_extend(&[], vectors, g)
}

/// Reduced basis of one subdomain; vectors hold the subdomain's DoF block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalBasis {
    pub subdomain: usize,
    pub dofs: Range<usize>,
    pub vectors: Vec<DVector<f64>>,
}

impl LocalBasis {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn local_dim(&self) -> usize {
        self.dofs.len()
    }

    /// Gram matrix in the given local product.
    pub fn gram(&self, product: &SparseMatrix) -> DMatrix<f64> {
        let k = self.len();
        DMatrix::from_fn(k, k, |i, j| product.bilinear(&self.vectors[i], &self.vectors[j]))
    }

    /// Coefficients of the product-orthogonal projection of `v` (a local block).
    pub fn project(&self, v: &DVector<f64>, product: &SparseMatrix) -> DVector<f64> {
        let gv = product.mul_vec(v);
        DVector::from_iterator(self.len(), self.vectors.iter().map(|u| u.dot(&gv)))
    }

    /// `v` minus its projection onto the basis.
    pub fn projection_error(&self, v: &DVector<f64>, product: &SparseMatrix) -> DVector<f64> {
        let c = self.project(v, product);
        let mut e = v.clone();
        for (u, ci) in self.vectors.iter().zip(c.iter()) {
            e.axpy(-ci, u, 1.0);
        }
        e
    }

    pub fn embed(&self, i: usize, dim: usize) -> DVector<f64> {
        let mut v = DVector::zeros(dim);
        v.rows_mut(self.dofs.start, self.dofs.len()).copy_from(&self.vectors[i]);
        v
    }
}

/// `A[range, range]` as a standalone matrix.
pub fn local_block(a: &SparseMatrix, range: Range<usize>) -> SparseMatrix {
    let n = range.len();
    let triplets: Vec<_> = range
        .clone()
        .flat_map(|i| {
            let start = range.start;
            let end = range.end;
            a.row(i)
                .filter(move |&(j, _)| j >= start && j < end)
                .map(move |(j, v)| (i - start, j - start, v))
        })
        .collect();
    SparseMatrix::from_triplets(n, n, &triplets)
}

/// Low-dimensional data of the surrogate-mode estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineEstimatorData {
    pub mu_tilde: f64,
    pub poincare_constant: f64,
    /// `λ_ξ,t · λ_min(κ_t)`, per component and triangle, for `c_ε(μ̂)`.
    pub local_ellipticity: Vec<Vec<f64>>,
    /// `Dᵀ (V_ξ + P_ξ) D` with `D = (I − O)Φ`.
    pub nonconformity: Vec<DMatrix<f64>>,
    /// `Dᵀ M D`.
    pub nonconformity_mass: DMatrix<f64>,
    /// `Φᵀ P_ξ Φ`.
    pub penalty: Vec<DMatrix<f64>>,
    /// `Φᵀ W Φ`, `Φᵀ W f`, `fᵀ W f`.
    pub element: DMatrix<f64>,
    pub element_f: DVector<f64>,
    pub element_ff: f64,
    /// `(F_ξ Φ)ᵀ (F_ζ Φ)`, indexed `[ξ][ζ]`.
    pub flux: Vec<Vec<DMatrix<f64>>>,
    /// `p0ᵀ M p0`, `Φᵀ Oᵀ M p0`, `Φᵀ Oᵀ M O Φ`.
    pub p0_mass: f64,
    pub oswald_p0: DVector<f64>,
    pub oswald_mass: DMatrix<f64>,
}

/// Everything needed for reduced solves and online estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel {
    pub truth_dim: usize,
    pub params: ParameterSpec,
    pub dt: f64,
    pub steps: usize,
    pub bases: Vec<LocalBasis>,
    /// `Φᵀ M Φ`, block-diagonal.
    pub mass: DMatrix<f64>,
    /// `Φᵀ A_ξ Φ`.
    pub operators: Vec<DMatrix<f64>>,
    /// `Φᵀ M f`.
    pub rhs: DVector<f64>,
    /// `Φᵀ M p0`.
    pub initial: DVector<f64>,
    pub estimator: OnlineEstimatorData,
}

fn quadratic(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

fn spd_factor(m: &DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    m.clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("reduced {what} matrix is not positive definite (degenerate basis)")))
}

impl ReducedModel {
    pub fn dim(&self) -> usize {
        self.bases.iter().map(|b| b.len()).sum()
    }

    pub fn basis_sizes(&self) -> Vec<usize> {
        self.bases.iter().map(|b| b.len()).collect()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut o = Vec::with_capacity(self.bases.len() + 1);
        let mut acc = 0;
        o.push(0);
        for b in &self.bases {
            acc += b.len();
            o.push(acc);
        }
        o
    }

    /// `(subdomain, local index)` of every reduced DoF.
    pub fn columns(&self) -> Vec<(usize, usize)> {
        self.bases
            .iter()
            .enumerate()
            .flat_map(|(s, b)| (0..b.len()).map(move |i| (s, i)))
            .collect()
    }

    pub fn operator_at(&self, mu: f64) -> Result<DMatrix<f64>> {
        let theta = self.params.coefficients(mu)?;
        let n = self.dim();
        Ok(self
            .operators
            .iter()
            .zip(&theta)
            .fold(DMatrix::zeros(n, n), |acc, (a, th)| acc + a * *th))
    }

    /// The DG function `Σ_T Σ_i c_i^T φ_i^T`.
    pub fn lift(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        if c.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "{} reduced coefficients for a model of dimension {}",
                c.len(),
                self.dim()
            )));
        }
        let mut v = DVector::zeros(self.truth_dim);
        let mut k = 0;
        for b in &self.bases {
            let mut block = v.rows_mut(b.dofs.start, b.dofs.len());
            for u in &b.vectors {
                block.axpy(c[k], u, 1.0);
                k += 1;
            }
        }
        Ok(v)
    }

    pub fn lift_trajectory(&self, traj: &Trajectory) -> Result<Trajectory> {
        Ok(Trajectory {
            dt: traj.dt,
            snapshots: traj.snapshots.iter().map(|c| self.lift(c)).collect::<Result<_>>()?,
        })
    }

    /// Dense `dim_truth × dim` matrix of lifted basis vectors.
    pub fn basis_matrix(&self) -> DMatrix<f64> {
        let mut phi = DMatrix::zeros(self.truth_dim, self.dim());
        for (k, (s, i)) in self.columns().into_iter().enumerate() {
            let b = &self.bases[s];
            phi.view_mut((b.dofs.start, k), (b.dofs.len(), 1)).copy_from(&b.vectors[i]);
        }
        phi
    }

    /// `p_red^0 = Π_red(p0)`, L²-orthogonal.
    pub fn initial_coefficients(&self) -> Result<DVector<f64>> {
        Ok(spd_factor(&self.mass, "mass")?.solve(&self.initial))
    }

    /// `(M_red + Δt b_red(μ)) c^n = Δt f_red + M_red c^{n−1}`.
    pub fn solve(&self, mu: f64) -> Result<Trajectory> {
        let a = self.operator_at(mu)?;
        let system = &self.mass + &a * self.dt;
        let chol = spd_factor(&system, "system")?;
        let load = &self.rhs * self.dt;
        let mut snapshots = Vec::with_capacity(self.steps + 1);
        snapshots.push(self.initial_coefficients()?);
        for n in 1..=self.steps {
            let b = &load + &self.mass * &snapshots[n - 1];
            snapshots.push(chol.solve(&b));
        }
        if snapshots.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical(format!("reduced solve at mu = {mu} produced non-finite values")));
        }
        Ok(Trajectory { dt: self.dt, snapshots })
    }

    /// Surrogate-mode bound from reduced quantities only.
    pub fn online_estimate(
        &self,
        traj: &Trajectory,
        mu: f64,
        anchors: Anchors,
        mode: IndicatorMode,
    ) -> Result<EstimatorBreakdown> {
        if mode == IndicatorMode::Oracle {
            return Err(Error::Unsupported(
                "the oracle indicator needs high-dimensional reconstruction solves and has no online form".into(),
            ));
        }
        let est = &self.estimator;
        if anchors.mu_tilde != est.mu_tilde {
            return Err(Error::Config(format!(
                "model was reduced with mu_tilde = {}, anchors ask for {}",
                est.mu_tilde, anchors.mu_tilde
            )));
        }
        self.params.check(mu)?;
        anchors.check(&self.params)?;
        if traj.snapshots.iter().any(|s| s.len() != self.dim()) {
            return Err(Error::Dimension("trajectory does not match the reduced dimension".into()));
        }
        let theta = self.params.coefficients(mu)?;
        let a = self.operator_at(mu)?;
        let chol = spd_factor(&self.mass, "mass")?;
        let s = chol.solve(&self.rhs);
        let combine = |ms: &[DMatrix<f64>]| {
            ms.iter()
                .zip(&theta)
                .fold(DMatrix::zeros(self.dim(), self.dim()), |acc, (m, th)| acc + m * *th)
        };
        let nc = combine(&est.nonconformity);
        let pen = combine(&est.penalty);
        let mut flux = DMatrix::zeros(self.dim(), self.dim());
        for (xi, row) in est.flux.iter().enumerate() {
            for (zeta, m) in row.iter().enumerate() {
                flux += m * (theta[xi] * theta[zeta]);
            }
        }

        let mut indicator_sq = Vec::with_capacity(traj.snapshots.len());
        let mut nonconformity_sq = Vec::with_capacity(traj.snapshots.len());
        let mut penalty_sq = Vec::with_capacity(traj.snapshots.len());
        for c in &traj.snapshots {
            let u = chol.solve(&(&a * c)) - &s;
            let element = quadratic(&est.element, &u) + 2.0 * u.dot(&est.element_f) + est.element_ff;
            indicator_sq.push(element.max(0.0) + quadratic(&flux, c).max(0.0));
            nonconformity_sq.push(quadratic(&nc, c));
            penalty_sq.push(quadratic(&pen, c));
        }
        let mut nonconformity_increment_sq = Vec::with_capacity(self.steps);
        let mut riesz_increment_sq = Vec::with_capacity(self.steps);
        for n in 1..traj.snapshots.len() {
            let d = &traj.snapshots[n] - &traj.snapshots[n - 1];
            nonconformity_increment_sq.push(quadratic(&est.nonconformity_mass, &d));
            let r = chol.solve(&(&a * &d));
            riesz_increment_sq.push(quadratic(&self.mass, &r));
        }
        let c0 = &traj.snapshots[0];
        let initial_error_sq = est.p0_mass - 2.0 * c0.dot(&est.oswald_p0) + quadratic(&est.oswald_mass, c0);

        let terms = TrajectoryTerms {
            dt: traj.dt,
            initial_error_sq,
            nonconformity_sq,
            nonconformity_increment_sq,
            riesz_increment_sq,
            indicator_sq,
            penalty_sq,
        };
        let theta_hat = self.params.coefficients(anchors.mu_hat)?;
        let c_eps = (0..est.local_ellipticity[0].len())
            .map(|t| est.local_ellipticity.iter().zip(&theta_hat).map(|(l, th)| th * l[t]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let constants = EstimatorConstants::new(c_eps, est.poincare_constant)?;
        EstimatorBreakdown::assemble(&terms, mu, anchors, &self.params, &constants, mode)
    }

    /// `solve` followed by `online_estimate`.
    pub fn solve_and_estimate(&self, mu: f64, anchors: Anchors) -> Result<(Trajectory, EstimatorBreakdown)> {
        let traj = self.solve(mu)?;
        let est = self.online_estimate(&traj, mu, anchors, IndicatorMode::Surrogate)?;
        Ok((traj, est))
    }
}

/// Builds and extends reduced models of one discretization.
pub struct Reductor<'a> {
    disc: &'a Discretization,
    weights: SurrogateWeights,
    h1: SparseMatrix,
    /// `V_ξ + P_ξ`, the DG-norm matrix per component.
    dg_norm: Vec<SparseMatrix>,
    neighbours: Vec<Vec<usize>>,
}

impl<'a> Reductor<'a> {
    pub fn new(disc: &'a Discretization, mu_tilde: f64) -> Result<Self> {
        let weights = SurrogateWeights::new(disc, mu_tilde)?;
        let dg_norm = disc
            .ops
            .volume
            .components()
            .iter()
            .zip(disc.ops.penalty.components())
            .map(|(v, p)| v.add_scaled(1.0, p, 1.0))
            .collect();
        let mesh = disc.mesh();
        let neighbours = (0..mesh.num_subdomains())
            .map(|s| {
                let mut n = mesh.subdomain_neighbours(s);
                n.push(s);
                n.sort_unstable();
                n
            })
            .collect();
        Ok(Self {
            disc,
            weights,
            h1: disc.space.h1_product(),
            dg_norm,
            neighbours,
        })
    }

    pub fn discretization(&self) -> &Discretization {
        self.disc
    }

    pub fn weights(&self) -> &SurrogateWeights {
        &self.weights
    }

    /// The `H¹(T)` product on the DoF block of subdomain `sub`.
    pub fn local_product(&self, sub: usize) -> SparseMatrix {
        local_block(&self.h1, self.disc.space.subdomain_dofs(sub))
    }

    /// `gram_schmidt({1, f|_T})` on every subdomain.
    pub fn initial_bases(&self) -> Vec<LocalBasis> {
        let f = &self.disc.f.coefficients;
        (0..self.disc.mesh().num_subdomains())
            .map(|s| {
                let dofs = self.disc.space.subdomain_dofs(s);
                let one = DVector::from_element(dofs.len(), 1.0);
                let fs = f.rows(dofs.start, dofs.len()).into_owned();
                LocalBasis {
                    subdomain: s,
                    vectors: gram_schmidt(&[one, fs], &self.local_product(s)),
                    dofs,
                }
            })
            .collect()
    }

    /// Constant first, then every local DG basis function: spans the full space.
    pub fn full_bases(&self) -> Vec<LocalBasis> {
        (0..self.disc.mesh().num_subdomains())
            .map(|s| {
                let dofs = self.disc.space.subdomain_dofs(s);
                let n = dofs.len();
                let mut candidates = vec![DVector::from_element(n, 1.0)];
                candidates.extend((0..n).map(|i| DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 })));
                LocalBasis {
                    subdomain: s,
                    vectors: gram_schmidt(&candidates, &self.local_product(s)),
                    dofs,
                }
            })
            .collect()
    }

    fn empty_model(&self) -> Result<ReducedModel> {
        let disc = self.disc;
        let n_xi = disc.params.num_components();
        let mesh = disc.mesh();
        let local_ellipticity = disc
            .fields
            .lambda
            .iter()
            .map(|comp| (0..mesh.num_triangles()).map(|t| comp[t] * min_eigenvalue(&disc.fields.kappa[t])).collect())
            .collect();
        let p0 = &disc.p0.coefficients;
        let z = || DMatrix::zeros(0, 0);
        Ok(ReducedModel {
            truth_dim: disc.dim(),
            params: disc.params.clone(),
            dt: disc.time.dt(),
            steps: disc.time.steps,
            bases: (0..mesh.num_subdomains())
                .map(|s| LocalBasis {
                    subdomain: s,
                    dofs: disc.space.subdomain_dofs(s),
                    vectors: Vec::new(),
                })
                .collect(),
            mass: z(),
            operators: vec![z(); n_xi],
            rhs: DVector::zeros(0),
            initial: DVector::zeros(0),
            estimator: OnlineEstimatorData {
                mu_tilde: self.weights.mu_tilde,
                poincare_constant: poincare_constant(&mesh.domain),
                local_ellipticity,
                nonconformity: vec![z(); n_xi],
                nonconformity_mass: z(),
                penalty: vec![z(); n_xi],
                element: z(),
                element_f: DVector::zeros(0),
                element_ff: self.weights.element.quadratic(&disc.f.coefficients),
                flux: vec![vec![z(); n_xi]; n_xi],
                p0_mass: disc.ops.mass.quadratic(p0),
                oswald_p0: DVector::zeros(0),
                oswald_mass: z(),
            },
        })
    }

    /// Projects all operators onto the given (orthonormal) local bases.
    pub fn project(&self, bases: Vec<LocalBasis>) -> Result<ReducedModel> {
        let mut model = self.empty_model()?;
        if bases.len() != model.bases.len() {
            return Err(Error::Dimension(format!(
                "{} local bases for {} subdomains",
                bases.len(),
                model.bases.len()
            )));
        }
        for (b, expected) in bases.iter().zip(&model.bases) {
            if b.dofs != expected.dofs || b.vectors.iter().any(|v| v.len() != b.dofs.len()) {
                return Err(Error::Dimension(format!("basis of subdomain {} has the wrong DoF block", b.subdomain)));
            }
        }
        let new = bases.into_iter().map(|b| b.vectors).collect();
        self.insert(&mut model, new)?;
        if model.bases.iter().any(|b| b.is_empty()) {
            return Err(Error::Dimension("every subdomain needs a nonempty basis".into()));
        }
        Ok(model)
    }

    /// Orthonormalizes the candidates against each local basis and appends
    /// what survives. Only rows and columns of new vectors are computed.
    /// Returns the number of vectors added per subdomain.
    pub fn extend(&self, model: &mut ReducedModel, candidates: Vec<Vec<DVector<f64>>>) -> Result<Vec<usize>> {
        if candidates.len() != model.bases.len() {
            return Err(Error::Dimension("one candidate list per subdomain expected".into()));
        }
        let accepted: Vec<Vec<DVector<f64>>> = candidates
            .par_iter()
            .enumerate()
            .map(|(s, c)| gram_schmidt_extend(&model.bases[s].vectors, c, &self.local_product(s)))
            .collect();
        let added = accepted.iter().map(|a| a.len()).collect();
        self.insert(model, accepted)?;
        Ok(added)
    }

    fn insert(&self, model: &mut ReducedModel, new: Vec<Vec<DVector<f64>>>) -> Result<()> {
        let disc = self.disc;
        let dim = disc.dim();
        let old_cols = model.columns();
        for (b, v) in model.bases.iter_mut().zip(new) {
            b.vectors.extend(v);
        }
        let cols = model.columns();
        let n = cols.len();
        let new_offsets = model.offsets();
        // old reduced index -> new reduced index
        let map: Vec<usize> = old_cols
            .iter()
            .map(|&(s, i)| new_offsets[s] + i)
            .collect();
        let fresh: Vec<usize> = {
            let mut is_old = vec![false; n];
            map.iter().for_each(|&k| is_old[k] = true);
            (0..n).filter(|&k| !is_old[k]).collect()
        };
        if fresh.is_empty() {
            return Ok(());
        }
        let phi: Vec<DVector<f64>> = cols.iter().map(|&(s, i)| model.bases[s].embed(i, dim)).collect();
        let sub_of: Vec<usize> = cols.iter().map(|c| c.0).collect();
        let oswald = disc.space.oswald_matrix();
        let mass = &disc.ops.mass;
        let d: Vec<DVector<f64>> = phi.par_iter().map(|p| p - oswald.mul_vec(p)).collect();
        let o_phi: Vec<DVector<f64>> = phi.par_iter().map(|p| oswald.mul_vec(p)).collect();

        // block-local operator projections
        let spaces = &disc.space;
        let neighbours = &self.neighbours;
        let local_entry = |i: usize, j: usize, image: &DVector<f64>| -> f64 {
            let (si, sj) = (sub_of[i], sub_of[j]);
            if !neighbours[sj].contains(&si) {
                return 0.0;
            }
            let r = spaces.subdomain_dofs(si);
            phi[i].rows(r.start, r.len()).dot(&image.rows(r.start, r.len()))
        };
        let local_image = |a: &SparseMatrix, j: usize| -> DVector<f64> {
            let mut out = DVector::zeros(dim);
            let r = spaces.subdomain_dofs(sub_of[j]);
            for &s in &neighbours[sub_of[j]] {
                for row in spaces.subdomain_dofs(s) {
                    out[row] = a
                        .row(row)
                        .filter(|&(c, _)| c >= r.start && c < r.end)
                        .map(|(c, v)| v * phi[j][c])
                        .sum();
                }
            }
            out
        };
        let symmetric = |old: &DMatrix<f64>, a: &SparseMatrix| -> DMatrix<f64> {
            let images: Vec<DVector<f64>> = fresh.par_iter().map(|&j| local_image(a, j)).collect();
            update_symmetric(old, &map, n, &fresh, |i, jf| local_entry(i, fresh[jf], &images[jf]))
        };
        model.mass = symmetric(&model.mass, mass);
        model.operators = disc
            .ops
            .operator
            .components()
            .iter()
            .zip(&model.operators)
            .map(|(a, old)| symmetric(old, a))
            .collect();
        model.rhs = update_vector(&model.rhs, &map, n, &fresh, |j| phi[j].dot(&disc.rhs));
        let mp0 = mass.mul_vec(&disc.p0.coefficients);
        model.initial = update_vector(&model.initial, &map, n, &fresh, |j| phi[j].dot(&mp0));

        // estimator data
        let global = |old: &DMatrix<f64>, left: &[DVector<f64>], x: &SparseMatrix, right: &[DVector<f64>]| {
            let images: Vec<DVector<f64>> = fresh.par_iter().map(|&j| x.mul_vec(&right[j])).collect();
            update_symmetric(old, &map, n, &fresh, |i, jf| left[i].dot(&images[jf]))
        };
        let est = &mut model.estimator;
        est.nonconformity = self
            .dg_norm
            .iter()
            .zip(&est.nonconformity)
            .map(|(x, old)| global(old, &d, x, &d))
            .collect();
        est.nonconformity_mass = global(&est.nonconformity_mass, &d, mass, &d);
        est.penalty = disc
            .ops
            .penalty
            .components()
            .iter()
            .zip(&est.penalty)
            .map(|(x, old)| symmetric(old, x))
            .collect();
        est.element = symmetric(&est.element, &self.weights.element);
        let wf = self.weights.element.mul_vec(&disc.f.coefficients);
        est.element_f = update_vector(&est.element_f, &map, n, &fresh, |j| phi[j].dot(&wf));
        est.oswald_mass = global(&est.oswald_mass, &o_phi, mass, &o_phi);
        est.oswald_p0 = update_vector(&est.oswald_p0, &map, n, &fresh, |j| o_phi[j].dot(&mp0));

        let f_phi: Vec<Vec<DVector<f64>>> = self
            .weights
            .flux_jumps
            .iter()
            .map(|f| phi.par_iter().map(|p| f.mul_vec(p)).collect())
            .collect();
        let n_xi = f_phi.len();
        let mut flux = vec![vec![DMatrix::zeros(0, 0); n_xi]; n_xi];
        for xi in 0..n_xi {
            for zeta in xi..n_xi {
                let m = update_general(&est.flux[xi][zeta], &map, n, &fresh, |i, j| f_phi[xi][i].dot(&f_phi[zeta][j]));
                if zeta != xi {
                    flux[zeta][xi] = m.transpose();
                }
                flux[xi][zeta] = m;
            }
        }
        est.flux = flux;
        Ok(())
    }
}

/// Copies `old` into an `n × n` matrix through `map` and fills the rows and
/// columns listed in `fresh` from `entry(i, index into fresh)`.
fn update_symmetric<F>(old: &DMatrix<f64>, map: &[usize], n: usize, fresh: &[usize], entry: F) -> DMatrix<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let mut m = DMatrix::zeros(n, n);
    for (a, &i) in map.iter().enumerate() {
        for (b, &j) in map.iter().enumerate() {
            m[(i, j)] = old[(a, b)];
        }
    }
    let columns: Vec<Vec<f64>> = (0..fresh.len())
        .into_par_iter()
        .map(|jf| (0..n).map(|i| entry(i, jf)).collect())
        .collect();
    for (jf, col) in columns.iter().enumerate() {
        let j = fresh[jf];
        for (i, &v) in col.iter().enumerate() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    // fresh-fresh entries are computed twice; symmetrize them exactly
    for &i in fresh {
        for &j in fresh {
            if i < j {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
    }
    m
}

fn update_general<F>(old: &DMatrix<f64>, map: &[usize], n: usize, fresh: &[usize], entry: F) -> DMatrix<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let mut m = DMatrix::zeros(n, n);
    for (a, &i) in map.iter().enumerate() {
        for (b, &j) in map.iter().enumerate() {
            m[(i, j)] = old[(a, b)];
        }
    }
    let lines: Vec<(Vec<f64>, Vec<f64>)> = fresh
        .par_iter()
        .map(|&j| ((0..n).map(|i| entry(i, j)).collect(), (0..n).map(|i| entry(j, i)).collect()))
        .collect();
    for (&j, (col, row)) in fresh.iter().zip(&lines) {
        for i in 0..n {
            m[(i, j)] = col[i];
            m[(j, i)] = row[i];
        }
    }
    m
}

fn update_vector<F>(old: &DVector<f64>, map: &[usize], n: usize, fresh: &[usize], entry: F) -> DVector<f64>
where
    F: Fn(usize) -> f64,
{
    let mut v = DVector::zeros(n);
    for (a, &i) in map.iter().enumerate() {
        v[i] = old[a];
    }
    for &j in fresh {
        v[j] = entry(j);
    }
    v
}

const MODEL_FORMAT: &str = "lrbms-reduced-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct BasisHeader {
    subdomain: usize,
    dof_start: usize,
    dof_end: usize,
    size: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    version: u32,
    truth_dim: usize,
    params: ParameterSpec,
    dt: f64,
    steps: usize,
    mu_tilde: f64,
    poincare_constant: f64,
    element_ff: f64,
    p0_mass: f64,
    bases: Vec<BasisHeader>,
    blocks: Vec<BlockHeader>,
}

impl ReducedModel {
    fn named_blocks(&self) -> Vec<(String, DMatrix<f64>)> {
        let est = &self.estimator;
        let col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        let mut out = Vec::new();
        for b in &self.bases {
            let mut m = DMatrix::zeros(b.len(), b.local_dim());
            for (i, v) in b.vectors.iter().enumerate() {
                m.set_row(i, &v.transpose());
            }
            out.push((format!("basis_{}", b.subdomain), m));
        }
        out.push(("mass".into(), self.mass.clone()));
        for (xi, a) in self.operators.iter().enumerate() {
            out.push((format!("operator_{xi}"), a.clone()));
        }
        out.push(("rhs".into(), col(&self.rhs)));
        out.push(("initial".into(), col(&self.initial)));
        let ell = &est.local_ellipticity;
        out.push((
            "local_ellipticity".into(),
            DMatrix::from_fn(ell.len(), ell[0].len(), |i, j| ell[i][j]),
        ));
        for (xi, m) in est.nonconformity.iter().enumerate() {
            out.push((format!("nonconformity_{xi}"), m.clone()));
        }
        out.push(("nonconformity_mass".into(), est.nonconformity_mass.clone()));
        for (xi, m) in est.penalty.iter().enumerate() {
            out.push((format!("penalty_{xi}"), m.clone()));
        }
        out.push(("element".into(), est.element.clone()));
        out.push(("element_f".into(), col(&est.element_f)));
        for (xi, row) in est.flux.iter().enumerate() {
            for (zeta, m) in row.iter().enumerate() {
                out.push((format!("flux_{xi}_{zeta}"), m.clone()));
            }
        }
        out.push(("oswald_p0".into(), col(&est.oswald_p0)));
        out.push(("oswald_mass".into(), est.oswald_mass.clone()));
        out
    }

    /// Writes one JSON header line followed by the blocks it lists, each as
    /// little-endian `f64` in row-major order.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let blocks = self.named_blocks();
        let header = ModelHeader {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            truth_dim: self.truth_dim,
            params: self.params.clone(),
            dt: self.dt,
            steps: self.steps,
            mu_tilde: self.estimator.mu_tilde,
            poincare_constant: self.estimator.poincare_constant,
            element_ff: self.estimator.element_ff,
            p0_mass: self.estimator.p0_mass,
            bases: self
                .bases
                .iter()
                .map(|b| BasisHeader {
                    subdomain: b.subdomain,
                    dof_start: b.dofs.start,
                    dof_end: b.dofs.end,
                    size: b.len(),
                })
                .collect(),
            blocks: blocks
                .iter()
                .map(|(name, m)| BlockHeader {
                    name: name.clone(),
                    rows: m.nrows(),
                    cols: m.ncols(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for (_, m) in &blocks {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    w.write_all(&m[(i, j)].to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: ModelHeader =
            serde_json::from_str(&line).map_err(|e| Error::Input(format!("bad model header: {e}")))?;
        if header.format != MODEL_FORMAT || header.version != MODEL_VERSION {
            return Err(Error::Input(format!(
                "unsupported model format {} version {}",
                header.format, header.version
            )));
        }
        let mut blocks = std::collections::HashMap::new();
        let mut buf = [0u8; 8];
        for b in &header.blocks {
            let mut m = DMatrix::zeros(b.rows, b.cols);
            for i in 0..b.rows {
                for j in 0..b.cols {
                    reader
                        .read_exact(&mut buf)
                        .map_err(|e| Error::Input(format!("truncated block {}: {e}", b.name)))?;
                    m[(i, j)] = f64::from_le_bytes(buf);
                }
            }
            blocks.insert(b.name.clone(), m);
        }
        let mut take = |name: &str| {
            blocks
                .remove(name)
                .ok_or_else(|| Error::Input(format!("model file lacks block {name}")))
        };
        let vector = |m: DMatrix<f64>| DVector::from_column_slice(m.as_slice());
        let n_xi = header.params.num_components();
        let mut bases = Vec::new();
        for b in &header.bases {
            let m = take(&format!("basis_{}", b.subdomain))?;
            if m.nrows() != b.size || m.ncols() != b.dof_end - b.dof_start {
                return Err(Error::Input(format!("basis block of subdomain {} has the wrong shape", b.subdomain)));
            }
            bases.push(LocalBasis {
                subdomain: b.subdomain,
                dofs: b.dof_start..b.dof_end,
                vectors: (0..m.nrows()).map(|i| m.row(i).transpose()).collect(),
            });
        }
        let mass = take("mass")?;
        let operators = (0..n_xi).map(|xi| take(&format!("operator_{xi}"))).collect::<Result<_>>()?;
        let rhs = vector(take("rhs")?);
        let initial = vector(take("initial")?);
        let ell = take("local_ellipticity")?;
        let local_ellipticity = (0..ell.nrows()).map(|i| ell.row(i).iter().copied().collect()).collect();
        let nonconformity = (0..n_xi).map(|xi| take(&format!("nonconformity_{xi}"))).collect::<Result<_>>()?;
        let nonconformity_mass = take("nonconformity_mass")?;
        let penalty = (0..n_xi).map(|xi| take(&format!("penalty_{xi}"))).collect::<Result<_>>()?;
        let element = take("element")?;
        let element_f = vector(take("element_f")?);
        let flux = (0..n_xi)
            .map(|xi| (0..n_xi).map(|zeta| take(&format!("flux_{xi}_{zeta}"))).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let oswald_p0 = vector(take("oswald_p0")?);
        let oswald_mass = take("oswald_mass")?;
        let model = ReducedModel {
            truth_dim: header.truth_dim,
            params: header.params,
            dt: header.dt,
            steps: header.steps,
            bases,
            mass,
            operators,
            rhs,
            initial,
            estimator: OnlineEstimatorData {
                mu_tilde: header.mu_tilde,
                poincare_constant: header.poincare_constant,
                local_ellipticity,
                nonconformity,
                nonconformity_mass,
                penalty,
                element,
                element_f,
                element_ff: header.element_ff,
                flux,
                p0_mass: header.p0_mass,
                oswald_p0,
                oswald_mass,
            },
        };
        let n = model.dim();
        if model.mass.nrows() != n || model.operators.iter().any(|a: &DMatrix<f64>| a.nrows() != n) {
            return Err(Error::Input("model blocks do not match the basis sizes".into()));
        }
        Ok(model)
    }
}
