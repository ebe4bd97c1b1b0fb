//! Implicit Euler truth solves, Riesz representatives, elliptic
//! reconstruction and the time-stepping residual.

use std::sync::Arc;

use nalgebra::{DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{assemble_affine_operator, CoefficientField, DgOperators, ParameterSpec};
use crate::grid::Mesh;
use crate::linalg::{SparseMatrix, SpdSolver, LINEAR_SOLVER_TOLERANCE};
use crate::space::{DgFunction, DgSpace};

/// Uniform time grid on `[0, T_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end > 0.0) || steps == 0 {
            return Err(Error::Config(format!("invalid time grid: T_end = {t_end}, steps = {steps}")));
        }
        Ok(Self { t_end, steps })
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.steps as f64
    }
}

/// Piecewise linear in time, with supporting points `p^0, …, p^{n_t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub snapshots: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn num_steps(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn t_end(&self) -> f64 {
        self.dt * self.num_steps() as f64
    }

    /// Index `n ≥ 1` of the interval `((n−1)Δt, nΔt]` containing `t`.
    pub fn interval(&self, t: f64) -> Result<usize> {
        let t_end = self.t_end();
        if !(t > 0.0 && t <= t_end * (1.0 + 1e-14)) {
            return Err(Error::Input(format!("time {t} outside (0, {t_end}]")));
        }
        Ok(((t / self.dt).ceil() as usize).clamp(1, self.num_steps()))
    }

    /// `p(t)` by linear interpolation on interval `n`.
    pub fn value_in(&self, n: usize, t: f64) -> DVector<f64> {
        let s = (t - (n - 1) as f64 * self.dt) / self.dt;
        &self.snapshots[n - 1] * (1.0 - s) + &self.snapshots[n] * s
    }

    pub fn value(&self, t: f64) -> Result<DVector<f64>> {
        if t == 0.0 {
            return Ok(self.snapshots[0].clone());
        }
        Ok(self.value_in(self.interval(t)?, t))
    }

    pub fn snapshot(&self, n: usize) -> DgFunction {
        DgFunction::new(self.snapshots[n].clone())
    }
}

/// Solves `(M + Δt B) p^n = Δt f + M p^{n−1}` for `n = 1..n_t`.
pub fn solve_parabolic(
    operator: &SparseMatrix,
    mass: &SparseMatrix,
    rhs: &DVector<f64>,
    p0: &DVector<f64>,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    let dim = mass.nrows();
    if operator.nrows() != dim || rhs.len() != dim || p0.len() != dim {
        return Err(Error::Dimension(format!(
            "system of size {dim} with operator {}, rhs {}, initial value {}",
            operator.nrows(),
            rhs.len(),
            p0.len()
        )));
    }
    if !(dt > 0.0) || steps == 0 {
        return Err(Error::Config(format!("invalid time stepping dt = {dt}, steps = {steps}")));
    }
    let system = mass.add_scaled(1.0, operator, dt);
    let solver = SpdSolver::factor(&system).map_err(|e| {
        Error::Numerical(format!("implicit Euler system: {e}; the penalty factor may be too small for this mesh"))
    })?;
    let load = rhs * dt;
    let mut snapshots = Vec::with_capacity(steps + 1);
    snapshots.push(p0.clone());
    for n in 1..=steps {
        let b = &load + mass.mul_vec(&snapshots[n - 1]);
        let (x, rel) = solver.solve_with_tolerance(&b, LINEAR_SOLVER_TOLERANCE);
        if rel > LINEAR_SOLVER_TOLERANCE {
            return Err(Error::NonConvergence { step: n, residual: rel });
        }
        snapshots.push(x);
    }
    Ok(Trajectory { dt, snapshots })
}

/// Inverse of the block-diagonal DG mass matrix.
#[derive(Debug, Clone)]
pub struct MassInverse {
    blocks: Vec<Matrix3<f64>>,
}

impl MassInverse {
    pub fn new(mass: &SparseMatrix) -> Result<Self> {
        let n = mass.nrows() / 3;
        let blocks = (0..n)
            .map(|t| {
                let b = Matrix3::from_fn(|i, j| mass.get(3 * t + i, 3 * t + j));
                b.try_inverse()
                    .ok_or_else(|| Error::Numerical(format!("singular mass block on triangle {t}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (t, b) in self.blocks.iter().enumerate() {
            let x = b * v.fixed_rows::<3>(3 * t);
            out.fixed_rows_mut::<3>(3 * t).copy_from(&x);
        }
        out
    }
}

/// `B(q)` with `(B(q), q')_{L²} = b(q, q')` for all DG `q'`.
pub fn riesz_representative(q: &DgFunction, operator: &SparseMatrix, mass: &MassInverse) -> DgFunction {
    DgFunction::new(mass.apply(&operator.mul_vec(&q.coefficients)))
}

/// Closed-form implicit Euler residual at time `t`:
/// `R_T(t) = −((nΔt − t)/Δt) B(p^n − p^{n−1})` on `((n−1)Δt, nΔt]`.
pub fn time_residual(
    traj: &Trajectory,
    operator: &SparseMatrix,
    mass: &MassInverse,
    t: f64,
) -> Result<DgFunction> {
    let n = traj.interval(t)?;
    let factor = (n as f64 * traj.dt - t) / traj.dt;
    let diff = &traj.snapshots[n] - &traj.snapshots[n - 1];
    Ok(DgFunction::new(-factor * mass.apply(&operator.mul_vec(&diff))))
}

/// Riesz lift of `(∂_t p(t), ·) + b(p(t), ·) − (f, ·)` evaluated on
/// interval `n` (so `t = (n−1)Δt` is the right limit).
pub fn general_time_residual(
    traj: &Trajectory,
    operator: &SparseMatrix,
    mass_matrix: &SparseMatrix,
    mass: &MassInverse,
    rhs: &DVector<f64>,
    n: usize,
    t: f64,
) -> DgFunction {
    let dpdt = (&traj.snapshots[n] - &traj.snapshots[n - 1]) / traj.dt;
    let p = traj.value_in(n, t);
    let functional = mass_matrix.mul_vec(&dpdt) + operator.mul_vec(&p) - rhs;
    DgFunction::new(mass.apply(&functional))
}

/// `Q_h ∩ H¹₀`: continuous P1 functions vanishing on the boundary, one DoF
/// per interior vertex.
#[derive(Debug, Clone)]
pub struct ConformingSpace {
    vertex_dof: Vec<Option<usize>>,
    dim: usize,
    prolongation: SparseMatrix,
}

impl ConformingSpace {
    pub fn new(space: &DgSpace) -> Self {
        let mesh = space.mesh();
        let mut vertex_dof = vec![None; mesh.vertices.len()];
        let mut dim = 0;
        for (v, slot) in vertex_dof.iter_mut().enumerate() {
            if !mesh.vertex_on_boundary[v] {
                *slot = Some(dim);
                dim += 1;
            }
        }
        let mut triplets = Vec::new();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            for (k, &v) in tri.vertices.iter().enumerate() {
                if let Some(c) = vertex_dof[v] {
                    triplets.push((space.dof(t, k), c, 1.0));
                }
            }
        }
        let prolongation = SparseMatrix::from_triplets(space.dim(), dim, &triplets);
        Self {
            vertex_dof,
            dim,
            prolongation,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertex_dof(&self, v: usize) -> Option<usize> {
        self.vertex_dof[v]
    }

    /// Embedding into the DG space (`dim_DG × dim`).
    pub fn prolongation(&self) -> &SparseMatrix {
        &self.prolongation
    }

    pub fn prolongate(&self, c: &DVector<f64>) -> DgFunction {
        DgFunction::new(self.prolongation.mul_vec(c))
    }

    /// `Pᵀ A P`.
    pub fn restrict_operator(&self, a: &SparseMatrix) -> SparseMatrix {
        let p = &self.prolongation;
        let owner: Vec<Option<usize>> = (0..p.nrows()).map(|i| p.row(i).next().map(|(j, _)| j)).collect();
        let triplets: Vec<_> = a
            .triplets()
            .filter_map(|(i, j, v)| Some((owner[i]?, owner[j]?, v)))
            .collect();
        SparseMatrix::from_triplets(self.dim, self.dim, &triplets)
    }
}

/// The truth discretization: space, data, assembled operators and time grid.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub space: DgSpace,
    pub fields: CoefficientField,
    pub params: ParameterSpec,
    pub ops: DgOperators,
    /// Source term as a DG function, so `Π̃ f = f`.
    pub f: DgFunction,
    /// `(f, φ_i)`.
    pub rhs: DVector<f64>,
    pub p0: DgFunction,
    pub time: TimeGrid,
    pub mass_inverse: MassInverse,
}

impl Discretization {
    pub fn new(
        space: DgSpace,
        fields: CoefficientField,
        params: ParameterSpec,
        sigma: f64,
        f: DgFunction,
        p0: DgFunction,
        time: TimeGrid,
    ) -> Result<Self> {
        space.check(&f)?;
        space.check(&p0)?;
        let ops = assemble_affine_operator(&space, &fields, &params, sigma)?;
        let rhs = ops.mass.mul_vec(&f.coefficients);
        let mass_inverse = MassInverse::new(&ops.mass)?;
        Ok(Self {
            space,
            fields,
            params,
            ops,
            f,
            rhs,
            p0,
            time,
            mass_inverse,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        self.space.mesh()
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn operator_at(&self, mu: f64) -> Result<SparseMatrix> {
        self.ops.operator.evaluate_at(mu)
    }

    pub fn solve(&self, mu: f64) -> Result<Trajectory> {
        let a = self.operator_at(mu)?;
        solve_parabolic(&a, &self.ops.mass, &self.rhs, &self.p0.coefficients, self.time.dt(), self.time.steps)
    }

    /// Same problem on the once-refined mesh with `steps` time steps; data
    /// are carried over exactly. Returns the refined discretization and
    /// the prolongation from this space into it.
    pub fn refined(&self, steps: usize) -> Result<(Discretization, SparseMatrix)> {
        let fine_mesh = Arc::new(self.mesh().refined()?);
        let fine_space = DgSpace::new(fine_mesh);
        let transfer = self.space.prolongation_to(&fine_space)?;
        let fields = self.fields.transfer(self.mesh(), fine_space.mesh())?;
        let f = DgFunction::new(transfer.mul_vec(&self.f.coefficients));
        let p0 = DgFunction::new(transfer.mul_vec(&self.p0.coefficients));
        let fine = Discretization::new(
            fine_space,
            fields,
            self.params.clone(),
            self.ops.penalty_factor,
            f,
            p0,
            TimeGrid::new(self.time.t_end, steps)?,
        )?;
        Ok((fine, transfer))
    }
}

/// Solver for the elliptic reconstruction problem
/// `b(E, q') = (B(q̃) − Π̃f + f, q')` on a conforming reference space at a
/// fixed parameter.
///
/// The reference space is the conforming subspace of either the same DG
/// space or a nested refinement of it; `transfer` maps source DG functions
/// into the reference DG space.
#[derive(Debug)]
pub struct EllipticReconstructor {
    mu: f64,
    conforming: ConformingSpace,
    reference_mass: SparseMatrix,
    transfer: Option<SparseMatrix>,
    solver: SpdSolver,
}

impl EllipticReconstructor {
    pub fn new(reference: &Discretization, mu: f64, transfer: Option<SparseMatrix>) -> Result<Self> {
        let conforming = ConformingSpace::new(&reference.space);
        let a = reference.operator_at(mu)?;
        let reduced = conforming.restrict_operator(&a);
        let solver = SpdSolver::factor(&reduced).map_err(|e| {
            Error::Config(format!("singular elliptic reconstruction system: {e}"))
        })?;
        Ok(Self {
            mu,
            conforming,
            reference_mass: reference.ops.mass.clone(),
            transfer,
            solver,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn conforming_space(&self) -> &ConformingSpace {
        &self.conforming
    }

    /// Maps a function of the source space into the reference DG space.
    pub fn to_reference(&self, q: &DVector<f64>) -> DVector<f64> {
        match &self.transfer {
            Some(t) => t.mul_vec(q),
            None => q.clone(),
        }
    }

    /// Reconstruction for the datum `g = B(q̃) − Π̃f + f`, given as a
    /// function of the source DG space. Returns the reconstruction as a
    /// function of the reference DG space.
    pub fn reconstruct(&self, datum: &DVector<f64>) -> Result<DgFunction> {
        let load = self.reference_mass.mul_vec(&self.to_reference(datum));
        let b = self.conforming.prolongation().transpose_mul_vec(&load);
        let (c, rel) = self.solver.solve_with_tolerance(&b, LINEAR_SOLVER_TOLERANCE);
        if rel > 1e3 * LINEAR_SOLVER_TOLERANCE {
            return Err(Error::NonConvergence { step: 0, residual: rel });
        }
        Ok(self.conforming.prolongate(&c))
    }
}

/// `E(q̃)` for a truth DG function `q̃`, on the given reconstructor.
pub fn elliptic_reconstruction(
    q: &DgFunction,
    disc: &Discretization,
    mu: f64,
    reconstructor: &EllipticReconstructor,
) -> Result<DgFunction> {
    let a = disc.operator_at(mu)?;
    let b = riesz_representative(q, &a, &disc.mass_inverse);
    // Π̃f = f for f in the DG space
    reconstructor.reconstruct(&b.coefficients)
}
