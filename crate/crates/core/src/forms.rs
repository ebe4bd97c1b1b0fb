//! Parameter-separable SWIPDG operators.
//!
//! For every affine component `ξ` the bilinear form
//!
//! ```text
//! b_ξ(p, q) = Σ_t ∫_t (λ_ξ κ ∇p)·∇q
//!           + Σ_e [ b_c^e(q, p) + b_c^e(p, q) + b_p^e(p, q) ]
//! ```
//!
//! is assembled into its own sparse matrix, summing over all inner faces
//! (within subdomains and on coarse coupling faces alike) and all boundary
//! faces. Diffusion-weighted averages use `ω⁻ = δ⁺/(δ⁺+δ⁻)`,
//! `ω⁺ = δ⁻/(δ⁺+δ⁻)` with `δ^± = n·κ^±·n`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Face, Mesh, Point};
use crate::linalg::SparseMatrix;
use crate::space::{local_mass, DgSpace};

/// Affine parameter function `θ(μ) = constant + slope·μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineCoefficient {
    pub constant: f64,
    pub slope: f64,
}

impl AffineCoefficient {
    pub fn eval(&self, mu: f64) -> f64 {
        self.constant + self.slope * mu
    }
}

/// Parameter dependence `λ(μ) = Σ_ξ θ_ξ(μ) λ_ξ` over an interval `P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub thetas: Vec<AffineCoefficient>,
    pub range: (f64, f64),
}

impl ParameterSpec {
    /// `θ = (1, 1 − μ)`, i.e. `λ(μ) = λ_1 + (1 − μ) λ_c`.
    pub fn channel(range: (f64, f64)) -> Result<Self> {
        Self::new(
            vec![
                AffineCoefficient { constant: 1.0, slope: 0.0 },
                AffineCoefficient { constant: 1.0, slope: -1.0 },
            ],
            range,
        )
    }

    /// One component with `θ_1 ≡ 1`.
    pub fn nonparametric(range: (f64, f64)) -> Result<Self> {
        Self::new(vec![AffineCoefficient { constant: 1.0, slope: 0.0 }], range)
    }

    pub fn new(thetas: Vec<AffineCoefficient>, range: (f64, f64)) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::Config("at least one affine component is required".into()));
        }
        if !(range.0 <= range.1) {
            return Err(Error::Config(format!("empty parameter interval {range:?}")));
        }
        // affine thetas: checking the endpoints covers the whole interval
        for mu in [range.0, range.1] {
            let values: Vec<f64> = thetas.iter().map(|t| t.eval(mu)).collect();
            if values.iter().any(|&v| v < 0.0) {
                return Err(Error::Config(format!("negative coefficient at mu = {mu}: {values:?}")));
            }
            if values.iter().all(|&v| v <= 0.0) {
                return Err(Error::Config(format!("all coefficients vanish at mu = {mu}")));
            }
        }
        Ok(Self { thetas, range })
    }

    pub fn num_components(&self) -> usize {
        self.thetas.len()
    }

    pub fn contains(&self, mu: f64) -> bool {
        let tol = 1e-12 * (1.0 + self.range.0.abs().max(self.range.1.abs()));
        mu >= self.range.0 - tol && mu <= self.range.1 + tol
    }

    pub fn check(&self, mu: f64) -> Result<()> {
        if self.contains(mu) {
            Ok(())
        } else {
            Err(Error::Parameter(format!(
                "mu = {mu} outside the admissible interval [{}, {}]",
                self.range.0, self.range.1
            )))
        }
    }

    /// `(θ_1(μ), …, θ_Ξ(μ))`.
    pub fn coefficients(&self, mu: f64) -> Result<Vec<f64>> {
        self.check(mu)?;
        Ok(self.thetas.iter().map(|t| t.eval(mu)).collect())
    }

    /// `n` equidistant points including both endpoints.
    pub fn uniform(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![self.range.0],
            _ => (0..n)
                .map(|i| self.range.0 + (self.range.1 - self.range.0) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }

    /// Midpoints of `n` equal cells of the range; never hits an endpoint.
    pub fn midpoints(&self, n: usize) -> Vec<f64> {
        let w = (self.range.1 - self.range.0) / n as f64;
        (0..n).map(|i| self.range.0 + w * (i as f64 + 0.5)).collect()
    }
}

/// Piecewise constant data per fine triangle: the tensor `κ_ε` and the
/// scalar components `λ_ξ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientField {
    pub kappa: Vec<Matrix2<f64>>,
    /// `lambda[ξ][t]`.
    pub lambda: Vec<Vec<f64>>,
}

impl CoefficientField {
    pub fn new(kappa: Vec<Matrix2<f64>>, lambda: Vec<Vec<f64>>) -> Result<Self> {
        let field = Self { kappa, lambda };
        field.validate()?;
        Ok(field)
    }

    /// `κ = I`, `λ_1 = 1` and no further components.
    pub fn identity(num_triangles: usize) -> Self {
        Self {
            kappa: vec![Matrix2::identity(); num_triangles],
            lambda: vec![vec![1.0; num_triangles]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.kappa.len();
        if self.lambda.is_empty() {
            return Err(Error::Data("no lambda components".into()));
        }
        for (xi, comp) in self.lambda.iter().enumerate() {
            if comp.len() != n {
                return Err(Error::Data(format!("lambda_{} has {} values for {n} triangles", xi + 1, comp.len())));
            }
            if let Some(t) = comp.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Data(format!("lambda_{} is negative or not finite on triangle {t}", xi + 1)));
            }
        }
        if let Some(t) = self.lambda[0].iter().position(|&v| v <= 0.0) {
            return Err(Error::Data(format!("lambda_1 is not positive on triangle {t}")));
        }
        for (t, k) in self.kappa.iter().enumerate() {
            let scale = k.amax().max(f64::MIN_POSITIVE);
            if (k[(0, 1)] - k[(1, 0)]).abs() > 1e-14 * scale {
                return Err(Error::Data(format!("kappa is not symmetric on triangle {t}")));
            }
            if !(min_eigenvalue(k) > 0.0) {
                return Err(Error::Data(format!("kappa is not positive definite on triangle {t}")));
            }
        }
        Ok(())
    }

    pub fn num_components(&self) -> usize {
        self.lambda.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.kappa.len()
    }

    /// `λ(μ)` on triangle `t` for coefficient values `theta`.
    pub fn lambda_at(&self, t: usize, theta: &[f64]) -> f64 {
        self.lambda.iter().zip(theta).map(|(l, th)| th * l[t]).sum()
    }

    /// Smallest eigenvalue of `λ(μ)κ` on triangle `t`.
    pub fn local_min_eigenvalue(&self, t: usize, theta: &[f64]) -> f64 {
        self.lambda_at(t, theta) * min_eigenvalue(&self.kappa[t])
    }

    /// `c_ε(μ)`: minimum over all triangles of the smallest eigenvalue of `λ(μ)κ`.
    pub fn min_eigenvalue(&self, theta: &[f64]) -> f64 {
        (0..self.num_triangles())
            .map(|t| self.local_min_eigenvalue(t, theta))
            .fold(f64::INFINITY, f64::min)
    }

    /// The same data on a nested refinement.
    pub fn transfer(&self, coarse: &Mesh, fine: &Mesh) -> Result<Self> {
        let parents: Vec<usize> = fine
            .triangles
            .iter()
            .map(|t| coarse.locate(t.centroid).ok_or_else(|| Error::Dimension("meshes are not nested".into())))
            .collect::<Result<_>>()?;
        Ok(Self {
            kappa: parents.iter().map(|&p| self.kappa[p]).collect(),
            lambda: self
                .lambda
                .iter()
                .map(|comp| parents.iter().map(|&p| comp[p]).collect())
                .collect(),
        })
    }
}

pub fn min_eigenvalue(k: &Matrix2<f64>) -> f64 {
    let (a, b, d) = (k[(0, 0)], 0.5 * (k[(0, 1)] + k[(1, 0)]), k[(1, 1)]);
    let mean = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    mean - r
}

/// `δ = n·κ·n`.
pub fn normal_diffusivity(kappa: &Matrix2<f64>, normal: [f64; 2]) -> f64 {
    let n = Vector2::new(normal[0], normal[1]);
    n.dot(&(kappa * n))
}

/// Locally adaptive SWIPDG weights of one face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwipdgWeights {
    pub omega_minus: f64,
    pub omega_plus: f64,
    pub sigma_eps: f64,
}

/// Weights of an inner face from `δ⁻`, `δ⁺`.
pub fn swipdg_weights(delta_minus: f64, delta_plus: f64) -> Result<SwipdgWeights> {
    let sum = delta_minus + delta_plus;
    if !(sum > 0.0) {
        return Err(Error::Data(format!(
            "degenerate normal diffusivities δ⁻ = {delta_minus}, δ⁺ = {delta_plus}"
        )));
    }
    Ok(SwipdgWeights {
        omega_minus: delta_plus / sum,
        omega_plus: delta_minus / sum,
        sigma_eps: delta_minus * delta_plus / sum,
    })
}

/// Boundary faces: `ω⁻ = 1`, `σ_ε = δ⁻`.
pub fn boundary_weights(delta_minus: f64) -> SwipdgWeights {
    SwipdgWeights {
        omega_minus: 1.0,
        omega_plus: 0.0,
        sigma_eps: delta_minus,
    }
}

pub fn face_weights(fields: &CoefficientField, face: &Face) -> Result<SwipdgWeights> {
    let dm = normal_diffusivity(&fields.kappa[face.minus], face.normal);
    match face.plus {
        Some(p) => swipdg_weights(dm, normal_diffusivity(&fields.kappa[p], face.normal)),
        None => Ok(boundary_weights(dm)),
    }
}

/// `Σ_ξ θ_ξ(μ) A_ξ` with one pattern shared by all components.
#[derive(Debug, Clone)]
pub struct AffineForm {
    components: Vec<SparseMatrix>,
    params: ParameterSpec,
}

impl AffineForm {
    pub fn new(components: Vec<SparseMatrix>, params: ParameterSpec) -> Result<Self> {
        if components.len() != params.num_components() {
            return Err(Error::Dimension(format!(
                "{} matrices for {} affine coefficients",
                components.len(),
                params.num_components()
            )));
        }
        if components.iter().any(|c| !c.same_pattern(&components[0])) {
            return Err(Error::Dimension("affine components with different sparsity patterns".into()));
        }
        Ok(Self { components, params })
    }

    pub fn components(&self) -> &[SparseMatrix] {
        &self.components
    }

    pub fn component(&self, xi: usize) -> &SparseMatrix {
        &self.components[xi]
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn params(&self) -> &ParameterSpec {
        &self.params
    }

    pub fn evaluate_at(&self, mu: f64) -> Result<SparseMatrix> {
        let theta = self.params.coefficients(mu)?;
        let refs: Vec<&SparseMatrix> = self.components.iter().collect();
        SparseMatrix::linear_combination(&theta, &refs)
    }

    /// `Σ_ξ θ_ξ(μ) xᵀ A_ξ x`.
    pub fn quadratic(&self, mu: f64, x: &DVector<f64>) -> Result<f64> {
        let theta = self.params.coefficients(mu)?;
        Ok(theta
            .iter()
            .zip(&self.components)
            .filter(|(t, _)| **t != 0.0)
            .map(|(t, a)| t * a.quadratic(x))
            .sum())
    }
}

/// Local face matrices of one face, per affine component, on the DoFs
/// `dofs` (`t⁻` first, then `t⁺` if present).
#[derive(Debug, Clone)]
pub struct FaceMatrices {
    pub dofs: Vec<usize>,
    /// `C[i][j] = b_c^e(φ_j, φ_i) = −∫_e {λ_ξ κ ∇φ_j}·n [φ_i]`.
    pub coupling: Vec<DMatrix<f64>>,
    /// `P[i][j] = b_p^e(φ_j, φ_i)`.
    pub penalty: Vec<DMatrix<f64>>,
    /// `σ_e` per component, without the parameter coefficient.
    pub penalty_coefficient: Vec<f64>,
}

pub fn face_matrices(
    space: &DgSpace,
    fields: &CoefficientField,
    face: &Face,
    sigma: f64,
) -> Result<FaceMatrices> {
    let mesh = space.mesh();
    let weights = face_weights(fields, face)?;
    let sides: Vec<(usize, f64, f64)> = std::iter::once((face.minus, weights.omega_minus, 1.0))
        .chain(face.plus.map(|p| (p, weights.omega_plus, -1.0)))
        .collect();
    let dofs: Vec<usize> = sides
        .iter()
        .flat_map(|&(t, _, _)| (0..3).map(move |k| 3 * t + k))
        .collect();
    let m = dofs.len();
    let n = Vector2::new(face.normal[0], face.normal[1]);

    let mut coupling = Vec::with_capacity(fields.num_components());
    let mut penalty = Vec::with_capacity(fields.num_components());
    let mut penalty_coefficient = Vec::with_capacity(fields.num_components());
    for comp in &fields.lambda {
        // flux of each basis function: ω^± λ_ξ^± (κ^± ∇φ)·n, constant on the face
        let mut flux = vec![0.0; m];
        let mut mean_lambda = 0.0;
        for (s, &(t, omega, _)) in sides.iter().enumerate() {
            let tri = &mesh.triangles[t];
            for k in 0..3 {
                let g = Vector2::new(tri.gradients[k][0], tri.gradients[k][1]);
                flux[3 * s + k] = omega * comp[t] * (fields.kappa[t] * g).dot(&n);
            }
            mean_lambda += omega * comp[t];
        }
        let sigma_e = sigma / face.diameter() * mean_lambda * weights.sigma_eps;

        let mut c = DMatrix::zeros(m, m);
        let mut p = DMatrix::zeros(m, m);
        for qp in &face.quadrature {
            let jump = jump_values(space, &sides, qp.point);
            for i in 0..m {
                for j in 0..m {
                    c[(i, j)] -= qp.weight * flux[j] * jump[i];
                    p[(i, j)] += qp.weight * sigma_e * jump[i] * jump[j];
                }
            }
        }
        coupling.push(c);
        penalty.push(p);
        penalty_coefficient.push(sigma_e);
    }
    Ok(FaceMatrices {
        dofs,
        coupling,
        penalty,
        penalty_coefficient,
    })
}

/// Jump `[φ]` of each face basis function at `x`: `+φ` on `t⁻`, `−φ` on `t⁺`.
fn jump_values(space: &DgSpace, sides: &[(usize, f64, f64)], x: Point) -> Vec<f64> {
    sides
        .iter()
        .flat_map(|&(t, _, sign)| {
            let l = space.mesh().triangles[t].barycentric(x);
            l.map(|v| sign * v)
        })
        .collect()
}

/// All truth operators of the DG discretization.
#[derive(Debug, Clone)]
pub struct DgOperators {
    /// `Σ_T b^T`, the broken energy part.
    pub volume: AffineForm,
    /// Symmetrized coupling `b_c(q,p) + b_c(p,q)` summed over faces.
    pub coupling: AffineForm,
    /// `Σ_e b_p^e`.
    pub penalty: AffineForm,
    /// The full bilinear form `b`.
    pub operator: AffineForm,
    pub mass: SparseMatrix,
    pub penalty_factor: f64,
}

/// Penalty factor used when none is configured. Values around 4 leave the
/// operator indefinite on the diagonal-split triangulation.
pub const DEFAULT_PENALTY: f64 = 8.0;

/// Assembles every affine component of the SWIPDG operator.
pub fn assemble_affine_operator(
    space: &DgSpace,
    fields: &CoefficientField,
    params: &ParameterSpec,
    sigma: f64,
) -> Result<DgOperators> {
    if !(sigma >= 1.0) {
        return Err(Error::Config(format!("penalty factor must be at least 1, got {sigma}")));
    }
    let mesh = space.mesh();
    if fields.num_triangles() != mesh.num_triangles() {
        return Err(Error::Dimension(format!(
            "coefficient field has {} triangles, mesh has {}",
            fields.num_triangles(),
            mesh.num_triangles()
        )));
    }
    if fields.num_components() != params.num_components() {
        return Err(Error::Dimension(format!(
            "{} lambda components for {} parameter coefficients",
            fields.num_components(),
            params.num_components()
        )));
    }
    fields.validate()?;

    let n_xi = fields.num_components();
    let dim = space.dim();
    let mut vol: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n_xi];
    let mut cpl: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n_xi];
    let mut pen: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n_xi];

    for (t, tri) in mesh.triangles.iter().enumerate() {
        let kappa = fields.kappa[t];
        for a in 0..3 {
            let ga = Vector2::new(tri.gradients[a][0], tri.gradients[a][1]);
            for b in 0..3 {
                let gb = Vector2::new(tri.gradients[b][0], tri.gradients[b][1]);
                let base = tri.area * ga.dot(&(kappa * gb));
                for (xi, comp) in fields.lambda.iter().enumerate() {
                    vol[xi].push((3 * t + a, 3 * t + b, comp[t] * base));
                }
            }
        }
    }
    for face in &mesh.faces {
        let fm = face_matrices(space, fields, face, sigma)?;
        for xi in 0..n_xi {
            for (i, &di) in fm.dofs.iter().enumerate() {
                for (j, &dj) in fm.dofs.iter().enumerate() {
                    cpl[xi].push((di, dj, fm.coupling[xi][(i, j)] + fm.coupling[xi][(j, i)]));
                    pen[xi].push((di, dj, fm.penalty[xi][(i, j)]));
                }
            }
        }
    }

    // the full operator shares the union pattern; so do the parts, after
    // padding each with explicit zeros on the other parts' entries
    let union: Vec<(usize, usize, f64)> = vol[0]
        .iter()
        .chain(&cpl[0])
        .chain(&pen[0])
        .map(|&(i, j, _)| (i, j, 0.0))
        .collect();
    let build = |parts: &[&Vec<(usize, usize, f64)>]| {
        let mut trip = union.clone();
        for p in parts {
            trip.extend_from_slice(p);
        }
        SparseMatrix::from_triplets(dim, dim, &trip)
    };
    let volume: Vec<_> = (0..n_xi).map(|xi| build(&[&vol[xi]])).collect();
    let coupling: Vec<_> = (0..n_xi).map(|xi| build(&[&cpl[xi]])).collect();
    let penalty: Vec<_> = (0..n_xi).map(|xi| build(&[&pen[xi]])).collect();
    let operator: Vec<_> = (0..n_xi).map(|xi| build(&[&vol[xi], &cpl[xi], &pen[xi]])).collect();

    Ok(DgOperators {
        volume: AffineForm::new(volume, params.clone())?,
        coupling: AffineForm::new(coupling, params.clone())?,
        penalty: AffineForm::new(penalty, params.clone())?,
        operator: AffineForm::new(operator, params.clone())?,
        mass: assemble_mass(space),
        penalty_factor: sigma,
    })
}

/// Block-diagonal P1 mass matrix.
pub fn assemble_mass(space: &DgSpace) -> SparseMatrix {
    let mut triplets = Vec::with_capacity(9 * space.mesh().num_triangles());
    for (t, tri) in space.mesh().triangles.iter().enumerate() {
        let m = local_mass(tri.area);
        for a in 0..3 {
            for b in 0..3 {
                triplets.push((3 * t + a, 3 * t + b, m[(a, b)]));
            }
        }
    }
    SparseMatrix::from_triplets(space.dim(), space.dim(), &triplets)
}

/// Mass matrix and load vector `(f, φ_i)`; the load uses the edge-midpoint
/// rule, exact for quadratics on triangles.
pub fn assemble_mass_and_rhs<F: Fn(Point) -> f64>(space: &DgSpace, f: F) -> (SparseMatrix, DVector<f64>) {
    let mut rhs = DVector::zeros(space.dim());
    for (t, tri) in space.mesh().triangles.iter().enumerate() {
        let c = tri.coords;
        for e in 0..3 {
            let (a, b) = (c[e], c[(e + 1) % 3]);
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            let fv = f(mid) * tri.area / 3.0;
            let l = tri.barycentric(mid);
            for k in 0..3 {
                rhs[3 * t + k] += fv * l[k];
            }
        }
    }
    (assemble_mass(space), rhs)
}
