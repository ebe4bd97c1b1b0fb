//! Broken P1 spaces on the fine grid.
//!
//! Every triangle carries three nodal (Lagrange) coefficients, stored at
//! `3·t + k` for local vertex `k`. Since triangles are numbered by
//! subdomain, `Q_h = ⊕_T Q_h^T` is a plain concatenation of blocks.

use std::io::Write;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DVector, Matrix3};

use crate::error::{Error, Result};
use crate::grid::{Mesh, Point};
use crate::linalg::SparseMatrix;

/// Coefficient vector of a DG function.
#[derive(Debug, Clone, PartialEq)]
pub struct DgFunction {
    pub coefficients: DVector<f64>,
}

impl DgFunction {
    pub fn new(coefficients: DVector<f64>) -> Self {
        Self { coefficients }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(DVector::zeros(dim))
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

impl From<DVector<f64>> for DgFunction {
    fn from(v: DVector<f64>) -> Self {
        Self::new(v)
    }
}

/// P1 mass matrix of a triangle with area `area`.
pub fn local_mass(area: f64) -> Matrix3<f64> {
    Matrix3::new(2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0) * (area / 12.0)
}

#[derive(Debug, Clone)]
pub struct DgSpace {
    mesh: Arc<Mesh>,
    oswald: SparseMatrix,
}

impl DgSpace {
    pub const ORDER: usize = 1;
    pub const LOCAL_DOFS: usize = 3;

    pub fn new(mesh: Arc<Mesh>) -> Self {
        let oswald = build_oswald(&mesh);
        Self { mesh, oswald }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        Self::LOCAL_DOFS * self.mesh.num_triangles()
    }

    pub fn dof(&self, triangle: usize, local: usize) -> usize {
        Self::LOCAL_DOFS * triangle + local
    }

    /// Global DoF range of subdomain `sub`.
    pub fn subdomain_dofs(&self, sub: usize) -> Range<usize> {
        let tris = &self.mesh.subdomains[sub].triangles;
        Self::LOCAL_DOFS * tris.start..Self::LOCAL_DOFS * tris.end
    }

    /// Coordinates of the Lagrange node behind DoF `dof`.
    pub fn node(&self, dof: usize) -> Point {
        self.mesh.triangles[dof / 3].coords[dof % 3]
    }

    pub fn zeros(&self) -> DgFunction {
        DgFunction::zeros(self.dim())
    }

    pub fn check(&self, q: &DgFunction) -> Result<()> {
        if q.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "function has {} coefficients, space dimension is {}",
                q.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Nodal interpolation; each triangle samples `g` at its own vertices.
    pub fn interpolate<G: Fn(Point) -> f64>(&self, g: G) -> Result<DgFunction> {
        self.interpolate_per_triangle(|_, p| g(p))
    }

    /// Nodal interpolation of a field that may depend on the triangle, so
    /// fields discontinuous across edges are sampled one-sidedly.
    pub fn interpolate_per_triangle<G: Fn(usize, Point) -> f64>(&self, g: G) -> Result<DgFunction> {
        let mut c = DVector::zeros(self.dim());
        for (t, tri) in self.mesh.triangles.iter().enumerate() {
            for (k, &p) in tri.coords.iter().enumerate() {
                let v = g(t, p);
                if !v.is_finite() {
                    return Err(Error::Input(format!(
                        "non-finite value {v} at node ({}, {}) of triangle {t}",
                        p[0], p[1]
                    )));
                }
                c[self.dof(t, k)] = v;
            }
        }
        Ok(DgFunction::new(c))
    }

    /// Value of `q` at `p` taken from triangle `t`.
    pub fn evaluate_in(&self, q: &DgFunction, t: usize, p: Point) -> f64 {
        let l = self.mesh.triangles[t].barycentric(p);
        (0..3).map(|k| l[k] * q.coefficients[self.dof(t, k)]).sum()
    }

    pub fn evaluate(&self, q: &DgFunction, p: Point) -> Option<f64> {
        self.mesh.locate(p).map(|t| self.evaluate_in(q, t, p))
    }

    /// The averaging matrix of the Oswald interpolation.
    pub fn oswald_matrix(&self) -> &SparseMatrix {
        &self.oswald
    }

    /// Continuous, zero-trace interpolant: interior vertex values are the
    /// arithmetic mean over all triangles sharing the vertex, boundary
    /// vertex values are 0.
    pub fn oswald_interpolate(&self, q: &DgFunction) -> DgFunction {
        DgFunction::new(self.oswald.mul_vec(&q.coefficients))
    }

    /// `q − I_OS(q)`.
    pub fn nonconforming_part(&self, q: &DgFunction) -> DgFunction {
        DgFunction::new(&q.coefficients - self.oswald.mul_vec(&q.coefficients))
    }

    /// Block-diagonal broken `H¹` product (L² mass plus broken gradient
    /// product), one 3×3 block per triangle.
    pub fn h1_product(&self) -> SparseMatrix {
        let mut triplets = Vec::with_capacity(9 * self.mesh.num_triangles());
        for (t, tri) in self.mesh.triangles.iter().enumerate() {
            let mass = local_mass(tri.area);
            for a in 0..3 {
                for b in 0..3 {
                    let g = tri.gradients;
                    let stiff = tri.area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                    triplets.push((self.dof(t, a), self.dof(t, b), mass[(a, b)] + stiff));
                }
            }
        }
        SparseMatrix::from_triplets(self.dim(), self.dim(), &triplets)
    }

    /// Exact embedding of this space into the space on a nested refinement
    /// (`fine.dim() × self.dim()`).
    pub fn prolongation_to(&self, fine: &DgSpace) -> Result<SparseMatrix> {
        let mut triplets = Vec::with_capacity(9 * fine.mesh.num_triangles());
        for (tf, tri) in fine.mesh.triangles.iter().enumerate() {
            let parent = self.mesh.locate(tri.centroid).ok_or_else(|| {
                Error::Dimension(format!("fine triangle {tf} lies outside the coarse mesh"))
            })?;
            for (k, &p) in tri.coords.iter().enumerate() {
                let l = self.mesh.triangles[parent].barycentric(p);
                if l.iter().any(|&v| v < -1e-10) {
                    return Err(Error::Dimension("meshes are not nested".into()));
                }
                for (j, &w) in l.iter().enumerate() {
                    if w.abs() > 1e-14 {
                        triplets.push((fine.dof(tf, k), self.dof(parent, j), w));
                    }
                }
            }
        }
        Ok(SparseMatrix::from_triplets(fine.dim(), self.dim(), &triplets))
    }

    /// CSV export: `triangle,x,y,value`, one row per Lagrange node.
    pub fn write_csv<W: Write>(&self, q: &DgFunction, mut w: W) -> Result<()> {
        self.check(q)?;
        writeln!(w, "triangle,x,y,value")?;
        for (t, tri) in self.mesh.triangles.iter().enumerate() {
            for (k, p) in tri.coords.iter().enumerate() {
                writeln!(w, "{t},{},{},{:.17e}", p[0], p[1], q.coefficients[self.dof(t, k)])?;
            }
        }
        Ok(())
    }
}

fn build_oswald(mesh: &Mesh) -> SparseMatrix {
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); mesh.vertices.len()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for (k, &v) in tri.vertices.iter().enumerate() {
            incident[v].push(3 * t + k);
        }
    }
    let dim = 3 * mesh.num_triangles();
    let mut triplets = Vec::new();
    for (v, dofs) in incident.iter().enumerate() {
        if mesh.vertex_on_boundary[v] {
            continue;
        }
        let w = 1.0 / dofs.len() as f64;
        for &row in dofs {
            for &col in dofs {
                triplets.push((row, col, w));
            }
        }
    }
    SparseMatrix::from_triplets(dim, dim, &triplets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Rect;

    fn space(n: usize, sub: usize) -> DgSpace {
        DgSpace::new(Arc::new(Mesh::build(Rect::unit_square(), (n, n), (sub, sub)).unwrap()))
    }

    #[test]
    fn dimension_and_blocks() {
        let s = DgSpace::new(Arc::new(Mesh::build(Rect::unit_square(), (4, 4), (2, 1)).unwrap()));
        assert_eq!(s.dim(), 3 * 32);
        let (a, b) = (s.subdomain_dofs(0), s.subdomain_dofs(1));
        assert_eq!(a.start, 0);
        assert_eq!(a.end, b.start);
        assert_eq!(b.end, s.dim());
    }

    #[test]
    fn interpolation_reproduces_affine_fields() {
        let s = space(3, 1);
        let one = s.interpolate(|_| 1.0).unwrap();
        assert!(one.coefficients.iter().all(|&c| c == 1.0));
        let x = s.interpolate(|p| p[0]).unwrap();
        for d in 0..s.dim() {
            assert_eq!(x.coefficients[d], s.node(d)[0]);
        }
        let p = [0.3, 0.7];
        assert!((s.evaluate(&x, p).unwrap() - 0.3).abs() < 1e-14);
        assert!(s.interpolate(|p| 1.0 / (p[0] - 0.0)).is_err());
    }

    #[test]
    fn discontinuous_field_is_sampled_per_triangle() {
        let s = space(2, 1);
        let q = s
            .interpolate_per_triangle(|t, _| if s.mesh().triangles[t].centroid[0] < 0.5 { 1.0 } else { 2.0 })
            .unwrap();
        for t in 0..s.mesh().num_triangles() {
            let expect = if s.mesh().triangles[t].centroid[0] < 0.5 { 1.0 } else { 2.0 };
            for k in 0..3 {
                assert_eq!(q.coefficients[s.dof(t, k)], expect);
            }
        }
    }

    #[test]
    fn oswald_of_constant_one() {
        let s = space(4, 1);
        let q = s.interpolate(|_| 1.0).unwrap();
        let c = s.oswald_interpolate(&q);
        for d in 0..s.dim() {
            let p = s.node(d);
            let boundary = p[0] == 0.0 || p[0] == 1.0 || p[1] == 0.0 || p[1] == 1.0;
            let expect = if boundary { 0.0 } else { 1.0 };
            assert!((c.coefficients[d] - expect).abs() < 1e-15);
        }
        let d = s.nonconforming_part(&q);
        assert!((&d.coefficients + &c.coefficients - &q.coefficients).amax() == 0.0);
    }

    #[test]
    fn oswald_averages_shared_vertex_values() {
        // centre vertex (0.5, 0.5) of a 2x2 mesh is shared by 6 triangles
        let s = space(2, 1);
        let centre = 4;
        let mut q = s.zeros();
        let holders: Vec<_> = (0..s.dim())
            .filter(|&d| s.mesh().triangles[d / 3].vertices[d % 3] == centre)
            .collect();
        assert_eq!(holders.len(), 6);
        q.coefficients[holders[0]] = 2.0;
        q.coefficients[holders[1]] = 0.0;
        let c = s.oswald_interpolate(&q);
        for &d in &holders {
            assert!((c.coefficients[d] - 2.0 / 6.0).abs() < 1e-15);
        }

        // two triangles only: 0 and 2 average to 1
        let mut q2 = s.zeros();
        for (i, &d) in holders.iter().enumerate() {
            q2.coefficients[d] = if i % 2 == 0 { 0.0 } else { 2.0 };
        }
        let c2 = s.oswald_interpolate(&q2);
        assert!((c2.coefficients[holders[0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn conforming_zero_trace_functions_are_fixed() {
        let s = space(4, 2);
        let q = s
            .interpolate(|p| p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1]))
            .unwrap();
        let c = s.oswald_interpolate(&q);
        assert!((&c.coefficients - &q.coefficients).amax() < 1e-15);
        assert!(s.nonconforming_part(&q).coefficients.amax() < 1e-15);
    }

    #[test]
    fn unit_jump_splits_in_halves() {
        // jump of 1 across the vertical line x = 0.5 on a 2x1-subdomain mesh
        let s = DgSpace::new(Arc::new(Mesh::build(Rect::unit_square(), (2, 2), (2, 1)).unwrap()));
        let q = s
            .interpolate_per_triangle(|t, _| if s.mesh().triangles[t].subdomain == 1 { 1.0 } else { 0.0 })
            .unwrap();
        let d = s.nonconforming_part(&q);
        // interior vertex (0.5, 0.5): 3 triangles on each side -> average 1/2
        let centre = 4;
        for dof in 0..s.dim() {
            let tri = &s.mesh().triangles[dof / 3];
            if tri.vertices[dof % 3] == centre {
                let expect = if tri.subdomain == 1 { 0.5 } else { -0.5 };
                assert!((d.coefficients[dof] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn prolongation_is_exact_for_p1() {
        let coarse = space(3, 1);
        let fine = DgSpace::new(Arc::new(coarse.mesh().refined().unwrap()));
        let p = coarse.prolongation_to(&fine).unwrap();
        let q = coarse.interpolate_per_triangle(|t, x| t as f64 + x[0] - 2.0 * x[1]).unwrap();
        let qf = DgFunction::new(p.mul_vec(&q.coefficients));
        for tf in 0..fine.mesh().num_triangles() {
            let c = fine.mesh().triangles[tf].centroid;
            let parent = coarse.mesh().locate(c).unwrap();
            let expect = coarse.evaluate_in(&q, parent, c);
            assert!((fine.evaluate_in(&qf, tf, c) - expect).abs() < 1e-12);
        }
    }
}
