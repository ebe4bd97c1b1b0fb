//! Nested coarse/fine partitions of a rectangle.
//!
//! The fine grid is a structured triangulation: `nx × ny` rectangular cells,
//! each split into two triangles along the lower-left to upper-right
//! diagonal. The coarse grid is an `NX × NY` array of rectangular
//! subdomains whose edges lie on fine cell lines, so every triangle belongs
//! to exactly one subdomain.
//!
//! Triangles are numbered subdomain by subdomain, which makes the DoF block
//! of every subdomain a contiguous range.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    pub fn unit_square() -> Self {
        Self::new(0.0, 1.0, 0.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Triangle {
    /// Counter-clockwise vertex indices.
    pub vertices: [usize; 3],
    pub coords: [Point; 3],
    pub subdomain: usize,
    pub area: f64,
    pub centroid: Point,
    /// Longest edge length.
    pub diameter: f64,
    /// Gradients of the three barycentric (P1 Lagrange) basis functions.
    pub gradients: [[f64; 2]; 3],
}

impl Triangle {
    fn new(vertices: [usize; 3], coords: [Point; 3], subdomain: usize) -> Self {
        let [a, b, c] = coords;
        let (e1, e2) = ([b[0] - a[0], b[1] - a[1]], [c[0] - a[0], c[1] - a[1]]);
        let det = e1[0] * e2[1] - e1[1] * e2[0];
        // rows of the inverse Jacobian are the gradients of lambda_1, lambda_2
        let g1 = [e2[1] / det, -e2[0] / det];
        let g2 = [-e1[1] / det, e1[0] / det];
        let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
        let dist = |p: Point, q: Point| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        Self {
            vertices,
            coords,
            subdomain,
            area: 0.5 * det.abs(),
            centroid: [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0],
            diameter: dist(a, b).max(dist(b, c)).max(dist(c, a)),
            gradients: [g0, g1, g2],
        }
    }

    pub fn barycentric(&self, p: Point) -> [f64; 3] {
        let a = self.coords[0];
        let d = [p[0] - a[0], p[1] - a[1]];
        let l1 = self.gradients[1][0] * d[0] + self.gradients[1][1] * d[1];
        let l2 = self.gradients[2][0] * d[0] + self.gradients[2][1] * d[1];
        [1.0 - l1 - l2, l1, l2]
    }

    /// Local index of mesh vertex `v`, if it is a corner of this triangle.
    pub fn local_index(&self, v: usize) -> Option<usize> {
        self.vertices.iter().position(|&w| w == v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceKind {
    /// Inner face with both neighbours in the same subdomain.
    Inner,
    /// Inner face on a coarse face between two subdomains.
    Coupling,
    Boundary,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadPoint {
    pub point: Point,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Face {
    pub kind: FaceKind,
    pub vertices: [usize; 2],
    /// `t⁻`, the lower-numbered neighbour.
    pub minus: usize,
    /// `t⁺`; `None` on the boundary.
    pub plus: Option<usize>,
    /// Unit normal pointing away from `t⁻`.
    pub normal: [f64; 2],
    pub length: f64,
    pub midpoint: Point,
    pub coarse_face: Option<usize>,
    /// Two-point Gauss rule.
    pub quadrature: [QuadPoint; 2],
}

impl Face {
    /// Diameter `h_e`; equal to the length for straight faces.
    pub fn diameter(&self) -> f64 {
        self.length
    }

    pub fn is_boundary(&self) -> bool {
        self.plus.is_none()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Subdomain {
    pub rect: Rect,
    pub triangles: Range<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoarseFace {
    pub minus: usize,
    pub plus: Option<usize>,
    pub segment: [Point; 2],
    pub fine_faces: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mesh {
    pub domain: Rect,
    pub fine_cells: (usize, usize),
    pub coarse_cells: (usize, usize),
    pub vertices: Vec<Point>,
    pub vertex_on_boundary: Vec<bool>,
    pub triangles: Vec<Triangle>,
    pub faces: Vec<Face>,
    pub subdomains: Vec<Subdomain>,
    pub coarse_faces: Vec<CoarseFace>,
    /// Triangles (lower, upper) of fine cell `j * nx + i`.
    cell_triangles: Vec<[usize; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Mesh {
    /// Builds the nested partition of `domain` into `fine_cells` grid cells
    /// (two triangles each) grouped into `coarse_cells` subdomains.
    pub fn build(domain: Rect, fine_cells: (usize, usize), coarse_cells: (usize, usize)) -> Result<Self> {
        let (nx, ny) = fine_cells;
        let (cx, cy) = coarse_cells;
        if nx == 0 || ny == 0 || cx == 0 || cy == 0 {
            return Err(Error::Config(format!(
                "cell counts must be positive, got fine {fine_cells:?} coarse {coarse_cells:?}"
            )));
        }
        if nx % cx != 0 {
            return Err(Error::Config(format!(
                "fine cells in x ({nx}) not divisible by coarse cells in x ({cx})"
            )));
        }
        if ny % cy != 0 {
            return Err(Error::Config(format!(
                "fine cells in y ({ny}) not divisible by coarse cells in y ({cy})"
            )));
        }
        if !(domain.width() > 0.0 && domain.height() > 0.0) {
            return Err(Error::Config(format!("degenerate domain {domain:?}")));
        }

        let hx = domain.width() / nx as f64;
        let hy = domain.height() / ny as f64;
        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        let mut vertex_on_boundary = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let x = if i == nx { domain.x_max } else { domain.x_min + i as f64 * hx };
                let y = if j == ny { domain.y_max } else { domain.y_min + j as f64 * hy };
                vertices.push([x, y]);
                vertex_on_boundary.push(i == 0 || i == nx || j == 0 || j == ny);
            }
        }

        let (sx, sy) = (nx / cx, ny / cy);
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        let mut subdomains = Vec::with_capacity(cx * cy);
        let mut cell_triangles = vec![[0usize; 2]; nx * ny];
        for bj in 0..cy {
            for bi in 0..cx {
                let sub = bj * cx + bi;
                let begin = triangles.len();
                for j in bj * sy..(bj + 1) * sy {
                    for i in bi * sx..(bi + 1) * sx {
                        let (v00, v10, v01, v11) = (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1));
                        let lower = [v00, v10, v11];
                        let upper = [v00, v11, v01];
                        cell_triangles[j * nx + i] = [triangles.len(), triangles.len() + 1];
                        for tri in [lower, upper] {
                            let coords = tri.map(|v| vertices[v]);
                            triangles.push(Triangle::new(tri, coords, sub));
                        }
                    }
                }
                let (x0, y0) = (vertices[vid(bi * sx, 0)][0], vertices[vid(0, bj * sy)][1]);
                let (x1, y1) = (vertices[vid((bi + 1) * sx, 0)][0], vertices[vid(0, (bj + 1) * sy)][1]);
                subdomains.push(Subdomain {
                    rect: Rect::new(x0, x1, y0, y1),
                    triangles: begin..triangles.len(),
                });
            }
        }

        // coarse faces: inner ones first (x-normal, then y-normal), then boundary ones
        let mut coarse_faces = Vec::new();
        let mut inner_coarse: HashMap<(usize, usize), usize> = HashMap::new();
        let mut boundary_coarse: HashMap<(usize, Side), usize> = HashMap::new();
        for bj in 0..cy {
            for bi in 0..cx.saturating_sub(1) {
                let (a, b) = (bj * cx + bi, bj * cx + bi + 1);
                let r = subdomains[a].rect;
                inner_coarse.insert((a, b), coarse_faces.len());
                coarse_faces.push(CoarseFace {
                    minus: a,
                    plus: Some(b),
                    segment: [[r.x_max, r.y_min], [r.x_max, r.y_max]],
                    fine_faces: Vec::new(),
                });
            }
        }
        for bj in 0..cy.saturating_sub(1) {
            for bi in 0..cx {
                let (a, b) = (bj * cx + bi, (bj + 1) * cx + bi);
                let r = subdomains[a].rect;
                inner_coarse.insert((a, b), coarse_faces.len());
                coarse_faces.push(CoarseFace {
                    minus: a,
                    plus: Some(b),
                    segment: [[r.x_min, r.y_max], [r.x_max, r.y_max]],
                    fine_faces: Vec::new(),
                });
            }
        }
        for (sub, s) in subdomains.iter().enumerate() {
            let (bi, bj) = (sub % cx, sub / cx);
            let r = s.rect;
            let sides = [
                (bi == 0, Side::Left, [[r.x_min, r.y_min], [r.x_min, r.y_max]]),
                (bi + 1 == cx, Side::Right, [[r.x_max, r.y_min], [r.x_max, r.y_max]]),
                (bj == 0, Side::Bottom, [[r.x_min, r.y_min], [r.x_max, r.y_min]]),
                (bj + 1 == cy, Side::Top, [[r.x_min, r.y_max], [r.x_max, r.y_max]]),
            ];
            for (on_boundary, side, segment) in sides {
                if on_boundary {
                    boundary_coarse.insert((sub, side), coarse_faces.len());
                    coarse_faces.push(CoarseFace {
                        minus: sub,
                        plus: None,
                        segment,
                        fine_faces: Vec::new(),
                    });
                }
            }
        }

        let mut faces: Vec<Face> = Vec::with_capacity(3 * nx * ny + nx + ny);
        let mut edge_map: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.capacity());
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri.vertices[k], tri.vertices[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                if let Some(&f) = edge_map.get(&key) {
                    faces[f].plus = Some(t);
                    continue;
                }
                let (pa, pb) = (vertices[key.0], vertices[key.1]);
                let d = [pb[0] - pa[0], pb[1] - pa[1]];
                let length = (d[0] * d[0] + d[1] * d[1]).sqrt();
                if !(length > 0.0) {
                    return Err(Error::Config(format!("zero-length face between vertices {key:?}")));
                }
                let midpoint = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
                let mut normal = [d[1] / length, -d[0] / length];
                let outward = [midpoint[0] - tri.centroid[0], midpoint[1] - tri.centroid[1]];
                if normal[0] * outward[0] + normal[1] * outward[1] < 0.0 {
                    normal = [-normal[0], -normal[1]];
                }
                let off = 0.5 / 3f64.sqrt();
                let quadrature = [-off, off].map(|s| QuadPoint {
                    point: [midpoint[0] + s * d[0], midpoint[1] + s * d[1]],
                    weight: 0.5 * length,
                });
                edge_map.insert(key, faces.len());
                faces.push(Face {
                    kind: FaceKind::Boundary,
                    vertices: [key.0, key.1],
                    minus: t,
                    plus: None,
                    normal,
                    length,
                    midpoint,
                    coarse_face: None,
                    quadrature,
                });
            }
        }

        let eps = 1e-12 * domain.width().max(domain.height());
        for (f, face) in faces.iter_mut().enumerate() {
            let sub_minus = triangles[face.minus].subdomain;
            match face.plus {
                Some(p) => {
                    let sub_plus = triangles[p].subdomain;
                    if sub_plus == sub_minus {
                        face.kind = FaceKind::Inner;
                    } else {
                        face.kind = FaceKind::Coupling;
                        let key = (sub_minus.min(sub_plus), sub_minus.max(sub_plus));
                        let cf = inner_coarse[&key];
                        face.coarse_face = Some(cf);
                        coarse_faces[cf].fine_faces.push(f);
                    }
                }
                None => {
                    let m = face.midpoint;
                    let side = if (m[0] - domain.x_min).abs() < eps {
                        Side::Left
                    } else if (m[0] - domain.x_max).abs() < eps {
                        Side::Right
                    } else if (m[1] - domain.y_min).abs() < eps {
                        Side::Bottom
                    } else {
                        Side::Top
                    };
                    let cf = boundary_coarse[&(sub_minus, side)];
                    face.coarse_face = Some(cf);
                    coarse_faces[cf].fine_faces.push(f);
                }
            }
        }

        Ok(Self {
            domain,
            fine_cells,
            coarse_cells,
            vertices,
            vertex_on_boundary,
            triangles,
            faces,
            subdomains,
            coarse_faces,
            cell_triangles,
        })
    }

    /// The mesh with twice as many fine cells in each direction and the
    /// same subdomains. Its triangles are nested in the triangles of `self`.
    pub fn refined(&self) -> Result<Self> {
        Self::build(
            self.domain,
            (2 * self.fine_cells.0, 2 * self.fine_cells.1),
            self.coarse_cells,
        )
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Triangles (lower, upper) of fine cell `j * nx + i`.
    pub fn cell_triangles(&self, cell: usize) -> [usize; 2] {
        self.cell_triangles[cell]
    }

    pub fn num_cells(&self) -> usize {
        self.cell_triangles.len()
    }

    pub fn num_subdomains(&self) -> usize {
        self.subdomains.len()
    }

    /// Euclidean length of face `e`.
    pub fn face_measure(&self, e: usize) -> f64 {
        self.faces[e].length
    }

    /// Triangle containing `p`. Points on shared edges resolve to one of
    /// the adjacent triangles.
    pub fn locate(&self, p: Point) -> Option<usize> {
        if !self.domain.contains(p) {
            return None;
        }
        let (nx, ny) = self.fine_cells;
        let hx = self.domain.width() / nx as f64;
        let hy = self.domain.height() / ny as f64;
        let s = (p[0] - self.domain.x_min) / hx;
        let r = (p[1] - self.domain.y_min) / hy;
        let i = (s.floor() as usize).min(nx - 1);
        let j = (r.floor() as usize).min(ny - 1);
        let [lower, upper] = self.cell_triangles[j * nx + i];
        Some(if r - j as f64 <= s - i as f64 { lower } else { upper })
    }

    /// Coarse subdomains sharing a coarse face with `sub`.
    pub fn subdomain_neighbours(&self, sub: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .coarse_faces
            .iter()
            .filter_map(|cf| match cf.plus {
                Some(p) if cf.minus == sub => Some(p),
                Some(p) if p == sub => Some(cf.minus),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Debug dump (vertices, triangles, face table) as JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
