#![allow(dead_code)]

use std::collections::HashMap;

use lrbms::config::{Disc, ProblemConfig};
use lrbms::space::DgSpace;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Synthetic channel problem on the unit square with discs that fit inside.
pub fn unit_square_config(fine: [usize; 2], subdomains: [usize; 2]) -> ProblemConfig {
    let mut c = ProblemConfig::default();
    c.domain.x = [0.0, 1.0];
    c.domain.y = [0.0, 1.0];
    c.domain.fine_cells = fine;
    c.domain.subdomains = subdomains;
    c.field.channel_x = [0.5, 1.0];
    c.field.channel_y = [0.35, 0.65];
    c.forcing.discs = vec![
        Disc { center: [0.2, 0.5], radius: 0.15, value: 1.0 },
        Disc { center: [0.8, 0.2], radius: 0.15, value: -0.5 },
        Disc { center: [0.8, 0.8], radius: 0.15, value: -0.5 },
    ];
    c
}

/// DoFs grouped by the mesh point they sit on.
pub fn dofs_by_point(space: &DgSpace) -> Vec<([f64; 2], Vec<usize>)> {
    let mut map: HashMap<(u64, u64), usize> = HashMap::new();
    let mut groups: Vec<([f64; 2], Vec<usize>)> = Vec::new();
    for dof in 0..space.dim() {
        let p = space.node(dof);
        let key = (p[0].to_bits(), p[1].to_bits());
        let k = *map.entry(key).or_insert_with(|| {
            groups.push((p, Vec::new()));
            groups.len() - 1
        });
        groups[k].1.push(dof);
    }
    groups
}

pub fn on_boundary(p: [f64; 2], x: [f64; 2], y: [f64; 2]) -> bool {
    p[0] == x[0] || p[0] == x[1] || p[1] == y[0] || p[1] == y[1]
}

/// Continuous piecewise linear hat functions of the interior mesh points,
/// written as DG coefficient vectors.
pub fn interior_hats(space: &DgSpace) -> Vec<DVector<f64>> {
    let d = space.mesh().domain;
    dofs_by_point(space)
        .into_iter()
        .filter(|(p, _)| !on_boundary(*p, [d.x_min, d.x_max], [d.y_min, d.y_max]))
        .map(|(_, dofs)| {
            let mut v = DVector::zeros(space.dim());
            for i in dofs {
                v[i] = 1.0;
            }
            v
        })
        .collect()
}

pub fn random_vector<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

/// `M⁻¹ b` by a dense LU solve.
pub fn dense_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    m.clone().lu().solve(b).expect("singular matrix")
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
