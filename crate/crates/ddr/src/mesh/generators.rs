//! Structured test geometries.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PolytopalMesh, Topology};
use crate::error::{Error, Result};

/// Deduplicating builder keyed by sorted vertex sets.
struct Builder {
    n: usize,
    vertices: Vec<DVector<f64>>,
    vertex_ids: HashMap<Vec<usize>, usize>,
    cells: Topology,
    keys: Vec<HashMap<Vec<usize>, usize>>,
    vsets: Vec<Vec<Vec<usize>>>,
}

impl Builder {
    fn new(n: usize) -> Self {
        Self {
            n,
            vertices: Vec::new(),
            vertex_ids: HashMap::new(),
            cells: vec![Vec::new(); n],
            keys: vec![HashMap::new(); n + 1],
            vsets: vec![Vec::new(); n + 1],
        }
    }

    /// Vertex at a lattice point, created on first use.
    fn vertex(&mut self, lattice: &[usize], pos: impl FnOnce() -> DVector<f64>) -> usize {
        if let Some(&id) = self.vertex_ids.get(lattice) {
            return id;
        }
        let id = self.vertices.len();
        self.vertices.push(pos());
        self.vertex_ids.insert(lattice.to_vec(), id);
        self.vsets[0].push(vec![id]);
        id
    }

    /// A cell of dimension `d ≥ 1` given by its facets (vertex ids for edges,
    /// tail first).
    fn cell(&mut self, d: usize, facets: Vec<usize>) -> usize {
        let mut key: Vec<usize> = facets.iter().flat_map(|&f| self.vsets[d - 1][f].clone()).collect();
        key.sort_unstable();
        key.dedup();
        if let Some(&id) = self.keys[d].get(&key) {
            return id;
        }
        let id = self.cells[d - 1].len();
        self.cells[d - 1].push(facets);
        self.keys[d].insert(key.clone(), id);
        self.vsets[d].push(key);
        id
    }

    fn finish(self) -> Result<PolytopalMesh> {
        PolytopalMesh::from_topology(self.n, self.vertices, self.cells)
    }
}

fn check_grid_args(n: usize, divisions: &[usize]) -> Result<()> {
    if !(1..=3).contains(&n) {
        return Err(Error::InvalidArgument(format!("grid dimension {n} not in [1, 3]")));
    }
    if divisions.len() != n || divisions.contains(&0) {
        return Err(Error::InvalidArgument(format!("need {n} positive division counts, got {divisions:?}")));
    }
    Ok(())
}

/// Face of a box grid spanned by `axes` from the lattice point `base`.
fn box_face(b: &mut Builder, base: &[usize], axes: &[usize], pos: &dyn Fn(&[usize]) -> DVector<f64>) -> usize {
    if axes.is_empty() {
        return b.vertex(base, || pos(base));
    }
    if axes.len() == 1 {
        let mut tip = base.to_vec();
        tip[axes[0]] += 1;
        let v0 = box_face(b, base, &[], pos);
        let v1 = box_face(b, &tip, &[], pos);
        return b.cell(1, vec![v0, v1]);
    }
    let mut facets = Vec::with_capacity(2 * axes.len());
    for (i, &ax) in axes.iter().enumerate() {
        let rest: Vec<usize> = axes.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, &a)| a).collect();
        facets.push(box_face(b, base, &rest, pos));
        let mut shifted = base.to_vec();
        shifted[ax] += 1;
        facets.push(box_face(b, &shifted, &rest, pos));
    }
    b.cell(axes.len(), facets)
}

fn lattice_boxes(divisions: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &m in divisions {
        out = out.into_iter().flat_map(|p: Vec<usize>| (0..m).map(move |i| [p.clone(), vec![i]].concat())).collect();
    }
    out
}

fn uniform_position(divisions: &[usize]) -> impl Fn(&[usize]) -> DVector<f64> + '_ {
    move |p: &[usize]| DVector::from_fn(p.len(), |i, _| p[i] as f64 / divisions[i] as f64)
}

/// Uniform box grid of `[0, 1]^n`.
pub fn cartesian_grid(n: usize, divisions: &[usize]) -> Result<PolytopalMesh> {
    check_grid_args(n, divisions)?;
    let pos = uniform_position(divisions);
    let mut b = Builder::new(n);
    let axes: Vec<usize> = (0..n).collect();
    for base in lattice_boxes(divisions) {
        box_face(&mut b, &base, &axes, &pos);
    }
    b.finish()
}

/// Uniform box grid of `[0, 1]^n` keeping only the boxes whose lattice
/// index passes `keep`; used to build meshes with holes and cavities.
#[cfg(test)]
pub(crate) fn cartesian_subgrid(n: usize, divisions: &[usize], keep: impl Fn(&[usize]) -> bool) -> Result<PolytopalMesh> {
    check_grid_args(n, divisions)?;
    let pos = uniform_position(divisions);
    let mut b = Builder::new(n);
    let axes: Vec<usize> = (0..n).collect();
    for base in lattice_boxes(divisions).into_iter().filter(|p| keep(p)) {
        box_face(&mut b, &base, &axes, &pos);
    }
    b.finish()
}

/// Grid of `[0, 1]^n` whose interior grid lines (2D) or planes (3D) are
/// randomly shifted and tilted. Faces stay planar, so the 3D cells are
/// genuine non-affine hexahedra.
pub fn tilted_grid(n: usize, divisions: &[usize], magnitude: f64, seed: u64) -> Result<PolytopalMesh> {
    check_grid_args(n, divisions)?;
    let min_spacing = divisions.iter().map(|&m| 1.0 / m as f64).fold(f64::INFINITY, f64::min);
    if !(0.0..0.3 * min_spacing).contains(&magnitude) {
        return Err(Error::InvalidArgument(format!(
            "tilt magnitude {magnitude} must lie in [0, {:.4})",
            0.3 * min_spacing
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // plane (axis i, index j): x_i = c + Σ_{l≠i} t_l (x_l − 1/2)
    let planes: Vec<Vec<(f64, Vec<f64>)>> = (0..n)
        .map(|i| {
            (0..=divisions[i])
                .map(|j| {
                    let c = j as f64 / divisions[i] as f64;
                    if j == 0 || j == divisions[i] {
                        (c, vec![0.0; n])
                    } else {
                        let shift = rng.random_range(-0.5..0.5) * magnitude;
                        let tilt = (0..n).map(|l| if l == i { 0.0 } else { rng.random_range(-1.0..1.0) * magnitude }).collect();
                        (c + shift, tilt)
                    }
                })
                .collect()
        })
        .collect();
    let pos = |p: &[usize]| {
        let mut m = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for i in 0..n {
            let (c, t) = &planes[i][p[i]];
            m[(i, i)] = 1.0;
            rhs[i] = *c;
            for l in 0..n {
                if l != i {
                    m[(i, l)] = -t[l];
                    rhs[i] -= t[l] * 0.5;
                }
            }
        }
        m.lu().solve(&rhs).expect("tilted planes intersect")
    };
    let mut b = Builder::new(n);
    let axes: Vec<usize> = (0..n).collect();
    for base in lattice_boxes(divisions) {
        box_face(&mut b, &base, &axes, &pos);
    }
    b.finish()
}

/// Freudenthal (Kuhn) triangulation of the uniform box grid: `n!` simplices per box.
pub fn simplicial_grid(n: usize, divisions: &[usize]) -> Result<PolytopalMesh> {
    check_grid_args(n, divisions)?;
    let pos = uniform_position(divisions);
    let mut b = Builder::new(n);
    let perms = permutations(n);
    for base in lattice_boxes(divisions) {
        for perm in &perms {
            let mut pts = vec![base.clone()];
            let mut cur = base.clone();
            for &ax in perm {
                cur[ax] += 1;
                pts.push(cur.clone());
            }
            let ids: Vec<usize> = pts.iter().map(|p| b.vertex(p, || pos(p))).collect();
            simplex(&mut b, ids);
        }
    }
    b.finish()
}

fn simplex(b: &mut Builder, mut verts: Vec<usize>) -> usize {
    verts.sort_unstable();
    let d = verts.len() - 1;
    if d == 0 {
        return verts[0];
    }
    if d == 1 {
        return b.cell(1, verts);
    }
    let facets = (0..=d)
        .map(|i| {
            let mut v = verts.clone();
            v.remove(i);
            simplex(b, v)
        })
        .collect();
    b.cell(d, facets)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Unit square divided into `outer × outer` boxes with the central
/// `hole × hole` block removed.
pub fn annulus_2d(outer: usize, hole: usize) -> Result<PolytopalMesh> {
    if hole == 0 || outer < hole + 2 || !(outer - hole).is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "annulus needs hole ≥ 1, outer ≥ hole + 2 and outer − hole even (got {outer}, {hole})"
        )));
    }
    let divisions = [outer, outer];
    let pos = uniform_position(&divisions);
    let lo = (outer - hole) / 2;
    let hi = lo + hole;
    let mut b = Builder::new(2);
    for base in lattice_boxes(&divisions) {
        if (lo..hi).contains(&base[0]) && (lo..hi).contains(&base[1]) {
            continue;
        }
        box_face(&mut b, &base, &[0, 1], &pos);
    }
    b.finish()
}

/// Random perturbation of interior vertices by at most `magnitude` per
/// coordinate. Cells must stay planar, so non-simplicial 3D meshes are
/// rejected (see [`tilted_grid`] for those).
pub fn distort(mesh: &PolytopalMesh, magnitude: f64, seed: u64) -> Result<PolytopalMesh> {
    let min_edge = mesh.cells(1).iter().map(|e| e.diameter).fold(f64::INFINITY, f64::min);
    if !(0.0..0.3 * min_edge).contains(&magnitude) {
        return Err(Error::InvalidArgument(format!(
            "distortion magnitude {magnitude} must lie in [0, 0.3 × min edge length = {:.4})",
            0.3 * min_edge
        )));
    }
    let n = mesh.ambient_dim();
    if n == 3 && mesh.cells(2).iter().any(|f| !f.is_simplex()) {
        return Err(Error::InvalidArgument(
            "random vertex perturbation would make non-triangular faces nonplanar; use tilted_grid".into(),
        ));
    }
    let fixed = mesh.boundary_vertices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vertices = mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let delta = DVector::from_fn(n, |_, _| if magnitude > 0.0 { rng.random_range(-magnitude..magnitude) } else { 0.0 });
            if fixed.contains(&i) {
                v.clone()
            } else {
                v + delta
            }
        })
        .collect();
    PolytopalMesh::from_topology(n, vertices, mesh.topology())
}
