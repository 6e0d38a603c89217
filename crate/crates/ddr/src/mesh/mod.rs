//! Polytopal meshes as oriented cell complexes.
//!
//! Every cell carries an orthonormal frame spanning its affine hull. Frames
//! are the source of truth for orientation: the relative orientation of a
//! facet is derived from the frames, never stored independently.

mod generators;
mod io;

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generators::{annulus_2d, cartesian_grid, distort, simplicial_grid, tilted_grid};
#[cfg(test)]
pub(crate) use generators::cartesian_subgrid;
pub use io::{load_mesh, mesh_from_json, mesh_to_json, save_mesh, MeshFile, MESH_FORMAT_VERSION};

/// Largest ambient dimension handled by the geometry code.
pub const MAX_AMBIENT_DIM: usize = 3;

/// A cell identified by its dimension and its index within that dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId {
    pub dim: usize,
    pub index: usize,
}

impl CellId {
    pub fn new(dim: usize, index: usize) -> Self {
        Self { dim, index }
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-cell #{}", self.dim, self.index)
    }
}

/// A simplex of a cell's subdivision.
#[derive(Clone, Debug)]
pub struct SimplexChunk {
    pub points: Vec<DVector<f64>>,
    pub parent: CellId,
    /// Orientation of `(p1 − p0, …, pd − p0)` relative to the parent frame.
    pub sign: f64,
    /// Unsigned `d`-dimensional measure.
    pub measure: f64,
}

/// Geometry and incidence data of one cell.
#[derive(Clone, Debug)]
pub struct Cell {
    pub id: CellId,
    /// Facets with their relative orientations.
    pub boundary: Vec<(usize, i8)>,
    /// Sorted vertex indices of the closure.
    pub vertices: Vec<usize>,
    /// `n × d` matrix with orthonormal columns.
    pub frame: DMatrix<f64>,
    pub center: DVector<f64>,
    /// Largest vertex-to-vertex distance (zero for vertices).
    pub diameter: f64,
    pub measure: f64,
    pub chunks: Vec<SimplexChunk>,
    subcells: Vec<Vec<usize>>,
}

impl Cell {
    pub fn dim(&self) -> usize {
        self.id.dim
    }

    /// Scale of the local coordinates `y = Qᵀ(x − x_f)/h_f`; 1 for vertices.
    pub fn scale(&self) -> f64 {
        if self.id.dim == 0 {
            1.0
        } else {
            self.diameter
        }
    }

    pub fn is_simplex(&self) -> bool {
        self.vertices.len() == self.id.dim + 1
    }

    /// Local scaled coordinates of an ambient point.
    pub fn local_coords(&self, x: &DVector<f64>) -> DVector<f64> {
        self.frame.tr_mul(&(x - &self.center)) / self.scale()
    }

    pub fn ambient_point(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.center + &self.frame * y * self.scale()
    }
}

/// Affine chart map from a subcell chart to a cell chart, `y = b + A y′`,
/// with covector transition `J = Q_fᵀ Q_g`.
#[derive(Clone, Debug)]
pub struct ChartMap {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub jac: DMatrix<f64>,
}

/// Oriented polytopal cell complex in `R^n`, `n ≤ 3`.
#[derive(Clone, Debug)]
pub struct PolytopalMesh {
    ambient_dim: usize,
    vertices: Vec<DVector<f64>>,
    cells: Vec<Vec<Cell>>,
    cofaces: Vec<Vec<Vec<usize>>>,
    h: f64,
}

/// Incidence input: for each dimension `d ≥ 1`, the facets of every `d`-cell.
/// Edges list their two vertices, tail first.
pub type Topology = Vec<Vec<Vec<usize>>>;
/// Incidence input with explicit signs.
pub type SignedTopology = Vec<Vec<Vec<(usize, i8)>>>;

impl PolytopalMesh {
    /// Builds a mesh from unsigned incidence, deriving frames and signs.
    pub fn from_topology(ambient_dim: usize, vertices: Vec<DVector<f64>>, topology: Topology) -> Result<Self> {
        let signed = topology
            .into_iter()
            .enumerate()
            .map(|(i, cells)| {
                cells
                    .into_iter()
                    .map(|facets| {
                        if i == 0 && facets.len() == 2 {
                            vec![(facets[0], -1), (facets[1], 1)]
                        } else {
                            facets.into_iter().map(|f| (f, 0)).collect()
                        }
                    })
                    .collect()
            })
            .collect();
        Self::build(ambient_dim, vertices, signed, false)
    }

    /// Builds a mesh whose boundary signs are prescribed; frames are oriented
    /// to match them, and any inconsistency is reported.
    pub fn from_signed(ambient_dim: usize, vertices: Vec<DVector<f64>>, topology: SignedTopology) -> Result<Self> {
        Self::build(ambient_dim, vertices, topology, true)
    }

    fn build(n: usize, vertices: Vec<DVector<f64>>, topology: SignedTopology, check_signs: bool) -> Result<Self> {
        if n == 0 || n > MAX_AMBIENT_DIM {
            return Err(Error::InvalidMesh(format!("ambient dimension {n} not in [1, {MAX_AMBIENT_DIM}]")));
        }
        if topology.len() != n {
            return Err(Error::InvalidMesh(format!("expected cells of dimensions 1..={n}, got {} levels", topology.len())));
        }
        if vertices.iter().any(|v| v.len() != n) {
            return Err(Error::InvalidMesh("vertex with wrong number of coordinates".into()));
        }
        let counts: Vec<usize> = std::iter::once(vertices.len()).chain(topology.iter().map(|c| c.len())).collect();
        // reference checks
        for (i, level) in topology.iter().enumerate() {
            let d = i + 1;
            for (idx, facets) in level.iter().enumerate() {
                let id = CellId::new(d, idx);
                if facets.len() < d + 1 {
                    return Err(Error::InvalidMesh(format!("{id} has only {} facets", facets.len())));
                }
                if d == 1 && facets.len() != 2 {
                    return Err(Error::InvalidMesh(format!("{id} must have exactly two vertices")));
                }
                let mut seen = HashSet::new();
                for &(f, s) in facets {
                    if f >= counts[d - 1] {
                        return Err(Error::Schema(format!("{id} references missing {}", CellId::new(d - 1, f))));
                    }
                    if !seen.insert(f) {
                        return Err(Error::InvalidMesh(format!("{id} lists {} twice", CellId::new(d - 1, f))));
                    }
                    if check_signs && s != 1 && s != -1 {
                        return Err(Error::Schema(format!("{id}: sign {s} is not ±1")));
                    }
                }
            }
        }
        // cofaces and dangling cells
        let mut cofaces: Vec<Vec<Vec<usize>>> = counts.iter().map(|&c| vec![Vec::new(); c]).collect();
        for (i, level) in topology.iter().enumerate() {
            for (idx, facets) in level.iter().enumerate() {
                for &(f, _) in facets {
                    cofaces[i][f].push(idx);
                }
            }
        }
        for d in 0..n {
            if let Some(idx) = cofaces[d].iter().position(|c| c.is_empty()) {
                return Err(Error::DanglingCell(CellId::new(d, idx)));
            }
        }
        // vertex sets and subcell lattices
        let mut cells: Vec<Vec<Cell>> = Vec::with_capacity(n + 1);
        cells.push(
            vertices
                .iter()
                .enumerate()
                .map(|(i, v)| Cell {
                    id: CellId::new(0, i),
                    boundary: Vec::new(),
                    vertices: vec![i],
                    frame: DMatrix::zeros(n, 0),
                    center: v.clone(),
                    diameter: 0.0,
                    measure: 1.0,
                    chunks: vec![SimplexChunk { points: vec![v.clone()], parent: CellId::new(0, i), sign: 1.0, measure: 1.0 }],
                    subcells: vec![vec![i]],
                })
                .collect(),
        );
        for (i, level) in topology.iter().enumerate() {
            let d = i + 1;
            let mut out = Vec::with_capacity(level.len());
            for (idx, facets) in level.iter().enumerate() {
                let mut subcells: Vec<Vec<usize>> = vec![Vec::new(); d + 1];
                for &(f, _) in facets {
                    let fc = &cells[d - 1][f];
                    for (dd, s) in fc.subcells.iter().enumerate() {
                        subcells[dd].extend_from_slice(s);
                    }
                }
                for s in subcells.iter_mut() {
                    s.sort_unstable();
                    s.dedup();
                }
                subcells[d] = vec![idx];
                let verts = subcells[0].clone();
                let center = verts.iter().fold(DVector::zeros(n), |acc, &v| acc + &vertices[v]) / verts.len() as f64;
                let mut diameter: f64 = 0.0;
                for (a, &va) in verts.iter().enumerate() {
                    for &vb in &verts[a + 1..] {
                        diameter = diameter.max((&vertices[va] - &vertices[vb]).norm());
                    }
                }
                let id = CellId::new(d, idx);
                if diameter <= 0.0 {
                    return Err(Error::Degenerate { cell: id, detail: "zero diameter".into() });
                }
                out.push(Cell {
                    id,
                    boundary: facets.clone(),
                    vertices: verts,
                    frame: DMatrix::zeros(n, d),
                    center,
                    diameter,
                    measure: 0.0,
                    chunks: Vec::new(),
                    subcells,
                });
            }
            cells.push(out);
        }
        let h = cells.iter().skip(1).flatten().fold(0.0f64, |m, c| m.max(c.diameter));
        let mut mesh = Self { ambient_dim: n, vertices, cells, cofaces, h };
        mesh.orient(check_signs)?;
        mesh.check_boundary_of_boundary()?;
        mesh.subdivide()?;
        Ok(mesh)
    }

    /// Frames and relative orientations, dimension by dimension.
    fn orient(&mut self, check_signs: bool) -> Result<()> {
        let n = self.ambient_dim;
        for d in 1..=n {
            for idx in 0..self.cells[d].len() {
                let id = CellId::new(d, idx);
                let frame = if d == n {
                    DMatrix::identity(n, n)
                } else if d == 1 {
                    let c = &self.cells[1][idx];
                    let tail = c.boundary.iter().find(|b| b.1 < 0).map(|b| b.0);
                    let head = c.boundary.iter().find(|b| b.1 > 0).map(|b| b.0);
                    let (t, h) = match (tail, head) {
                        (Some(t), Some(h)) => (t, h),
                        _ => {
                            let v = c.boundary[0].0;
                            return Err(Error::Orientation {
                                cell: id,
                                sub: CellId::new(0, v),
                                detail: "edge endpoints must carry opposite signs".into(),
                            });
                        }
                    };
                    let dir = &self.vertices[h] - &self.vertices[t];
                    DMatrix::from_column_slice(n, 1, (dir.clone() / dir.norm()).as_slice())
                } else {
                    self.planar_frame(id)?
                };
                self.cells[d][idx].frame = frame;
                let derived = self.derived_signs(id)?;
                let given: Vec<i8> = self.cells[d][idx].boundary.iter().map(|b| b.1).collect();
                if check_signs && d >= 2 {
                    let same = derived.iter().zip(&given).all(|(a, b)| a == b);
                    let flipped = derived.iter().zip(&given).all(|(a, b)| *a == -b);
                    if flipped {
                        let mut fr = self.cells[d][idx].frame.clone();
                        fr.column_mut(0).neg_mut();
                        self.cells[d][idx].frame = fr;
                    } else if !same {
                        let (pos, _) = derived.iter().zip(&given).enumerate().find(|(_, (a, b))| a == b).unwrap_or((0, (&0, &0)));
                        let (bad, _) = derived
                            .iter()
                            .zip(&given)
                            .enumerate()
                            .find(|(_, (a, b))| a != b)
                            .expect("mixed signs");
                        let c = &self.cells[d][idx];
                        return Err(Error::Orientation {
                            cell: id,
                            sub: CellId::new(d - 1, c.boundary[bad].0),
                            detail: format!(
                                "sign of this facet disagrees with the orientation induced by {}",
                                CellId::new(d - 1, c.boundary[pos].0)
                            ),
                        });
                    }
                } else {
                    for (b, s) in self.cells[d][idx].boundary.iter_mut().zip(&derived) {
                        b.1 = *s;
                    }
                }
            }
        }
        Ok(())
    }

    fn planar_frame(&self, id: CellId) -> Result<DMatrix<f64>> {
        let c = &self.cells[id.dim][id.index];
        let n = self.ambient_dim;
        let m = DMatrix::from_fn(n, c.vertices.len(), |i, j| self.vertices[c.vertices[j]][i] - c.center[i]);
        let svd = m.svd(true, false);
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let u = svd.u.unwrap();
        let smax = svd.singular_values[order[0]];
        if order.len() > id.dim && svd.singular_values[order[id.dim]] > 1e-10 * smax {
            return Err(Error::Degenerate {
                cell: id,
                detail: format!("vertices are not coplanar (relative deviation {:.2e})", svd.singular_values[order[id.dim]] / smax),
            });
        }
        if svd.singular_values[order[id.dim - 1]] < 1e-10 * smax {
            return Err(Error::Degenerate { cell: id, detail: "vertices do not span the cell dimension".into() });
        }
        let mut q = DMatrix::from_fn(n, id.dim, |i, j| u[(i, order[j])]);
        // deterministic orientation: first nonzero entry of each column positive
        for mut col in q.column_iter_mut() {
            if let Some(v) = col.iter().find(|v| v.abs() > 1e-12) {
                if *v < 0.0 {
                    col.neg_mut();
                }
            }
        }
        Ok(q)
    }

    /// Relative orientations of the facets of `id` induced by the frames.
    fn derived_signs(&self, id: CellId) -> Result<Vec<i8>> {
        let c = &self.cells[id.dim][id.index];
        let mut out = Vec::with_capacity(c.boundary.len());
        for &(g, _) in &c.boundary {
            let gc = &self.cells[id.dim - 1][g];
            let mut v = &gc.center - &c.center;
            let qg = &gc.frame;
            v -= qg * qg.tr_mul(&v);
            let norm = v.norm();
            if norm < 1e-12 * c.diameter {
                return Err(Error::Degenerate { cell: id, detail: format!("center lies on the hull of {}", gc.id) });
            }
            v /= norm;
            let mut m = DMatrix::zeros(self.ambient_dim, id.dim);
            m.set_column(0, &v);
            for j in 0..id.dim - 1 {
                m.set_column(j + 1, &qg.column(j));
            }
            let det = (c.frame.transpose() * m).determinant();
            out.push(if det > 0.0 { 1 } else { -1 });
        }
        Ok(out)
    }

    /// Checks `Σ_{f′} ε_{ff′} ε_{f′f″} = 0` for every cell `f` and `(d−2)`-subcell `f″`.
    pub fn check_boundary_of_boundary(&self) -> Result<()> {
        for d in 2..=self.ambient_dim {
            for c in &self.cells[d] {
                let mut acc: std::collections::BTreeMap<usize, i32> = Default::default();
                for &(g, s) in &c.boundary {
                    for &(e, t) in &self.cells[d - 1][g].boundary {
                        *acc.entry(e).or_default() += (s * t) as i32;
                    }
                }
                if let Some((&e, &v)) = acc.iter().find(|(_, v)| **v != 0) {
                    return Err(Error::Orientation {
                        cell: c.id,
                        sub: CellId::new(d - 2, e),
                        detail: format!("boundary of boundary does not cancel (sum {v})"),
                    });
                }
            }
        }
        Ok(())
    }

    fn subdivide(&mut self) -> Result<()> {
        for d in 1..=self.ambient_dim {
            for idx in 0..self.cells[d].len() {
                let id = CellId::new(d, idx);
                let c = &self.cells[d][idx];
                let mut chunks = Vec::new();
                for &(g, eps) in &c.boundary {
                    let gc = &self.cells[d - 1][g];
                    let pieces: Vec<(Vec<DVector<f64>>, f64)> = if gc.is_simplex() && d - 1 > 0 {
                        let pts: Vec<DVector<f64>> = gc.vertices.iter().map(|&v| self.vertices[v].clone()).collect();
                        let s = simplex_sign(&gc.frame, &pts);
                        vec![(pts, s)]
                    } else {
                        gc.chunks.iter().map(|ch| (ch.points.clone(), ch.sign)).collect()
                    };
                    for (pts, s) in pieces {
                        let mut p = Vec::with_capacity(d + 1);
                        p.push(c.center.clone());
                        p.extend(pts);
                        let (measure, sign) = simplex_measure(&c.frame, &p);
                        if measure <= 1e-14 * c.diameter.powi(d as i32) {
                            return Err(Error::Degenerate { cell: id, detail: "degenerate cone to the cell center".into() });
                        }
                        if sign != eps as f64 * s {
                            return Err(Error::Degenerate {
                                cell: id,
                                detail: format!("cell is not star-shaped with respect to its center (facet {})", gc.id),
                            });
                        }
                        chunks.push(SimplexChunk { points: p, parent: id, sign, measure });
                    }
                }
                let c = &mut self.cells[d][idx];
                c.measure = chunks.iter().map(|ch| ch.measure).sum();
                c.chunks = chunks;
            }
        }
        Ok(())
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    pub fn num_cells(&self, d: usize) -> usize {
        self.cells.get(d).map_or(0, |c| c.len())
    }

    pub fn cells(&self, d: usize) -> &[Cell] {
        &self.cells[d]
    }

    pub fn cell(&self, id: CellId) -> &Cell {
        &self.cells[id.dim][id.index]
    }

    pub fn cell_ids(&self, d: usize) -> impl Iterator<Item = CellId> + '_ {
        (0..self.num_cells(d)).map(move |i| CellId::new(d, i))
    }

    /// Largest cell diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Indices of the cells of dimension `d′` in the closure of `f`.
    pub fn subcells(&self, f: CellId, dp: usize) -> Result<&[usize]> {
        if dp > f.dim {
            return Err(Error::InvalidArgument(format!("subcell dimension {dp} exceeds {}", f.dim)));
        }
        Ok(&self.cell(f).subcells[dp])
    }

    /// Indices of the `(d+1)`-cells having `f` as a facet.
    pub fn cofaces(&self, f: CellId) -> &[usize] {
        self.cofaces.get(f.dim).map_or(&[], |c| &c[f.index])
    }

    pub fn is_subcell(&self, f: CellId, g: CellId) -> bool {
        g.dim <= f.dim && self.cell(f).subcells[g.dim].binary_search(&g.index).is_ok()
    }

    /// `ε_{ff′}` for a facet `f′` of `f`.
    pub fn relative_orientation(&self, f: CellId, g: CellId) -> Result<i8> {
        if g.dim + 1 != f.dim {
            return Err(Error::NotASubcell { cell: f, sub: g });
        }
        self.cell(f)
            .boundary
            .iter()
            .find(|b| b.0 == g.index)
            .map(|b| b.1)
            .ok_or(Error::NotASubcell { cell: f, sub: g })
    }

    /// Chart map from the local coordinates of `g` to those of `f ⊇ g`.
    pub fn chart_map(&self, f: CellId, g: CellId) -> Result<ChartMap> {
        if !self.is_subcell(f, g) {
            return Err(Error::NotASubcell { cell: f, sub: g });
        }
        let (cf, cg) = (self.cell(f), self.cell(g));
        let jac = cf.frame.tr_mul(&cg.frame);
        let a = &jac * (cg.scale() / cf.scale());
        let b = cf.frame.tr_mul(&(&cg.center - &cf.center)) / cf.scale();
        Ok(ChartMap { a, b, jac })
    }

    /// `(n−1)`-cells lying on the domain boundary.
    pub fn boundary_facets(&self) -> Vec<usize> {
        let n = self.ambient_dim;
        (0..self.num_cells(n - 1)).filter(|&i| self.cofaces[n - 1][i].len() == 1).collect()
    }

    /// Vertices in the closure of the domain boundary.
    pub fn boundary_vertices(&self) -> HashSet<usize> {
        let n = self.ambient_dim;
        self.boundary_facets()
            .into_iter()
            .flat_map(|f| self.cells[n - 1][f].vertices.clone())
            .collect()
    }

    /// Unsigned incidence in the form accepted by [`PolytopalMesh::from_topology`],
    /// edges listed tail first.
    pub fn topology(&self) -> Topology {
        (1..=self.ambient_dim)
            .map(|d| {
                self.cells[d]
                    .iter()
                    .map(|c| {
                        if d == 1 {
                            let mut b = c.boundary.clone();
                            b.sort_by_key(|x| x.1);
                            b.into_iter().map(|x| x.0).collect()
                        } else {
                            c.boundary.iter().map(|x| x.0).collect()
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Signed incidence as stored.
    pub fn signed_topology(&self) -> SignedTopology {
        (1..=self.ambient_dim).map(|d| self.cells[d].iter().map(|c| c.boundary.clone()).collect()).collect()
    }

    /// Same topology with new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<DVector<f64>>) -> Result<Self> {
        Self::from_signed(self.ambient_dim, vertices, self.signed_topology())
    }

    /// Euler characteristic `Σ (−1)^d |Δ_d|`.
    pub fn euler_characteristic(&self) -> i64 {
        (0..=self.ambient_dim).map(|d| if d % 2 == 0 { 1 } else { -1 } * self.num_cells(d) as i64).sum()
    }
}

fn simplex_measure(frame: &DMatrix<f64>, pts: &[DVector<f64>]) -> (f64, f64) {
    let d = pts.len() - 1;
    let e = DMatrix::from_fn(frame.ncols(), d, |i, j| frame.column(i).dot(&(&pts[j + 1] - &pts[0])));
    let det = e.determinant();
    let fact: f64 = (1..=d).map(|i| i as f64).product();
    (det.abs() / fact, if det > 0.0 { 1.0 } else { -1.0 })
}

fn simplex_sign(frame: &DMatrix<f64>, pts: &[DVector<f64>]) -> f64 {
    simplex_measure(frame, pts).1
}

#[cfg(test)]
mod tests;
