//! Per-cell polynomial subspaces: full, Koszul complement, image of `d`,
//! and trimmed spaces, with L² projections and the direct-sum decompositions.
//!
//! Every subspace is stored as an L²-orthonormalized set of columns in the
//! monomial-form basis of an enclosing full space `Full(R, ℓ)` of the cell.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exterior::{hodge_star, pullback_alt, Orientation};
use crate::linalg::{hcat, solve_spd, solve_square};
use crate::mesh::{CellId, PolytopalMesh};
use crate::poly::{derivative_matrix, full_dim, koszul_matrix, pullback_matrix, FormField, PolyForm};
use crate::quadrature::{field_load, Moments};

/// Relative singular value cutoff of the rank-revealing orthonormalization.
pub const RANK_CUTOFF: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpaceTag {
    /// `P_rΛ^ℓ`.
    Full,
    /// `K_r^ℓ = κ P_{r−1}Λ^{ℓ+1}`.
    Koszul,
    /// `d P_rΛ^{ℓ−1}`, stored with the form degree `ℓ` of its elements.
    ImageD,
    /// `P_r^−Λ^ℓ`.
    Trimmed,
}

/// An orthonormalized basis of a polynomial subspace on one cell.
#[derive(Clone, Debug)]
pub struct SubspaceBasis {
    pub cell: CellId,
    pub tag: SpaceTag,
    /// Degree parameter of the tag (`r` in `Koszul(r)`, `ImageD(r)`, …).
    pub r: usize,
    /// Form degree of the elements.
    pub form_degree: usize,
    /// Polynomial degree `R` of the enclosing `Full(R, ℓ)`.
    pub enclosing: usize,
    /// `full_dim(R, ℓ) × dim` coefficient matrix.
    pub columns: DMatrix<f64>,
    /// L² Gram matrix of the columns (the identity up to roundoff).
    pub mass: DMatrix<f64>,
    /// Smallest retained singular value relative to the largest one.
    pub min_singular: f64,
    /// Largest discarded singular value relative to the largest one.
    pub max_dropped: f64,
}

impl SubspaceBasis {
    pub fn dim(&self) -> usize {
        self.columns.ncols()
    }

    pub fn element(&self, coeffs: &DVector<f64>, cell_dim: usize, scale: f64) -> PolyForm {
        PolyForm::from_coeffs(cell_dim, self.form_degree, self.enclosing, scale, &self.columns * coeffs).with_cell(self.cell)
    }
}

type BasisKey = (CellId, SpaceTag, usize, usize);
type TraceKey = (CellId, CellId, usize, usize);

/// Thread-safe cache of local spaces, moments and trace matrices on a mesh.
pub struct LocalSpaces {
    mesh: Arc<PolytopalMesh>,
    moments: Vec<Vec<RwLock<Option<Arc<Moments>>>>>,
    bases: RwLock<HashMap<BasisKey, Arc<SubspaceBasis>>>,
    traces: RwLock<HashMap<TraceKey, Arc<DMatrix<f64>>>>,
}

impl std::fmt::Debug for LocalSpaces {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalSpaces").field("cached_bases", &self.bases.read().unwrap().len()).finish()
    }
}

impl LocalSpaces {
    pub fn new(mesh: Arc<PolytopalMesh>) -> Self {
        let moments = (0..=mesh.ambient_dim())
            .map(|d| (0..mesh.num_cells(d)).map(|_| RwLock::new(None)).collect())
            .collect();
        Self { mesh, moments, bases: RwLock::new(HashMap::new()), traces: RwLock::new(HashMap::new()) }
    }

    pub fn mesh(&self) -> &PolytopalMesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<PolytopalMesh> {
        &self.mesh
    }

    /// Monomial moments of `f` up to at least `degree`.
    pub fn moments(&self, f: CellId, degree: usize) -> Result<Arc<Moments>> {
        let slot = &self.moments[f.dim][f.index];
        if let Some(m) = slot.read().unwrap().as_ref() {
            if m.degree() >= degree {
                return Ok(m.clone());
            }
        }
        let m = Arc::new(Moments::compute(self.mesh.cell(f), degree)?);
        let mut w = slot.write().unwrap();
        if w.as_ref().is_none_or(|old| old.degree() < degree) {
            *w = Some(m.clone());
        }
        Ok(m)
    }

    /// L² Gram matrix between `Full(r1, ℓ)` and `Full(r2, ℓ)` on `f`.
    pub fn gram(&self, f: CellId, r1: usize, r2: usize, ell: usize) -> Result<DMatrix<f64>> {
        Ok(self.moments(f, r1 + r2)?.gram(r1, r2, ell))
    }

    /// Matrix of `(a, b) ↦ ∫_f a ∧ b` on `Full(ra, ℓ) × Full(rb, d − ℓ)`.
    pub fn wedge(&self, f: CellId, ell: usize, ra: usize, rb: usize) -> Result<DMatrix<f64>> {
        Ok(self.moments(f, ra + rb)?.wedge(ell, ra, rb))
    }

    /// Trace `Full(r, ℓ)` on `f` → `Full(r, ℓ)` on the subcell `g`.
    pub fn trace_matrix(&self, f: CellId, g: CellId, r: usize, ell: usize) -> Result<Arc<DMatrix<f64>>> {
        let key = (f, g, r, ell);
        if let Some(m) = self.traces.read().unwrap().get(&key) {
            return Ok(m.clone());
        }
        let map = self.mesh.chart_map(f, g)?;
        let m = Arc::new(pullback_matrix(r, ell, &map.a, &map.b, &map.jac));
        self.traces.write().unwrap().insert(key, m.clone());
        Ok(m)
    }

    fn cached(&self, key: BasisKey, build: impl FnOnce() -> Result<SubspaceBasis>) -> Result<Arc<SubspaceBasis>> {
        if let Some(b) = self.bases.read().unwrap().get(&key) {
            return Ok(b.clone());
        }
        let b = Arc::new(build()?);
        Ok(self.bases.write().unwrap().entry(key).or_insert(b).clone())
    }

    fn finish(&self, f: CellId, tag: SpaceTag, r: usize, ell: usize, enclosing: usize, raw: DMatrix<f64>) -> Result<SubspaceBasis> {
        let g = self.gram(f, enclosing, enclosing, ell)?;
        let (columns, min_singular, max_dropped) = orthonormalize(raw, &g);
        let mass = columns.transpose() * &g * &columns;
        Ok(SubspaceBasis { cell: f, tag, r, form_degree: ell, enclosing, columns, mass, min_singular, max_dropped })
    }

    /// `P_rΛ^ℓ(f)`.
    pub fn full_space(&self, f: CellId, r: usize, ell: usize) -> Result<Arc<SubspaceBasis>> {
        check_degree(f, ell)?;
        self.cached((f, SpaceTag::Full, r, ell), || {
            let n = full_dim(f.dim, r as i64, ell);
            self.finish(f, SpaceTag::Full, r, ell, r, DMatrix::identity(n, n))
        })
    }

    /// `K_r^ℓ(f) = κ P_{r−1}Λ^{ℓ+1}(f)`; empty for `r = 0` or `ℓ = dim f`.
    pub fn koszul_space(&self, f: CellId, r: usize, ell: usize) -> Result<Arc<SubspaceBasis>> {
        check_degree(f, ell)?;
        self.cached((f, SpaceTag::Koszul, r, ell), || {
            let d = f.dim;
            let n = full_dim(d, r as i64, ell);
            let raw = if r == 0 || ell == d {
                DMatrix::zeros(n, 0)
            } else {
                koszul_matrix(d, r - 1, ell + 1) * self.mesh.cell(f).scale()
            };
            self.finish(f, SpaceTag::Koszul, r, ell, r, raw)
        })
    }

    /// `d P_rΛ^{ℓ−1}(f)`, a subspace of `P_{r−1}Λ^ℓ(f)`; `ell ≥ 1`.
    pub fn image_d_space(&self, f: CellId, r: usize, ell: usize) -> Result<Arc<SubspaceBasis>> {
        check_degree(f, ell)?;
        if ell == 0 {
            return Err(Error::InvalidArgument("the image of d has form degree at least 1".into()));
        }
        self.cached((f, SpaceTag::ImageD, r, ell), || {
            let d = f.dim;
            let raw = derivative_matrix(d, r, ell - 1) / self.mesh.cell(f).scale();
            let raw = if r == 0 { DMatrix::zeros(raw.nrows(), 0) } else { raw };
            self.finish(f, SpaceTag::ImageD, r, ell, r.saturating_sub(1), raw)
        })
    }

    /// `P_r^−Λ^ℓ(f) = d P_rΛ^{ℓ−1}(f) ⊕ K_r^ℓ(f)` (`P_rΛ^0(f)` for `ℓ = 0`).
    pub fn trimmed_space(&self, f: CellId, r: usize, ell: usize) -> Result<Arc<SubspaceBasis>> {
        check_degree(f, ell)?;
        self.cached((f, SpaceTag::Trimmed, r, ell), || {
            let d = f.dim;
            let n = full_dim(d, r as i64, ell);
            let raw = if ell == 0 {
                DMatrix::identity(n, n)
            } else if r == 0 {
                DMatrix::zeros(n, 0)
            } else {
                let img = self.image_d_space(f, r, ell)?;
                let lifted = embed_rows(&img.columns, n);
                let k = self.koszul_space(f, r, ell)?;
                hcat(&[&lifted, &k.columns])
            };
            self.finish(f, SpaceTag::Trimmed, r, ell, r, raw)
        })
    }

    /// Matrix of the L² projection onto `b` of forms in `Full(source, ℓ)`,
    /// returning coefficients in `b`.
    pub fn projector(&self, b: &SubspaceBasis, source: usize) -> Result<DMatrix<f64>> {
        let g = self.gram(b.cell, b.enclosing, source, b.form_degree)?;
        solve_spd(b.cell, "L2 projection", &b.mass, &(b.columns.transpose() * g))
    }

    /// L² projection of a polynomial form of the same cell.
    pub fn l2_project(&self, b: &SubspaceBasis, w: &PolyForm) -> Result<DVector<f64>> {
        if w.dim() != b.cell.dim || w.form_degree() != b.form_degree {
            return Err(Error::DimensionMismatch(format!(
                "projecting a {}-form in dimension {} onto {}-forms on {}",
                w.form_degree(),
                w.dim(),
                b.form_degree,
                b.cell
            )));
        }
        Ok(self.projector(b, w.poly_degree())? * w.coeffs())
    }

    /// L² projection of `⋆ tr_f F` (if `star`) or `tr_f F` onto `b`.
    pub fn l2_project_field(&self, b: &SubspaceBasis, field: &FormField, star: bool, quad_degree: usize) -> Result<DVector<f64>> {
        let cell = self.mesh.cell(b.cell);
        let d = cell.dim();
        let expected = if star { d - b.form_degree } else { b.form_degree };
        if field.dim() != self.mesh.ambient_dim() || field.degree() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{}-form field cannot be projected onto {}-forms on {}",
                field.degree(),
                b.form_degree,
                b.cell
            )));
        }
        if b.dim() == 0 {
            return Ok(DVector::zeros(0));
        }
        let load = field_load(cell, b.enclosing, b.form_degree, quad_degree, |x| {
            let tr = pullback_alt(&field.eval(x.as_slice()), &cell.frame);
            if star {
                hodge_star(&tr, Orientation::Positive)
            } else {
                tr
            }
        })?;
        solve_spd(b.cell, "L2 projection", &b.mass, &DMatrix::from_column_slice(b.dim(), 1, (b.columns.transpose() * load).as_slice()))
            .map(|m| m.column(0).into_owned())
    }

    /// Splits `ω ∈ P_rΛ^ℓ(f)`, `ℓ ≥ 1`, as `dμ + ν` with `μ ∈ K_{r+1}^{ℓ−1}(f)`
    /// and `ν ∈ K_r^ℓ(f)`; returns the coefficients of `μ` and `ν`.
    pub fn decompose(&self, w: &PolyForm) -> Result<(DVector<f64>, DVector<f64>)> {
        self.split(w, 1)
    }

    /// Splits `ω ∈ P_r^−Λ^ℓ(f)`, `ℓ ≥ 1`, as `dμ + ν` with `μ ∈ K_r^{ℓ−1}(f)`
    /// and `ν ∈ K_r^ℓ(f)`.
    pub fn trimmed_decompose(&self, w: &PolyForm) -> Result<(DVector<f64>, DVector<f64>)> {
        self.split(w, 0)
    }

    fn split(&self, w: &PolyForm, extra: usize) -> Result<(DVector<f64>, DVector<f64>)> {
        let f = w.cell.ok_or_else(|| Error::InvalidArgument("form is not attached to a cell".into()))?;
        let (d, ell, r) = (w.dim(), w.form_degree(), w.poly_degree());
        if ell == 0 || d != f.dim {
            return Err(Error::InvalidArgument("decomposition needs a form of degree ≥ 1 on its cell".into()));
        }
        let kmu = self.koszul_space(f, r + extra, ell - 1)?;
        let knu = self.koszul_space(f, r, ell)?;
        let n = full_dim(d, r as i64, ell);
        let dmu = embed_rows(&(derivative_matrix(d, r + extra, ell - 1) * &kmu.columns / self.mesh.cell(f).scale()), n);
        let a = hcat(&[&dmu, &knu.columns]);
        if a.ncols() != n && extra == 1 {
            return Err(Error::Degenerate { cell: f, detail: format!("Koszul pair has dimension {} instead of {n}", a.ncols()) });
        }
        let x = if extra == 1 {
            solve_square(f, "Koszul decomposition", &a, &DMatrix::from_column_slice(n, 1, w.coeffs().as_slice()))?
        } else {
            // trimmed forms: least squares in the L² metric on the trimmed subspace
            let g = self.gram(f, r, r, ell)?;
            let m = a.transpose() * &g * &a;
            solve_spd(f, "trimmed decomposition", &m, &(a.transpose() * g * DMatrix::from_column_slice(n, 1, w.coeffs().as_slice())))?
        };
        let (mu, nu) = (x.rows(0, kmu.dim()).column(0).into_owned(), x.rows(kmu.dim(), knu.dim()).column(0).into_owned());
        Ok((mu, nu))
    }
}

fn check_degree(f: CellId, ell: usize) -> Result<()> {
    if ell > f.dim {
        return Err(Error::InvalidArgument(format!("form degree {ell} exceeds the dimension of {f}")));
    }
    Ok(())
}

/// Zero-pads rows up to `n` (embedding a lower enclosing degree).
pub(crate) fn embed_rows(m: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    assert!(m.nrows() <= n);
    let mut out = DMatrix::zeros(n, m.ncols());
    out.rows_mut(0, m.nrows()).copy_from(m);
    out
}

/// Rank-revealing L²-orthonormalization of `raw` in the metric `g`.
fn orthonormalize(raw: DMatrix<f64>, g: &DMatrix<f64>) -> (DMatrix<f64>, f64, f64) {
    let n = raw.nrows();
    if raw.ncols() == 0 || n == 0 {
        return (DMatrix::zeros(n, 0), 1.0, 0.0);
    }
    let norms: Vec<f64> = raw.column_iter().map(|c| (c.transpose() * g * c)[(0, 0)].max(0.0).sqrt()).collect();
    let top = norms.iter().cloned().fold(0.0, f64::max);
    let kept: Vec<DVector<f64>> = raw
        .column_iter()
        .zip(&norms)
        .filter(|(_, &nm)| nm > 1e-13 * top)
        .map(|(c, &nm)| c / nm)
        .collect();
    if kept.is_empty() {
        return (DMatrix::zeros(n, 0), 1.0, 0.0);
    }
    let c = DMatrix::from_columns(&kept);
    // G = D Ĝ D with Ĝ = L̂ L̂ᵀ; the G-inner product becomes Euclidean for L̂ᵀ D⁻¹ c
    let dinv = DVector::from_fn(n, |i, _| g[(i, i)].sqrt());
    let ghat = DMatrix::from_fn(n, n, |i, j| g[(i, j)] / (dinv[i] * dinv[j]));
    let l = ghat.cholesky().expect("Gram matrix of a full polynomial space is positive definite").l();
    let dc = DMatrix::from_fn(n, c.ncols(), |i, j| c[(i, j)] * dinv[i]);
    let b = l.transpose() * dc;
    let svd = b.svd(false, true);
    let vt = svd.v_t.unwrap();
    let s = &svd.singular_values;
    let smax = s.max();
    let mut cols = Vec::new();
    let (mut smin, mut dropped) = (f64::INFINITY, 0.0f64);
    for i in 0..s.len() {
        if s[i] > RANK_CUTOFF * smax {
            cols.push(&c * vt.row(i).transpose() / s[i]);
            smin = smin.min(s[i]);
        } else {
            dropped = dropped.max(s[i]);
        }
    }
    (DMatrix::from_columns(&cols), smin / smax, dropped / smax)
}

/// Dimension of `P_r^−Λ^ℓ(R^d)`.
pub fn trimmed_dim(d: usize, r: usize, ell: usize) -> usize {
    use crate::exterior::binomial;
    if ell > d {
        return 0;
    }
    if ell == 0 {
        return binomial(d + r, d);
    }
    if r == 0 {
        return 0;
    }
    binomial(r + ell - 1, ell) * binomial(d + r, d - ell)
}

/// `dim d P_rΛ^ℓ(R^d)`, from exactness of the polynomial de Rham complex.
pub fn image_dim(d: usize, r: i64, ell: usize) -> usize {
    if r <= 0 || ell >= d {
        return 0;
    }
    let kernel = if ell == 0 { 1 } else { image_dim(d, r + 1, ell - 1) };
    full_dim(d, r, ell) - kernel
}

/// `dim K_r^ℓ(R^d)`.
pub fn koszul_dim(d: usize, r: usize, ell: usize) -> usize {
    if r == 0 || ell >= d {
        return 0;
    }
    let complement = if ell == 0 { 1 } else { image_dim(d, r as i64 + 1, ell - 1) };
    full_dim(d, r as i64, ell) - complement
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{annulus_2d, cartesian_grid, distort, simplicial_grid, tilted_grid};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meshes() -> Vec<PolytopalMesh> {
        vec![
            distort(&cartesian_grid(2, &[2, 2]).unwrap(), 0.08, 2).unwrap(),
            simplicial_grid(2, &[1, 1]).unwrap(),
            annulus_2d(3, 1).unwrap(),
            tilted_grid(3, &[1, 1, 1], 0.0, 0).unwrap(),
            tilted_grid(3, &[2, 1, 1], 0.1, 4).unwrap(),
            simplicial_grid(3, &[1, 1, 1]).unwrap(),
        ]
    }

    fn first_cells(m: &PolytopalMesh) -> Vec<CellId> {
        (0..=m.ambient_dim()).map(|d| CellId::new(d, 0)).collect()
    }

    #[test]
    fn koszul_examples() {
        let sq = Arc::new(cartesian_grid(2, &[1, 1]).unwrap());
        let s = LocalSpaces::new(sq);
        let f = CellId::new(2, 0);
        assert_eq!(s.koszul_space(f, 1, 1).unwrap().dim(), 1);
        assert_eq!(s.image_d_space(f, 2, 1).unwrap().dim(), 5);
        assert_eq!(s.full_space(f, 1, 1).unwrap().dim(), 6);
        for r in 0..4 {
            assert_eq!(s.koszul_space(f, r, 2).unwrap().dim(), 0);
            assert_eq!(s.trimmed_space(f, 0, 1).unwrap().dim(), 0);
        }
        let cube = Arc::new(cartesian_grid(3, &[1, 1, 1]).unwrap());
        let s = LocalSpaces::new(cube);
        let t = CellId::new(3, 0);
        assert_eq!(s.koszul_space(t, 1, 2).unwrap().dim(), 1);
        // Nédélec: dim N_r = r(r+2)(r+3)/2
        for r in 1..4usize {
            assert_eq!(s.trimmed_space(t, r, 1).unwrap().dim(), r * (r + 2) * (r + 3) / 2);
            // surjectivity of the divergence
            assert_eq!(s.image_d_space(t, r + 1, 3).unwrap().dim(), s.full_space(t, r, 3).unwrap().dim());
        }
    }

    #[test]
    fn dimension_formulas_against_enumeration() {
        for d in 1..=3usize {
            for r in 0..5usize {
                for l in 0..=d {
                    // ℓ = 0 splits off the constants
                    let split = if l == 0 { 1 } else { image_dim(d, r as i64 + 1, l - 1) };
                    assert_eq!(split + koszul_dim(d, r, l), full_dim(d, r as i64, l));
                    let tr = if l == 0 { full_dim(d, r as i64, 0) } else { image_dim(d, r as i64, l - 1) + koszul_dim(d, r, l) };
                    assert_eq!(tr, trimmed_dim(d, r, l), "d={d} r={r} l={l}");
                }
                if r >= 1 {
                    assert_eq!(trimmed_dim(d, r, d), full_dim(d, r as i64 - 1, d));
                }
            }
        }
    }

    #[test]
    fn numerical_ranks_match_dimension_formulas() {
        for m in meshes() {
            let s = LocalSpaces::new(Arc::new(m));
            for f in first_cells(s.mesh()) {
                let d = f.dim;
                for r in 0..=3 {
                    for l in 0..=d {
                        let k = s.koszul_space(f, r, l).unwrap();
                        assert_eq!(k.dim(), koszul_dim(d, r, l), "{f} K r={r} l={l}");
                        assert!(k.max_dropped < 1e-12 && (k.dim() == 0 || k.min_singular > 1e-6));
                        assert_eq!(s.trimmed_space(f, r, l).unwrap().dim(), trimmed_dim(d, r, l));
                        if l >= 1 {
                            assert_eq!(s.image_d_space(f, r + 1, l).unwrap().dim(), image_dim(d, r as i64 + 1, l - 1));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn bases_are_orthonormal_and_cached() {
        let s = LocalSpaces::new(Arc::new(tilted_grid(3, &[1, 1, 1], 0.1, 3).unwrap()));
        let t = CellId::new(3, 0);
        let b = s.trimmed_space(t, 2, 2).unwrap();
        assert!((&b.mass - DMatrix::identity(b.dim(), b.dim())).amax() < 1e-10);
        assert!(Arc::ptr_eq(&b, &s.trimmed_space(t, 2, 2).unwrap()));
    }

    #[test]
    fn projection_examples() {
        let s = LocalSpaces::new(Arc::new(distort(&cartesian_grid(2, &[2, 2]).unwrap(), 0.08, 5).unwrap()));
        let f = CellId::new(2, 1);
        let b = s.trimmed_space(f, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = DVector::from_fn(b.dim(), |_, _| rng.random_range(-1.0..1.0));
        let w = b.element(&c, 2, s.mesh().cell(f).scale());
        assert!((s.l2_project(&b, &w).unwrap() - &c).amax() < 1e-12);
        let zero = FormField::zero(2, 1);
        assert!(s.l2_project_field(&b, &zero, false, 6).unwrap().amax() == 0.0);
        // Galerkin orthogonality of a random higher-degree form
        let n = full_dim(2, 4, 1);
        let w = PolyForm::from_coeffs(2, 1, 4, s.mesh().cell(f).scale(), DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))).with_cell(f);
        let p = s.l2_project(&b, &w).unwrap();
        let g = s.gram(f, b.enclosing, 4, 1).unwrap();
        let gb = s.gram(f, b.enclosing, b.enclosing, 1).unwrap();
        let resid = b.columns.transpose() * (&g * w.coeffs() - &gb * &b.columns * &p);
        assert!(resid.amax() < 1e-11 * w.coeffs().amax());
    }

    #[test]
    fn projector_removal_identity() {
        // ∫ ⋆⁻¹π_X(⋆ω) ∧ μ = ∫ ω ∧ μ for μ ∈ X, here with X = P_2^−Λ^1 on a quad
        let s = LocalSpaces::new(Arc::new(distort(&cartesian_grid(2, &[2, 2]).unwrap(), 0.08, 5).unwrap()));
        let f = CellId::new(2, 2);
        let h = s.mesh().cell(f).scale();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = s.trimmed_space(f, 2, 1).unwrap();
        let w = PolyForm::from_coeffs(2, 1, 3, h, DVector::from_fn(full_dim(2, 3, 1), |_, _| rng.random_range(-1.0..1.0))).with_cell(f);
        let star_w = w.hodge_star().with_cell(f);
        let p = x.element(&s.l2_project(&x, &star_w).unwrap(), 2, h).hodge_star_inv();
        for j in 0..x.dim() {
            let mu = x.element(&DVector::from_fn(x.dim(), |i, _| if i == j { 1.0 } else { 0.0 }), 2, h);
            let lhs = crate::quadrature::integrate_wedge(s.mesh(), f, &p, &mu).unwrap();
            let rhs = crate::quadrature::integrate_wedge(s.mesh(), f, &w, &mu).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn decomposition_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in meshes() {
            let s = LocalSpaces::new(Arc::new(m));
            for f in first_cells(s.mesh()) {
                let (d, h) = (f.dim, s.mesh().cell(f).scale());
                for r in 0..=3usize {
                    for l in 1..=d {
                        let n = full_dim(d, r as i64, l);
                        let w = PolyForm::from_coeffs(d, l, r, h, DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))).with_cell(f);
                        let (mu, nu) = s.decompose(&w).unwrap();
                        let kmu = s.koszul_space(f, r + 1, l - 1).unwrap();
                        let knu = s.koszul_space(f, r, l).unwrap();
                        let back = kmu.element(&mu, d, h).exterior_derivative().raise_degree(r).add(&knu.element(&nu, d, h)).unwrap();
                        let g = s.gram(f, r, r, l).unwrap();
                        let e = back.coeffs() - w.coeffs();
                        let norm = |v: &DVector<f64>| (v.transpose() * &g * v)[(0, 0)].sqrt();
                        assert!(norm(&e) < 1e-10 * norm(w.coeffs()), "{f} r={r} l={l} err={} kmu={} knu={}", norm(&e) / norm(w.coeffs()), kmu.dim(), knu.dim());
                        // a Koszul element decomposes with μ = 0
                        if knu.dim() > 0 {
                            let c = DVector::from_fn(knu.dim(), |_, _| rng.random_range(-1.0..1.0));
                            let (mu, nu) = s.decompose(&knu.element(&c, d, h).raise_degree(r)).unwrap();
                            assert!(mu.amax() < 1e-9 && (nu - c).amax() < 1e-9);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn sandwich_and_trace_containment() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for m in meshes() {
            let s = LocalSpaces::new(Arc::new(m));
            let mesh = s.mesh_arc().clone();
            let n = mesh.ambient_dim();
            let f = CellId::new(n, 0);
            let h = mesh.cell(f).scale();
            for r in 1..=3usize {
                for l in 0..=n {
                    let t = s.trimmed_space(f, r, l).unwrap();
                    // P_{r−1}Λ^ℓ ⊆ P_r^−Λ^ℓ
                    let lower = s.full_space(f, r - 1, l).unwrap();
                    let proj = s.projector(&t, r - 1).unwrap();
                    let back = &t.columns * (&proj * &lower.columns);
                    assert!((embed_rows(&lower.columns, t.columns.nrows()) - back).amax() < 1e-9);
                    // traces of trimmed forms are trimmed
                    for gd in l.max(1)..n {
                        for &gi in mesh.subcells(f, gd).unwrap() {
                            let g = CellId::new(gd, gi);
                            let tg = s.trimmed_space(g, r, l).unwrap();
                            let tr = s.trace_matrix(f, g, r, l).unwrap();
                            for _ in 0..5 {
                                let c = DVector::from_fn(t.dim(), |_, _| rng.random_range(-1.0..1.0));
                                let w = &*tr * (&t.columns * c);
                                let p = &tg.columns * (s.projector(&tg, r).unwrap() * &w);
                                assert!((p - &w).amax() < 1e-10 * w.amax().max(1e-300), "{g} from {f} r={r} l={l}");
                            }
                        }
                    }
                    let _ = h;
                }
            }
        }
    }

    fn rotation(seed: u64, n: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        if q.determinant() < 0.0 {
            let mut q = q;
            q.column_mut(0).neg_mut();
            q
        } else {
            q
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn spaces_are_invariant_under_rigid_motions(seed in any::<u64>(), n in 2usize..4, r in 1usize..3) {
            let m = if n == 2 { distort(&cartesian_grid(2, &[1, 1]).unwrap(), 0.0, seed).unwrap() } else { tilted_grid(3, &[1, 1, 1], 0.0, seed).unwrap() };
            let m = if n == 2 {
                // make it an irregular quadrilateral
                let mut v = m.vertices().to_vec();
                v[3][0] += 0.2;
                m.with_vertices(v).unwrap()
            } else { m };
            let q = rotation(seed, n);
            let moved = m.with_vertices(m.vertices().iter().map(|x| &q * x * 1.7 + DVector::from_element(n, 2.0)).collect()).unwrap();
            let (s0, s1) = (LocalSpaces::new(Arc::new(m)), LocalSpaces::new(Arc::new(moved)));
            let f = CellId::new(n, 0);
            for l in 0..=n {
                for tag in [SpaceTag::Koszul, SpaceTag::Trimmed] {
                    let get = |s: &LocalSpaces| match tag {
                        SpaceTag::Koszul => s.koszul_space(f, r, l).unwrap(),
                        _ => s.trimmed_space(f, r, l).unwrap(),
                    };
                    let (b0, b1) = (get(&s0), get(&s1));
                    prop_assert_eq!(b0.dim(), b1.dim());
                    // pull the moved space back along y′ = Q y
                    let t = pullback_matrix(r, l, &q, &DVector::zeros(n), &q);
                    let pulled = &t * &b1.columns;
                    let pi = &b0.columns * s0.projector(&b0, r).unwrap();
                    prop_assert!((&pi * &pulled - &pulled).amax() < 1e-10 * pulled.amax().max(1.0));
                }
            }
        }
    }
}
