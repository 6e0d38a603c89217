//! VEM-inspired spaces of `k`-forms of degree `r`.
//!
//! A discrete form carries a scalar polynomial on every `k`-cell and, on
//! every higher cell, a pair of Koszul components: the Hodge star of the form
//! itself and the Hodge star of its exterior derivative. On `(k+1)`-cells the
//! second component has degree one lower. The global derivative only needs
//! a local derivative on `(k+1)`-cells; potentials are reconstructed by
//! increasing dimension and are not used by the complex itself.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use rayon::prelude::*;

use crate::ddr::{default_quad_degree, gather, DdrSpace, LocalOp, MAX_DEGREE_R};
use crate::error::{Error, Result};
use crate::exterior::parity;
use crate::linalg::{solve_square, staged_lstsq, vcat};
use crate::mesh::{CellId, PolytopalMesh};
use crate::poly::{derivative_matrix, full_dim, star_inv_matrix, star_matrix, FormField};
use crate::quadrature::MAX_DEGREE;
use crate::sparse::{mat_vec, TripletBuilder};
use crate::spaces::{embed_rows, LocalSpaces, SubspaceBasis};

/// Relative singular value cutoff of the potential reconstruction.
const POTENTIAL_RCOND: f64 = 1e-10;

/// Offsets of the two parts of every cell component.
#[derive(Clone, Debug)]
pub struct VemLayout {
    pub k: usize,
    pub r: usize,
    /// `(start, form part size, derivative part size)` per cell.
    parts: Vec<Vec<(usize, usize, usize)>>,
    total: usize,
}

impl VemLayout {
    pub fn new(spaces: &LocalSpaces, k: usize, r: usize) -> Result<Self> {
        let mesh = spaces.mesh();
        let n = mesh.ambient_dim();
        if k > n {
            return Err(Error::InvalidArgument(format!("form degree {k} exceeds the dimension {n}")));
        }
        let mut parts = vec![Vec::new(); n + 1];
        let mut total = 0;
        for d in k..=n {
            for f in mesh.cell_ids(d) {
                let a = form_basis(spaces, k, r, f)?.dim();
                let b = if d > k { derivative_basis(spaces, k, r, f)?.dim() } else { 0 };
                parts[d].push((total, a, b));
                total += a + b;
            }
        }
        Ok(Self { k, r, parts, total })
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// All degrees of freedom of `f`.
    pub fn range(&self, f: CellId) -> std::ops::Range<usize> {
        if f.dim < self.k {
            return 0..0;
        }
        let (s, a, b) = self.parts[f.dim][f.index];
        s..s + a + b
    }

    /// Degrees of freedom of the form component of `f`.
    pub fn form_range(&self, f: CellId) -> std::ops::Range<usize> {
        let (s, a, _) = self.parts[f.dim][f.index];
        s..s + a
    }

    /// Degrees of freedom of the derivative component of `f`.
    pub fn derivative_range(&self, f: CellId) -> std::ops::Range<usize> {
        let (s, a, b) = self.parts[f.dim][f.index];
        s + a..s + a + b
    }

    pub fn closure(&self, mesh: &PolytopalMesh, f: CellId) -> Vec<usize> {
        let mut cols = Vec::new();
        for dp in self.k..=f.dim {
            for &g in mesh.subcells(f, dp).expect("dp ≤ dim f") {
                cols.extend(self.range(CellId::new(dp, g)));
            }
        }
        cols.sort_unstable();
        cols
    }
}

/// Basis of the component holding `⋆ tr ω` on `f`.
fn form_basis(spaces: &LocalSpaces, k: usize, r: usize, f: CellId) -> Result<Arc<SubspaceBasis>> {
    match f.dim - k {
        0 => spaces.full_space(f, r, 0),
        l => spaces.koszul_space(f, r + 1, l),
    }
}

/// Basis of the component holding `⋆ tr dω` on `f`, `dim f ≥ k+1`.
fn derivative_basis(spaces: &LocalSpaces, k: usize, r: usize, f: CellId) -> Result<Arc<SubspaceBasis>> {
    match f.dim - k {
        1 => spaces.koszul_space(f, r, 0),
        l => spaces.koszul_space(f, r + 1, l - 1),
    }
}

/// `dst[:, pos(c)] += s · src[:, j]` for `c = src_cols[j]`.
fn add_columns(dst: &mut DMatrix<f64>, dst_cols: &[usize], src: &DMatrix<f64>, src_cols: &[usize], s: f64) {
    for (j, c) in src_cols.iter().enumerate() {
        let p = dst_cols.binary_search(c).expect("subcell degrees of freedom are in the closure");
        dst.column_mut(p).axpy(s, &src.column(j), 1.0);
    }
}

/// The space `V^k_{r,h}` with its local operators.
pub struct VemSpace {
    spaces: Arc<LocalSpaces>,
    layout: VemLayout,
    quad_degree: usize,
    /// Values in `Full(r+1, k)` of the cell.
    potentials: Vec<Vec<LocalOp>>,
    /// On `(k+1)`-cells only; values in `Full(r, k+1)`.
    derivatives: Vec<LocalOp>,
}

impl std::fmt::Debug for VemSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VemSpace").field("k", &self.layout.k).field("r", &self.layout.r).field("dim", &self.layout.total).finish()
    }
}

impl VemSpace {
    pub fn new(spaces: Arc<LocalSpaces>, k: usize, r: usize) -> Result<Self> {
        if r > MAX_DEGREE_R {
            return Err(Error::InvalidArgument(format!("polynomial degree {r} exceeds the supported maximum {MAX_DEGREE_R}")));
        }
        let layout = VemLayout::new(&spaces, k, r)?;
        let n = spaces.mesh().ambient_dim();
        let mut s = Self { spaces, layout, quad_degree: default_quad_degree(r + 1), potentials: vec![Vec::new(); n + 1], derivatives: Vec::new() };
        if k < n {
            let ids: Vec<CellId> = s.mesh().cell_ids(k + 1).collect();
            s.derivatives = ids.par_iter().map(|&f| s.build_derivative(f)).collect::<Result<_>>()?;
        }
        for d in k..=n {
            let ids: Vec<CellId> = s.mesh().cell_ids(d).collect();
            s.potentials[d] = ids.par_iter().map(|&f| s.build_potential(f)).collect::<Result<_>>()?;
        }
        Ok(s)
    }

    pub fn with_quad_degree(mut self, degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::QuadratureUnavailable(degree));
        }
        self.quad_degree = degree;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.layout.k
    }

    pub fn r(&self) -> usize {
        self.layout.r
    }

    pub fn dim(&self) -> usize {
        self.layout.total
    }

    pub fn layout(&self) -> &VemLayout {
        &self.layout
    }

    pub fn mesh(&self) -> &PolytopalMesh {
        self.spaces.mesh()
    }

    pub fn spaces(&self) -> &Arc<LocalSpaces> {
        &self.spaces
    }

    pub fn form_basis(&self, f: CellId) -> Result<Arc<SubspaceBasis>> {
        form_basis(&self.spaces, self.k(), self.r(), f)
    }

    pub fn derivative_basis(&self, f: CellId) -> Result<Arc<SubspaceBasis>> {
        derivative_basis(&self.spaces, self.k(), self.r(), f)
    }

    /// Discrete potential on `f`, values in `Full(r+1, k)` of `f`.
    pub fn potential(&self, f: CellId) -> &LocalOp {
        &self.potentials[f.dim][f.index]
    }

    /// Local discrete exterior derivative on a `(k+1)`-cell, values in
    /// `Full(r, k+1)` of `f`.
    pub fn local_derivative(&self, f: CellId) -> Option<&LocalOp> {
        (f.dim == self.k() + 1).then(|| &self.derivatives[f.index])
    }

    fn facets(&self, f: CellId) -> impl Iterator<Item = (CellId, f64)> + '_ {
        self.mesh().cell(f).boundary.iter().map(move |&(g, e)| (CellId::new(f.dim - 1, g), e as f64))
    }

    /// Tested against `μ + ν` with `μ` constant and `ν ∈ K_r⁰`, which span
    /// `P_r` of the cell.
    fn build_derivative(&self, f: CellId) -> Result<LocalOp> {
        let (k, r, d) = (self.k(), self.r(), f.dim);
        let sp = &self.spaces;
        let cols = self.layout.closure(self.mesh(), f);
        let c0 = sp.full_space(f, 0, 0)?;
        let knu = self.derivative_basis(f)?;
        let tests = crate::linalg::hcat(&[&embed_rows(&c0.columns, full_dim(d, r as i64, 0)), &knu.columns]);
        let w = sp.wedge(f, d, r, r)?;
        let a = tests.transpose() * w.transpose();
        let mut rmu = DMatrix::zeros(1, cols.len());
        for (g, eps) in self.facets(f) {
            let tr = sp.trace_matrix(f, g, 0, 0)?;
            let bg = self.form_basis(g)?;
            let wg = sp.wedge(g, k, r, 0)?;
            let blk = (&*tr * &c0.columns).transpose() * wg.transpose() * star_inv_matrix(k, r, 0) * &bg.columns;
            add_columns(&mut rmu, &cols, &blk, &self.layout.form_range(g).collect::<Vec<_>>(), eps);
        }
        let mut rnu = DMatrix::zeros(knu.dim(), cols.len());
        let blk = knu.columns.transpose() * w.transpose() * star_inv_matrix(d, r, 0) * &knu.columns;
        add_columns(&mut rnu, &cols, &blk, &self.layout.derivative_range(f).collect::<Vec<_>>(), 1.0);
        let mat = solve_square(f, "VEM discrete exterior derivative", &a, &vcat(&[&rmu, &rnu]))?;
        Ok(LocalOp { cols, mat })
    }

    /// Unknown in the trimmed space of degree `r+1`, tested with `dμ + ν`
    /// over the Koszul pair of degree `r+1`. The test pairing is not square
    /// in general: the equations are solved in the least-squares sense and
    /// any remaining freedom is fixed by matching the boundary potentials.
    fn build_potential(&self, f: CellId) -> Result<LocalOp> {
        let (k, r, d) = (self.k(), self.r(), f.dim);
        let sp = &self.spaces;
        let own_form: Vec<usize> = self.layout.form_range(f).collect();
        if d == k {
            let b = self.form_basis(f)?;
            let m = embed_rows(&(star_inv_matrix(d, r, 0) * &b.columns), full_dim(d, r as i64 + 1, k));
            return Ok(LocalOp { cols: own_form, mat: m });
        }
        let cols = self.layout.closure(self.mesh(), f);
        let h = self.mesh().cell(f).scale();
        let sign = parity(k + 1);
        let t = sp.trimmed_space(f, r + 1, k)?;
        let kmu = sp.koszul_space(f, r + 1, d - k - 1)?;
        let knu = sp.koszul_space(f, r + 1, d - k)?;
        let dmu = derivative_matrix(d, r + 1, d - k - 1) * &kmu.columns / h;
        let wnu = sp.wedge(f, k, r + 1, r + 1)?;
        let a = vcat(&[
            &(dmu.transpose() * sp.wedge(f, k, r + 1, r)?.transpose() * &t.columns * sign),
            &(knu.columns.transpose() * wnu.transpose() * &t.columns * sign),
        ]);

        let mut rmu = DMatrix::zeros(kmu.dim(), cols.len());
        if d == k + 1 {
            let dop = self.local_derivative(f).expect("(k+1)-cell");
            let blk = kmu.columns.transpose() * sp.wedge(f, k + 1, r, r + 1)?.transpose() * &dop.mat;
            add_columns(&mut rmu, &cols, &blk, &dop.cols, 1.0);
        } else {
            let bd = self.derivative_basis(f)?;
            let blk = kmu.columns.transpose() * sp.wedge(f, k + 1, r + 1, r + 1)?.transpose() * star_inv_matrix(d, r + 1, d - k - 1) * &bd.columns;
            add_columns(&mut rmu, &cols, &blk, &self.layout.derivative_range(f).collect::<Vec<_>>(), 1.0);
        }
        // boundary potentials, also collected for the trace matching
        let mut c_rows = Vec::new();
        let mut e_rows = Vec::new();
        for (g, eps) in self.facets(f) {
            let tr = sp.trace_matrix(f, g, r + 1, d - k - 1)?;
            let pg = self.potential(g);
            let wg = sp.wedge(g, k, r + 1, r + 1)?;
            let blk = (&*tr * &kmu.columns).transpose() * wg.transpose() * &pg.mat;
            add_columns(&mut rmu, &cols, &blk, &pg.cols, -eps);
            // ‖tr_g P − P_g‖ in L²(g), through a Cholesky factor of the Gram matrix
            let gram = sp.gram(g, r + 1, r + 1, k)?;
            let l = gram.cholesky().ok_or_else(|| Error::Degenerate { cell: g, detail: "singular Gram matrix".into() })?.l();
            let trk = sp.trace_matrix(f, g, r + 1, k)?;
            c_rows.push(l.transpose() * &*trk * &t.columns);
            e_rows.push(l.transpose() * pg.widen(&cols));
        }
        let mut rnu = DMatrix::zeros(knu.dim(), cols.len());
        let b = self.form_basis(f)?;
        let blk = knu.columns.transpose() * wnu.transpose() * star_inv_matrix(d, r + 1, d - k) * &b.columns * sign;
        add_columns(&mut rnu, &cols, &blk, &own_form, 1.0);

        let c = vcat(&c_rows.iter().collect::<Vec<_>>());
        let e = vcat(&e_rows.iter().collect::<Vec<_>>());
        let z = staged_lstsq(&a, &vcat(&[&rmu, &rnu]), &c, &e, POTENTIAL_RCOND)?;
        Ok(LocalOp { cols, mat: &t.columns * z })
    }

    fn check_field(&self, field: &FormField) -> Result<()> {
        if field.degree() != self.k() || field.dim() != self.mesh().ambient_dim() {
            return Err(Error::DimensionMismatch(format!(
                "cannot interpolate a {}-form on R^{} into a space of {}-forms on R^{}",
                field.degree(),
                field.dim(),
                self.k(),
                self.mesh().ambient_dim()
            )));
        }
        if self.k() < self.mesh().ambient_dim() && field.derivative().is_none() {
            return Err(Error::InvalidArgument("interpolation into a VEM space needs the exterior derivative of the field".into()));
        }
        Ok(())
    }

    fn interpolate_cell(&self, field: &FormField, f: CellId) -> Result<DVector<f64>> {
        let a = self.spaces.l2_project_field(&*self.form_basis(f)?, field, true, self.quad_degree)?;
        if f.dim == self.k() {
            return Ok(a);
        }
        let df = field.derivative().expect("checked");
        let b = self.spaces.l2_project_field(&*self.derivative_basis(f)?, df, true, self.quad_degree)?;
        Ok(DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied()))
    }

    /// Interpolate of a field that carries its exterior derivative.
    pub fn interpolate(&self, field: &FormField) -> Result<DVector<f64>> {
        self.check_field(field)?;
        let n = self.mesh().ambient_dim();
        let ids: Vec<CellId> = (self.k()..=n).flat_map(|d| self.mesh().cell_ids(d)).collect();
        let parts: Vec<DVector<f64>> = ids.par_iter().map(|&f| self.interpolate_cell(field, f)).collect::<Result<_>>()?;
        let mut out = DVector::zeros(self.dim());
        for (f, p) in ids.iter().zip(parts) {
            out.rows_mut(self.layout.range(*f).start, p.len()).copy_from(&p);
        }
        Ok(out)
    }

    /// Interpolate restricted to the closure of `f` (other entries zero).
    pub fn interpolate_closure(&self, field: &FormField, f: CellId) -> Result<DVector<f64>> {
        self.check_field(field)?;
        let mut out = DVector::zeros(self.dim());
        for dp in self.k()..=f.dim {
            for &g in self.mesh().subcells(f, dp)? {
                let g = CellId::new(dp, g);
                let p = self.interpolate_cell(field, g)?;
                out.rows_mut(self.layout.range(g).start, p.len()).copy_from(&p);
            }
        }
        Ok(out)
    }

    /// Global derivative `V^k → V^{k+1}`: the star of the local derivative on
    /// `(k+1)`-cells, and the derivative component moved into the form slot
    /// on higher cells.
    pub fn global_d(&self) -> Result<CsrMatrix<f64>> {
        let (k, r) = (self.k(), self.r());
        let n = self.mesh().ambient_dim();
        if k >= n {
            return Ok(CsrMatrix::zeros(0, self.dim()));
        }
        let target = VemLayout::new(&self.spaces, k + 1, r)?;
        let mut tb = TripletBuilder::new(target.len(), self.dim());
        for f in self.mesh().cell_ids(k + 1) {
            let b = self.spaces.full_space(f, r, 0)?;
            let dop = self.local_derivative(f).unwrap();
            let blk = self.spaces.projector(&b, r)? * star_matrix(f.dim, r, k + 1) * &dop.mat;
            tb.add_block(&target.form_range(f).collect::<Vec<_>>(), &dop.cols, &blk);
        }
        for d in k + 2..=n {
            for f in self.mesh().cell_ids(d) {
                for (i, j) in target.form_range(f).zip(self.layout.derivative_range(f)) {
                    tb.push(i, j, 1.0);
                }
            }
        }
        Ok(tb.build())
    }

    pub fn apply_d(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(mat_vec(&self.global_d()?, w))
    }

    /// Potential of degree `r+1` of the discrete derivative on `f`,
    /// `dim f ≥ k+2`, given `dw = D w` and the space of `(k+1)`-forms.
    pub fn derivative_potential(&self, upper: &VemSpace, dw: &DVector<f64>, f: CellId) -> Result<DVector<f64>> {
        if upper.k() != self.k() + 1 || upper.r() != self.r() || f.dim < self.k() + 2 {
            return Err(Error::InvalidArgument("needs the space of (k+1)-forms of the same degree and a cell of dimension ≥ k+2".into()));
        }
        Ok(upper.potential(f).apply(dw))
    }

    /// Largest `|π⁰ ω_f|` over `k`-cells, in the orthonormal constant basis.
    pub fn flatness_defect(&self, w: &DVector<f64>) -> Result<f64> {
        let mut worst = 0.0f64;
        for f in self.mesh().cell_ids(self.k()) {
            let b0 = self.spaces.full_space(f, 0, 0)?;
            let c = self.spaces.projector(&b0, self.r())? * (&self.form_basis(f)?.columns * gather(w, &self.layout.form_range(f).collect::<Vec<_>>()));
            worst = worst.max(c.amax());
        }
        Ok(worst)
    }

    /// Explicit flat preimage of a flat kernel element: zero form parts and
    /// derivative parts copied from `η`.
    pub fn flat_preimage(&self, lower: Option<&VemSpace>, eta: &DVector<f64>) -> Result<DVector<f64>> {
        const TOL: f64 = 1e-9;
        let (k, r) = (self.k(), self.r());
        let scale = eta.amax().max(1e-3);
        let defect = self.flatness_defect(eta)?;
        if defect > TOL * scale {
            return Err(Error::NotFlat(defect));
        }
        let image = self.apply_d(eta)?;
        if image.amax() > TOL * scale {
            return Err(Error::NotInKernel(image.amax()));
        }
        let Some(lower) = lower else {
            if k != 0 {
                return Err(Error::InvalidArgument("a preimage space is needed for k ≥ 1".into()));
            }
            if eta.amax() > TOL {
                return Err(Error::PreimageResidual(eta.amax()));
            }
            return Ok(DVector::zeros(0));
        };
        if lower.k() + 1 != k || lower.r() != r {
            return Err(Error::InvalidArgument("preimage space must have degree k−1 and the same r".into()));
        }
        let n = self.mesh().ambient_dim();
        let mut w = DVector::zeros(lower.dim());
        for f in self.mesh().cell_ids(k) {
            let kb = lower.derivative_basis(f)?;
            let v = &self.form_basis(f)?.columns * gather(eta, &self.layout.form_range(f).collect::<Vec<_>>());
            let c = self.spaces.projector(&kb, r)? * v;
            w.rows_mut(lower.layout.derivative_range(f).start, c.len()).copy_from(&c);
        }
        for d in k + 1..=n {
            for f in self.mesh().cell_ids(d) {
                for (i, j) in lower.layout.derivative_range(f).zip(self.layout.form_range(f)) {
                    w[i] = eta[j];
                }
            }
        }
        let resid = (lower.apply_d(&w)? - eta).amax();
        if resid > TOL * scale {
            return Err(Error::PreimageResidual(resid / scale));
        }
        Ok(w)
    }

    fn check_low(&self, low: &DdrSpace) -> Result<()> {
        if low.k() != self.k() || low.r() != 0 || !Arc::ptr_eq(low.spaces(), &self.spaces) {
            return Err(Error::InvalidArgument("reduction and extension need the lowest-degree DDR space of the same k on the same mesh".into()));
        }
        Ok(())
    }

    /// Sparse matrix of the reduction `V^k_r → X^k_0` (averages on `k`-cells).
    pub fn reduction(&self, low: &DdrSpace) -> Result<CsrMatrix<f64>> {
        self.check_low(low)?;
        let mut tb = TripletBuilder::new(low.dim(), self.dim());
        for f in self.mesh().cell_ids(self.k()) {
            let blk = self.spaces.projector(&*low.component_basis(f)?, self.r())? * &self.form_basis(f)?.columns;
            tb.add_block(&low.layout().range(f).collect::<Vec<_>>(), &self.layout.form_range(f).collect::<Vec<_>>(), &blk);
        }
        Ok(tb.build())
    }

    /// Dense matrix of the extension `X^k_0 → V^k_r`: Koszul projections of
    /// the stars of the lowest-degree potential and derivative.
    pub fn extension_matrix(&self, low: &DdrSpace) -> Result<DMatrix<f64>> {
        self.check_low(low)?;
        let k = self.k();
        let sp = &self.spaces;
        let n = self.mesh().ambient_dim();
        let mut e = DMatrix::zeros(self.dim(), low.dim());
        let mut put = |rows: std::ops::Range<usize>, op: &LocalOp, m: DMatrix<f64>| {
            let blk = m * &op.mat;
            for (j, &c) in op.cols.iter().enumerate() {
                for (i, row) in rows.clone().enumerate() {
                    e[(row, c)] += blk[(i, j)];
                }
            }
        };
        for f in self.mesh().cell_ids(k) {
            let b0 = low.component_basis(f)?;
            let op = LocalOp { cols: low.layout().range(f).collect(), mat: b0.columns.clone() };
            put(self.layout.form_range(f), &op, sp.projector(&*self.form_basis(f)?, 0)?);
        }
        for d in k + 1..=n {
            for f in self.mesh().cell_ids(d) {
                let pa = sp.projector(&*self.form_basis(f)?, 0)? * star_matrix(d, 0, k);
                put(self.layout.form_range(f), low.potential(f), pa);
                let pb = sp.projector(&*self.derivative_basis(f)?, 0)? * star_matrix(d, 0, k + 1);
                put(self.layout.derivative_range(f), low.local_derivative(f).expect("dim f ≥ k+1"), pb);
            }
        }
        Ok(e)
    }

    pub fn extension(&self, low: &DdrSpace, eta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.extension_matrix(low)? * eta)
    }
}
