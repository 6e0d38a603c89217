//! Discrete de Rham spaces of `k`-forms of degree `r` on a polytopal mesh.
//!
//! A discrete form carries on every `d`-cell `f` (`k ≤ d ≤ n`) a component in
//! the trimmed space of `(d−k)`-forms on `f`, expressed in the orthonormal
//! basis of [`LocalSpaces::trimmed_space`]. Local discrete exterior
//! derivatives and potentials are built once, by increasing cell dimension,
//! as dense matrices acting on the degrees of freedom of the closure of `f`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exterior::parity;
use crate::linalg::{solve_spd, solve_square, vcat};
use crate::mesh::{CellId, PolytopalMesh};
use crate::poly::{derivative_matrix, full_dim, star_inv_matrix, star_matrix, FormField};
use crate::quadrature::MAX_DEGREE;
use crate::sparse::{mat_vec, TripletBuilder};
use crate::spaces::{embed_rows, LocalSpaces, SubspaceBasis};

/// Largest supported polynomial degree.
pub const MAX_DEGREE_R: usize = 5;

/// Quadrature degree used to interpolate non-polynomial fields.
pub fn default_quad_degree(r: usize) -> usize {
    (2 * r + 10).min(MAX_DEGREE)
}

/// A linear map from the degrees of freedom `cols` (global, ascending) to a
/// local polynomial coefficient vector.
#[derive(Clone, Debug)]
pub struct LocalOp {
    pub cols: Vec<usize>,
    pub mat: DMatrix<f64>,
}

impl LocalOp {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let g = DVector::from_iterator(self.cols.len(), self.cols.iter().map(|&c| x[c]));
        &self.mat * g
    }

    /// Columns of `self` scattered into the positions of `cols ⊇ self.cols`.
    pub fn widen(&self, cols: &[usize]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.mat.nrows(), cols.len());
        add_columns(&mut out, cols, &self.mat, &self.cols, 1.0);
        out
    }
}

/// `dst[:, pos(c)] += s · src[:, j]` for `c = src_cols[j]`.
fn add_columns(dst: &mut DMatrix<f64>, dst_cols: &[usize], src: &DMatrix<f64>, src_cols: &[usize], s: f64) {
    for (j, c) in src_cols.iter().enumerate() {
        let p = dst_cols.binary_search(c).expect("subcell degrees of freedom are in the closure");
        let mut col = dst.column_mut(p);
        col.axpy(s, &src.column(j), 1.0);
    }
}

/// Stabilization of the discrete L² product.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stabilization {
    /// `Σ h_f^{n−d′} ‖tr_{f′} P_f ω − P_{f′} ω‖²` over subcells `f′`.
    #[default]
    TraceJump,
    /// `Σ h_f^{n−d′} ‖π^−(⋆ tr_{f′} P_f ω) − ω_{f′}‖²`, comparing components.
    ComponentDifference,
}

/// Offsets of the per-cell components of a DDR space.
#[derive(Clone, Debug)]
pub struct Layout {
    pub k: usize,
    pub r: usize,
    /// `offsets[d][i]` for `d ≥ k`; empty below `k`.
    offsets: Vec<Vec<usize>>,
    sizes: Vec<Vec<usize>>,
    total: usize,
}

impl Layout {
    pub fn new(spaces: &LocalSpaces, k: usize, r: usize) -> Result<Self> {
        let mesh = spaces.mesh();
        let n = mesh.ambient_dim();
        if k > n {
            return Err(Error::InvalidArgument(format!("form degree {k} exceeds the dimension {n}")));
        }
        let mut offsets = vec![Vec::new(); n + 1];
        let mut sizes = vec![Vec::new(); n + 1];
        let mut total = 0;
        for d in k..=n {
            for f in mesh.cell_ids(d) {
                let m = spaces.trimmed_space(f, r, d - k)?.dim();
                offsets[d].push(total);
                sizes[d].push(m);
                total += m;
            }
        }
        Ok(Self { k, r, offsets, sizes, total })
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn range(&self, f: CellId) -> std::ops::Range<usize> {
        if f.dim < self.k {
            return 0..0;
        }
        let o = self.offsets[f.dim][f.index];
        o..o + self.sizes[f.dim][f.index]
    }

    /// Degrees of freedom of the closure of `f`, ascending.
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

    /// Number of degrees of freedom attached to cells of dimension `d`.
    pub fn dofs_in_dim(&self, d: usize) -> usize {
        self.sizes.get(d).map_or(0, |s| s.iter().sum())
    }
}

/// The space `X^k_{r,h}` with its local operators.
pub struct DdrSpace {
    spaces: Arc<LocalSpaces>,
    layout: Layout,
    quad_degree: usize,
    potentials: Vec<Vec<LocalOp>>,
    derivatives: Vec<Vec<Option<LocalOp>>>,
    improved: Vec<Vec<LocalOp>>,
}

impl std::fmt::Debug for DdrSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DdrSpace").field("k", &self.layout.k).field("r", &self.layout.r).field("dim", &self.layout.total).finish()
    }
}

impl DdrSpace {
    pub fn new(spaces: Arc<LocalSpaces>, k: usize, r: usize) -> Result<Self> {
        if r > MAX_DEGREE_R {
            return Err(Error::InvalidArgument(format!("polynomial degree {r} exceeds the supported maximum {MAX_DEGREE_R}")));
        }
        let layout = Layout::new(&spaces, k, r)?;
        let n = spaces.mesh().ambient_dim();
        let mut s = Self {
            spaces,
            layout,
            quad_degree: default_quad_degree(r),
            potentials: vec![Vec::new(); n + 1],
            derivatives: vec![Vec::new(); n + 1],
            improved: vec![Vec::new(); n + 1],
        };
        for d in k..=n {
            let ids: Vec<CellId> = s.mesh().cell_ids(d).collect();
            let ops: Vec<(Option<LocalOp>, LocalOp)> = ids.par_iter().map(|&f| s.build_cell(f)).collect::<Result<_>>()?;
            for (dd, p) in ops {
                s.derivatives[d].push(dd);
                s.potentials[d].push(p);
            }
            if k == 0 {
                let imp: Vec<LocalOp> = ids.par_iter().map(|&f| s.build_improved(f)).collect::<Result<_>>()?;
                s.improved[d] = imp;
            }
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

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn mesh(&self) -> &PolytopalMesh {
        self.spaces.mesh()
    }

    pub fn spaces(&self) -> &Arc<LocalSpaces> {
        &self.spaces
    }

    pub fn quad_degree(&self) -> usize {
        self.quad_degree
    }

    /// Orthonormal basis of the component attached to `f`.
    pub fn component_basis(&self, f: CellId) -> Result<Arc<SubspaceBasis>> {
        self.spaces.trimmed_space(f, self.r(), f.dim - self.k())
    }

    pub fn component<'a>(&self, w: &'a DVector<f64>, f: CellId) -> nalgebra::DVectorView<'a, f64> {
        let rg = self.layout.range(f);
        w.rows(rg.start, rg.len())
    }

    /// Discrete potential on `f` (values in `Full(r, k)` of `f`).
    pub fn potential(&self, f: CellId) -> &LocalOp {
        &self.potentials[f.dim][f.index]
    }

    /// Local discrete exterior derivative on `f`, `dim f ≥ k+1` (values in
    /// `Full(r, k+1)` of `f`).
    pub fn local_derivative(&self, f: CellId) -> Option<&LocalOp> {
        self.derivatives.get(f.dim)?.get(f.index)?.as_ref()
    }

    /// Potential of degree `r+1` for `k = 0` (values in `Full(r+1, 0)`).
    pub fn improved_potential(&self, f: CellId) -> Option<&LocalOp> {
        self.improved.get(f.dim)?.get(f.index)
    }

    fn facets(&self, f: CellId) -> impl Iterator<Item = (CellId, f64)> + '_ {
        self.mesh().cell(f).boundary.iter().map(move |&(g, e)| (CellId::new(f.dim - 1, g), e as f64))
    }

    fn build_cell(&self, f: CellId) -> Result<(Option<LocalOp>, LocalOp)> {
        let (k, r, d) = (self.k(), self.r(), f.dim);
        let sp = &self.spaces;
        let cols = self.layout.closure(self.mesh(), f);
        let own: Vec<usize> = self.layout.range(f).collect();
        let b = self.component_basis(f)?;
        // ⋆⁻¹ω_f in Full(r, k)
        let star_inv_b = star_inv_matrix(d, r, d - k) * &b.columns;
        if d == k {
            return Ok((None, LocalOp { cols, mat: star_inv_b }));
        }
        let h = self.mesh().cell(f).scale();
        let sign = parity(k + 1);

        // derivative, tested with μ = ⋆β for β in the monomial basis of Full(r, k+1)
        let s = star_matrix(d, r, k + 1);
        let g = sp.gram(f, r, r, k + 1)?;
        let mut rhs = DMatrix::zeros(g.nrows(), cols.len());
        let dm = derivative_matrix(d, r, d - k - 1) / h;
        let w1 = sp.wedge(f, k, r, r.saturating_sub(1))?;
        let t1 = (&dm * &s).transpose() * w1.transpose() * &star_inv_b * sign;
        add_columns(&mut rhs, &cols, &t1, &own, 1.0);
        for (fp, eps) in self.facets(f) {
            let tr = sp.trace_matrix(f, fp, r, d - k - 1)?;
            let wg = sp.wedge(fp, k, r, r)?;
            let pg = self.potential(fp);
            let blk = (&*tr * &s).transpose() * wg.transpose() * &pg.mat;
            add_columns(&mut rhs, &cols, &blk, &pg.cols, eps);
        }
        let dmat = solve_spd(f, "discrete exterior derivative", &g, &rhs)?;

        // potential, tested with (dμ, ν) over the Koszul pair
        let kmu = sp.koszul_space(f, r + 1, d - k - 1)?;
        let knu = sp.koszul_space(f, r, d - k)?;
        let wk = sp.wedge(f, k, r, r)?;
        let dmu = derivative_matrix(d, r + 1, d - k - 1) * &kmu.columns / h;
        let a = vcat(&[&(dmu.transpose() * wk.transpose() * sign), &(knu.columns.transpose() * wk.transpose())]);
        let mut rmu = kmu.columns.transpose() * sp.wedge(f, k + 1, r, r + 1)?.transpose() * &dmat;
        for (fp, eps) in self.facets(f) {
            let tr = sp.trace_matrix(f, fp, r + 1, d - k - 1)?;
            let wg = sp.wedge(fp, k, r, r + 1)?;
            let pg = self.potential(fp);
            let blk = (&*tr * &kmu.columns).transpose() * wg.transpose() * &pg.mat;
            add_columns(&mut rmu, &cols, &blk, &pg.cols, -eps);
        }
        let mut rnu = DMatrix::zeros(knu.dim(), cols.len());
        add_columns(&mut rnu, &cols, &(knu.columns.transpose() * wk.transpose() * &star_inv_b), &own, 1.0);
        let pmat = solve_square(f, "discrete potential", &a, &vcat(&[&rmu, &rnu]))?;
        Ok((Some(LocalOp { cols: cols.clone(), mat: dmat }), LocalOp { cols, mat: pmat }))
    }

    fn build_improved(&self, f: CellId) -> Result<LocalOp> {
        let (r, d) = (self.r(), f.dim);
        let sp = &self.spaces;
        if d == 0 {
            let b = self.component_basis(f)?;
            return Ok(LocalOp { cols: self.layout.range(f).collect(), mat: b.columns.clone() });
        }
        let cols = self.layout.closure(self.mesh(), f);
        let h = self.mesh().cell(f).scale();
        let kmu = sp.koszul_space(f, r + 2, d - 1)?;
        let dmu = derivative_matrix(d, r + 2, d - 1) * &kmu.columns / h;
        let a = -dmu.transpose() * sp.wedge(f, 0, r + 1, r + 1)?.transpose();
        let dop = self.local_derivative(f).expect("d ≥ 1");
        let mut rhs = DMatrix::zeros(kmu.dim(), cols.len());
        add_columns(&mut rhs, &cols, &(kmu.columns.transpose() * sp.wedge(f, 1, r, r + 2)?.transpose() * &dop.mat), &dop.cols, 1.0);
        for (fp, eps) in self.facets(f) {
            let tr = sp.trace_matrix(f, fp, r + 2, d - 1)?;
            let wg = sp.wedge(fp, 0, r + 1, r + 2)?;
            let pg = &self.improved[d - 1][fp.index];
            let blk = (&*tr * &kmu.columns).transpose() * wg.transpose() * &pg.mat;
            add_columns(&mut rhs, &cols, &blk, &pg.cols, -eps);
        }
        Ok(LocalOp { cols, mat: solve_square(f, "improved potential", &a, &rhs)? })
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
        Ok(())
    }

    fn interpolate_cell(&self, field: &FormField, f: CellId) -> Result<DVector<f64>> {
        let b = self.component_basis(f)?;
        self.spaces.l2_project_field(&b, field, true, self.quad_degree)
    }

    /// Interpolate of `field`: trimmed projections of `⋆ tr_f ω` on every cell.
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

    /// Sparse matrix of the global discrete exterior derivative `X^k → X^{k+1}`.
    pub fn global_d(&self) -> Result<CsrMatrix<f64>> {
        let (k, r) = (self.k(), self.r());
        let n = self.mesh().ambient_dim();
        if k >= n {
            return Ok(CsrMatrix::zeros(0, self.dim()));
        }
        let target = Layout::new(&self.spaces, k + 1, r)?;
        let blocks: Vec<(CellId, DMatrix<f64>)> = (k + 1..=n)
            .flat_map(|d| self.mesh().cell_ids(d))
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&f| {
                let bt = self.spaces.trimmed_space(f, r, f.dim - k - 1)?;
                let proj = self.spaces.projector(&bt, r)?;
                let dop = self.local_derivative(f).expect("dim f ≥ k+1");
                Ok((f, proj * star_matrix(f.dim, r, k + 1) * &dop.mat))
            })
            .collect::<Result<_>>()?;
        let mut tb = TripletBuilder::new(target.len(), self.dim());
        for (f, blk) in blocks {
            let rows: Vec<usize> = target.range(f).collect();
            tb.add_block(&rows, &self.local_derivative(f).unwrap().cols, &blk);
        }
        Ok(tb.build())
    }

    /// Local matrix of `(·,·)_{k,f}` on an `n`-cell, over [`Layout::closure`].
    pub fn local_product(&self, f: CellId, stab: Stabilization) -> Result<LocalOp> {
        let consistent = self.local_consistent_product(f)?;
        let s = self.local_stabilization(f, stab)?;
        Ok(LocalOp { mat: consistent.mat + s.mat, cols: s.cols })
    }

    fn local_consistent_product(&self, f: CellId) -> Result<LocalOp> {
        let p = self.potential(f);
        let g = self.spaces.gram(f, self.r(), self.r(), self.k())?;
        Ok(LocalOp { cols: p.cols.clone(), mat: p.mat.transpose() * g * &p.mat })
    }

    /// Local stabilization matrix on an `n`-cell.
    pub fn local_stabilization(&self, f: CellId, stab: Stabilization) -> Result<LocalOp> {
        let (cols, terms) = self.stabilization_terms(f, stab)?;
        let mut m = DMatrix::zeros(cols.len(), cols.len());
        for (jump, gram, weight) in terms {
            m += jump.transpose() * gram * jump * weight;
        }
        Ok(LocalOp { cols, mat: m })
    }

    /// Jump operators over the closure of `f`, with the Gram matrix and
    /// weight of each subcell term.
    fn stabilization_terms(&self, f: CellId, stab: Stabilization) -> Result<(Vec<usize>, Vec<(DMatrix<f64>, DMatrix<f64>, f64)>)> {
        let (k, r, n) = (self.k(), self.r(), self.mesh().ambient_dim());
        assert_eq!(f.dim, n, "the L² product is assembled on top-dimensional cells");
        let p = self.potential(f);
        let cols = p.cols.clone();
        let hf = self.mesh().cell(f).diameter;
        let mut terms = Vec::new();
        for dp in k..n {
            let weight = hf.powi((n - dp) as i32);
            for &gi in self.mesh().subcells(f, dp)? {
                let g = CellId::new(dp, gi);
                let tr = self.spaces.trace_matrix(f, g, r, k)?;
                let jump_poly = &*tr * &p.mat;
                let (jump, gram) = match stab {
                    Stabilization::TraceJump => {
                        let pg = self.potential(g);
                        let mut j = jump_poly;
                        add_columns(&mut j, &cols, &pg.mat, &pg.cols, -1.0);
                        (j, self.spaces.gram(g, r, r, k)?)
                    }
                    Stabilization::ComponentDifference => {
                        let bg = self.component_basis(g)?;
                        let mut j = self.spaces.projector(&bg, r)? * star_matrix(dp, r, k) * jump_poly;
                        let own: Vec<usize> = self.layout.range(g).collect();
                        add_columns(&mut j, &cols, &DMatrix::identity(own.len(), own.len()), &own, -1.0);
                        (j, bg.mass.clone())
                    }
                };
                terms.push((jump, gram, weight));
            }
        }
        Ok((cols, terms))
    }

    /// Sparse Gram matrix of the discrete L² product.
    pub fn mass_matrix(&self, stab: Stabilization) -> Result<CsrMatrix<f64>> {
        self.assemble_top(|f| self.local_product(f, stab))
    }

    /// Sparse matrix of the stabilization form alone.
    pub fn stabilization_matrix(&self, stab: Stabilization) -> Result<CsrMatrix<f64>> {
        self.assemble_top(|f| self.local_stabilization(f, stab))
    }

    fn assemble_top(&self, local: impl Fn(CellId) -> Result<LocalOp> + Sync) -> Result<CsrMatrix<f64>> {
        let n = self.mesh().ambient_dim();
        let ids: Vec<CellId> = self.mesh().cell_ids(n).collect();
        let blocks: Vec<LocalOp> = ids.par_iter().map(|&f| local(f)).collect::<Result<_>>()?;
        let mut tb = TripletBuilder::new(self.dim(), self.dim());
        for b in blocks {
            tb.add_block(&b.cols, &b.cols, &b.mat);
        }
        Ok(tb.build())
    }

    pub fn l2_product(&self, w: &DVector<f64>, m: &DVector<f64>, stab: Stabilization) -> Result<f64> {
        let n = self.mesh().ambient_dim();
        let mut total = 0.0;
        for f in self.mesh().cell_ids(n) {
            let op = self.local_product(f, stab)?;
            let (a, b) = (gather(w, &op.cols), gather(m, &op.cols));
            total += a.dot(&(&op.mat * b));
        }
        Ok(total)
    }

    /// `s(ω, ω)^{1/2}` summed over the top cells.
    pub fn stab_seminorm(&self, w: &DVector<f64>, stab: Stabilization) -> Result<f64> {
        let n = self.mesh().ambient_dim();
        let mut total = 0.0;
        // jumps are formed before squaring, so interpolants of polynomials
        // give roundoff rather than its square root
        for f in self.mesh().cell_ids(n) {
            let (cols, terms) = self.stabilization_terms(f, stab)?;
            let a = gather(w, &cols);
            for (jump, gram, weight) in terms {
                let j = jump * &a;
                total += weight * j.dot(&(gram * &j));
            }
        }
        Ok(total.max(0.0).sqrt())
    }

    /// `|∫_f d_f ω ∧ dα − (−1)^{k+1} ∫_{∂f} d_{∂f} ω ∧ tr α|` for `α` given by
    /// its coefficients in `Trimmed(r+1, dim f − k − 2)` of `f`.
    pub fn subcell_link_residual(&self, f: CellId, w: &DVector<f64>, alpha: &DVector<f64>) -> Result<f64> {
        let (k, r, d) = (self.k(), self.r(), f.dim);
        if d < k + 2 {
            return Err(Error::InvalidArgument(format!("{f} needs dimension at least {}", k + 2)));
        }
        let sp = &self.spaces;
        let ba = sp.trimmed_space(f, r + 1, d - k - 2)?;
        let a = &ba.columns * alpha;
        let da = derivative_matrix(d, r + 1, d - k - 2) * &a / self.mesh().cell(f).scale();
        let df = self.local_derivative(f).unwrap().apply(w);
        let lhs = df.dot(&(sp.wedge(f, k + 1, r, r)? * da));
        let mut rhs = 0.0;
        for (g, eps) in self.facets(f) {
            let tra = &*sp.trace_matrix(f, g, r + 1, d - k - 2)? * &a;
            let dg = self.local_derivative(g).unwrap().apply(w);
            rhs += eps * dg.dot(&(sp.wedge(g, k + 1, r, r + 1)? * tra));
        }
        Ok((lhs - parity(k + 1) * rhs).abs())
    }

    /// Largest `|π⁰ ω_f|` over `k`-cells, in the orthonormal constant basis.
    pub fn flatness_defect(&self, w: &DVector<f64>) -> Result<f64> {
        let k = self.k();
        let mut worst = 0.0f64;
        for f in self.mesh().cell_ids(k) {
            let b0 = self.spaces.full_space(f, 0, 0)?;
            let proj = self.spaces.projector(&b0, self.r())?;
            let c = &proj * (&self.component_basis(f)?.columns * self.component(w, f));
            worst = worst.max(c.amax());
        }
        Ok(worst)
    }

    /// Applies the global derivative without assembling it.
    pub fn apply_d(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(mat_vec(&self.global_d()?, w))
    }

    /// A preimage in the flat subspace of `X^{k−1}` of a flat kernel element
    /// `η` of `X^k`; the free Koszul part of every component is zero. For
    /// `k = 0` the only flat kernel element is zero and `lower` is `None`.
    pub fn flat_preimage(&self, lower: Option<&DdrSpace>, eta: &DVector<f64>) -> Result<DVector<f64>> {
        const TOL: f64 = 1e-9;
        let (k, r) = (self.k(), self.r());
        // roundoff floor for inputs that cancel to nearly zero
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
        let sp = &self.spaces;
        let n = self.mesh().ambient_dim();
        let mut w = DVector::zeros(lower.dim());
        for d in k..=n {
            let ids: Vec<CellId> = self.mesh().cell_ids(d).collect();
            let parts: Vec<DVector<f64>> = ids
                .par_iter()
                .map(|&f| {
                    let h = self.mesh().cell(f).scale();
                    let kk = sp.koszul_space(f, r, d - k)?;
                    if kk.dim() == 0 {
                        return Ok(DVector::zeros(lower.layout.range(f).len()));
                    }
                    let dk = derivative_matrix(d, r, d - k) * &kk.columns / h;
                    let rlow = r.saturating_sub(1);
                    let sinv = star_inv_matrix(d, rlow, d - k + 1);
                    let a = dk.transpose() * sp.wedge(f, k - 1, rlow, rlow)?.transpose() * sinv * &dk * parity(k);
                    let mut rhs = kk.columns.transpose() * sp.wedge(f, k, r, r)?.transpose() * self.potential(f).apply(eta);
                    for (g, eps) in self.facets(f) {
                        let tr = sp.trace_matrix(f, g, r, d - k)?;
                        let pg = lower.potential(g).apply(&w);
                        rhs -= (&*tr * &kk.columns).transpose() * sp.wedge(g, k - 1, r, r)?.transpose() * pg * eps;
                    }
                    let alpha = solve_square(f, "flat preimage", &a, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()))?;
                    let bf = lower.component_basis(f)?;
                    let wf = embed_rows(&(&dk * alpha), full_dim(d, r as i64, d - k + 1));
                    Ok((sp.projector(&bf, r)? * wf).column(0).into_owned())
                })
                .collect::<Result<_>>()?;
            for (f, p) in ids.iter().zip(parts) {
                w.rows_mut(lower.layout.range(*f).start, p.len()).copy_from(&p);
            }
        }
        let resid = (lower.apply_d(&w)? - eta).amax();
        if resid > TOL * scale {
            return Err(Error::PreimageResidual(resid / scale));
        }
        Ok(w)
    }

    /// Sparse matrix of the reduction `X^k_r → X^k_0` (averages on `k`-cells).
    pub fn reduction(&self, low: &DdrSpace) -> Result<CsrMatrix<f64>> {
        self.check_low(low)?;
        let k = self.k();
        let mut tb = TripletBuilder::new(low.dim(), self.dim());
        for f in self.mesh().cell_ids(k) {
            let b0 = low.component_basis(f)?;
            let blk = self.spaces.projector(&b0, self.r())? * &self.component_basis(f)?.columns;
            tb.add_block(&low.layout.range(f).collect::<Vec<_>>(), &self.layout.range(f).collect::<Vec<_>>(), &blk);
        }
        Ok(tb.build())
    }

    fn check_low(&self, low: &DdrSpace) -> Result<()> {
        if low.k() != self.k() || low.r() != 0 || !Arc::ptr_eq(&low.spaces, &self.spaces) {
            return Err(Error::InvalidArgument("reduction and extension need the degree-0 space of the same k on the same mesh".into()));
        }
        Ok(())
    }

    /// Extension `X^k_0 → X^k_r`, defined by increasing cell dimension.
    pub fn extension(&self, low: &DdrSpace, eta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_low(low)?;
        let (k, r) = (self.k(), self.r());
        let sp = &self.spaces;
        let n = self.mesh().ambient_dim();
        let mut e = DVector::zeros(self.dim());
        for d in k..=n {
            let ids: Vec<CellId> = self.mesh().cell_ids(d).collect();
            let parts: Vec<DVector<f64>> = ids
                .par_iter()
                .map(|&f| {
                    let b = self.component_basis(f)?;
                    if d == k {
                        let b0 = low.component_basis(f)?;
                        let v = &b0.columns * low.component(eta, f);
                        return Ok(sp.projector(&b, 0)? * v);
                    }
                    let h = self.mesh().cell(f).scale();
                    let sign = parity(k + 1);
                    let kmu = sp.koszul_space(f, r, d - k - 1)?;
                    let knu = sp.koszul_space(f, r, d - k)?;
                    let sinv_b = star_inv_matrix(d, r, d - k) * &b.columns;
                    let dmu = derivative_matrix(d, r, d - k - 1) * &kmu.columns / h;
                    let rl = r.saturating_sub(1);
                    let a = vcat(&[
                        &(dmu.transpose() * sp.wedge(f, k, r, rl)?.transpose() * &sinv_b * sign),
                        &(knu.columns.transpose() * sp.wedge(f, k, r, r)?.transpose() * &sinv_b),
                    ]);
                    let d0 = low.local_derivative(f).unwrap().apply(eta);
                    let mut rmu = kmu.columns.transpose() * sp.wedge(f, k + 1, 0, r)?.transpose() * d0;
                    for (g, eps) in self.facets(f) {
                        let tr = sp.trace_matrix(f, g, r, d - k - 1)?;
                        let pg = self.potential(g).apply(&e);
                        rmu -= (&*tr * &kmu.columns).transpose() * sp.wedge(g, k, r, r)?.transpose() * pg * eps;
                    }
                    let p0 = low.potential(f).apply(eta);
                    let rnu = knu.columns.transpose() * sp.wedge(f, k, 0, r)?.transpose() * p0;
                    let rhs = DVector::from_iterator(rmu.len() + rnu.len(), rmu.iter().chain(rnu.iter()).copied());
                    let x = solve_square(f, "extension", &a, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()))?;
                    Ok(x.column(0).into_owned())
                })
                .collect::<Result<_>>()?;
            for (f, p) in ids.iter().zip(parts) {
                e.rows_mut(self.layout.range(*f).start, p.len()).copy_from(&p);
            }
        }
        Ok(e)
    }

    /// Dense matrix of [`Self::extension`].
    pub fn extension_matrix(&self, low: &DdrSpace) -> Result<DMatrix<f64>> {
        let cols: Vec<DVector<f64>> = (0..low.dim())
            .into_par_iter()
            .map(|j| {
                let mut u = DVector::zeros(low.dim());
                u[j] = 1.0;
                self.extension(low, &u)
            })
            .collect::<Result<_>>()?;
        Ok(if cols.is_empty() { DMatrix::zeros(self.dim(), 0) } else { DMatrix::from_columns(&cols) })
    }

    /// Potentials on the `n`-cells, in cell order.
    pub fn top_potentials(&self, w: &DVector<f64>) -> Vec<DVector<f64>> {
        let n = self.mesh().ambient_dim();
        self.mesh().cell_ids(n).map(|f| self.potential(f).apply(w)).collect()
    }
}

pub(crate) fn gather(x: &DVector<f64>, cols: &[usize]) -> DVector<f64> {
    DVector::from_iterator(cols.len(), cols.iter().map(|&c| x[c]))
}
