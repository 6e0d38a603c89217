//! Mixed Hodge Laplacian on the discrete de Rham spaces: assembly, sparse
//! solve, error measures against manufactured solutions, the adjoint error
//! functional and convergence studies.
//!
//! Unknowns are `(σ_h, u_h) ∈ X^{k−1} × X^k`. The block system is written in
//! symmetric form
//!
//! ```text
//! [ −M_{k−1}       D_{k−1}ᵀ M_k        ] [σ]   [ b_σ           ]
//! [  M_k D_{k−1}   D_kᵀ M_{k+1} D_k    ] [u] = [ (I g, v) + b_u ]
//! ```
//!
//! where `b_σ`, `b_u` are boundary terms that vanish when the exact solution
//! satisfies the natural boundary conditions `tr ⋆u = 0`, `tr ⋆du = 0`. For
//! `k = 0` the constant kernel is removed by one bordered mean constraint.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohomology::betti_numbers;
use crate::ddr::{DdrSpace, Stabilization};
use crate::error::{Error, Result};
use crate::exterior::{hodge_star, hodge_star_inv, pullback_alt, Orientation};
use crate::fields::{global_polynomial, TrigForm};
use crate::linalg::singular_values;
use crate::mesh::{CellId, PolytopalMesh};
use crate::poly::{FormField, PolyForm};
use crate::quadrature::{field_load, for_each_point};
use crate::sparse::{mat_vec, SparseLu, TripletBuilder};
use crate::spaces::LocalSpaces;

/// Largest accepted relative residual of the saddle-point solve.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-8;

/// How the source enters the right-hand side.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTerm {
    /// `(I g, v)_{k,h}`.
    #[default]
    Interpolated,
    /// `Σ_T ∫_T g ∧ ⋆P_T v`, which only needs `g ∈ L²`.
    Potential,
}

/// Exact solution `u` (with `du`, `δu` and `dδu`) and source `g = (dδ + δd)u`.
#[derive(Clone, Debug)]
pub struct Manufactured {
    pub label: String,
    pub u: FormField,
    pub g: FormField,
}

impl Manufactured {
    /// Trigonometric `k`-form of wave number `m`, satisfying the natural
    /// boundary conditions on the unit box.
    pub fn trigonometric(n: usize, k: usize, m: usize) -> Self {
        let t = TrigForm::new(n, k, m);
        let mut u = t.field();
        let g = u.combine(t.laplace_eigenvalue(), &u, 0.0);
        if let Some(du) = u.derivative() {
            // δdu = g − dδu
            let delta_du = match u.codifferential().and_then(FormField::derivative) {
                Some(dd) => g.combine(1.0, dd, -1.0),
                None => g.clone(),
            };
            let du = du.clone().with_codifferential(delta_du);
            u = u.with_derivative(du);
        }
        Self { label: format!("trig(n={n}, k={k}, m={m})"), u, g }
    }

    /// Polynomial solution given in ambient coordinates. Such solutions
    /// usually violate the natural boundary conditions, which the boundary
    /// terms of the right-hand side account for.
    pub fn polynomial(p: &PolyForm) -> Result<Self> {
        if p.cell.is_some() || p.scale() != 1.0 {
            return Err(Error::InvalidArgument("manufactured polynomials use ambient coordinates".into()));
        }
        let (n, k) = (p.dim(), p.form_degree());
        let mut g = PolyForm::zero(n, k, 0, 1.0);
        if k > 0 {
            g = g.add(&p.codifferential().exterior_derivative())?;
        }
        if k < n {
            g = g.add(&p.exterior_derivative().codifferential())?;
        }
        let mut u = global_polynomial(p);
        if k < n {
            u = u.with_derivative(global_polynomial(&p.exterior_derivative()));
        }
        Ok(Self { label: format!("poly(n={n}, k={k}, deg={})", p.poly_degree()), u, g: global_polynomial(&g) })
    }

    fn sigma(&self) -> Option<&FormField> {
        self.u.codifferential()
    }
}

/// Assembled saddle-point system.
#[derive(Clone, Debug)]
pub struct SaddleSystem {
    pub matrix: CsrMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Sizes of the `σ` and `u` blocks; a bordered row follows when `k = 0`.
    pub blocks: (usize, usize),
}

impl SaddleSystem {
    /// Largest entry of `A − Aᵀ`.
    pub fn asymmetry(&self) -> f64 {
        let t = self.matrix.transpose();
        let diff = &self.matrix - &t;
        crate::sparse::max_abs(&diff)
    }
}

/// Discrete solution pair.
#[derive(Clone, Debug)]
pub struct HodgeSolution {
    pub sigma: DVector<f64>,
    pub u: DVector<f64>,
    /// `‖Ax − b‖/‖b‖`.
    pub residual: f64,
    pub solve_time_s: f64,
}

/// The eight error measures of one run. `*_l2` are potential errors
/// `‖ω − P_h ω_h‖`; `*_stab` are stabilization seminorms of the discrete
/// fields.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub sigma_l2: f64,
    pub d_sigma_l2: f64,
    pub u_l2: f64,
    pub du_l2: f64,
    pub sigma_stab: f64,
    pub d_sigma_stab: f64,
    pub u_stab: f64,
    pub du_stab: f64,
}

impl ErrorRecord {
    pub const COLUMNS: [&'static str; 8] =
        ["sigma_l2", "d_sigma_l2", "u_l2", "du_l2", "sigma_stab", "d_sigma_stab", "u_stab", "du_stab"];

    pub fn values(&self) -> [f64; 8] {
        [
            self.sigma_l2,
            self.d_sigma_l2,
            self.u_l2,
            self.du_l2,
            self.sigma_stab,
            self.d_sigma_stab,
            self.u_stab,
            self.du_stab,
        ]
    }

    pub fn total(&self) -> f64 {
        self.values().iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values().iter().fold(0.0, |a, &b| a.max(b))
    }
}

/// Discrete spaces and operators of the mixed problem in degree `k`.
#[derive(Debug)]
pub struct HodgeScheme {
    lower: Option<DdrSpace>,
    space: DdrSpace,
    upper: Option<DdrSpace>,
    stab: Stabilization,
    m_lower: Option<CsrMatrix<f64>>,
    m: CsrMatrix<f64>,
    m_upper: Option<CsrMatrix<f64>>,
    d_lower: Option<CsrMatrix<f64>>,
    d: Option<CsrMatrix<f64>>,
}

impl HodgeScheme {
    /// Refuses meshes whose Betti numbers differ from `(1, 0, …, 0)`.
    pub fn new(spaces: Arc<LocalSpaces>, k: usize, r: usize, stab: Stabilization, quad_degree: Option<usize>) -> Result<Self> {
        let n = spaces.mesh().ambient_dim();
        if k > n {
            return Err(Error::InvalidArgument(format!("form degree {k} exceeds dimension {n}")));
        }
        let betti = betti_numbers(spaces.mesh());
        if betti.iter().enumerate().any(|(i, &b)| b != usize::from(i == 0)) {
            return Err(Error::NontrivialTopology(betti));
        }
        let make = |deg: usize| -> Result<DdrSpace> {
            let s = DdrSpace::new(spaces.clone(), deg, r)?;
            match quad_degree {
                Some(q) => s.with_quad_degree(q),
                None => Ok(s),
            }
        };
        let lower = if k > 0 { Some(make(k - 1)?) } else { None };
        let space = make(k)?;
        let upper = if k < n { Some(make(k + 1)?) } else { None };
        let m_lower = lower.as_ref().map(|s| s.mass_matrix(stab)).transpose()?;
        let m = space.mass_matrix(stab)?;
        let m_upper = upper.as_ref().map(|s| s.mass_matrix(stab)).transpose()?;
        let d_lower = lower.as_ref().map(|s| s.global_d()).transpose()?;
        let d = upper.as_ref().map(|_| space.global_d()).transpose()?;
        Ok(Self { lower, space, upper, stab, m_lower, m, m_upper, d_lower, d })
    }

    pub fn k(&self) -> usize {
        self.space.k()
    }

    pub fn r(&self) -> usize {
        self.space.r()
    }

    pub fn mesh(&self) -> &PolytopalMesh {
        self.space.mesh()
    }

    pub fn space(&self) -> &DdrSpace {
        &self.space
    }

    /// Number of unknowns `dim X^{k−1} + dim X^k`.
    pub fn dofs(&self) -> usize {
        self.lower.as_ref().map_or(0, DdrSpace::dim) + self.space.dim()
    }

    /// `D_kᵀ M_{k+1} D_k` (zero when `k = n`).
    fn stiffness(&self) -> CsrMatrix<f64> {
        match (&self.d, &self.m_upper) {
            (Some(d), Some(mu)) => &(&d.transpose() * mu) * d,
            _ => CsrMatrix::zeros(self.space.dim(), self.space.dim()),
        }
    }

    /// Block matrix without the bordered row.
    fn operator(&self) -> CsrMatrix<f64> {
        let ns = self.lower.as_ref().map_or(0, DdrSpace::dim);
        let nu = self.space.dim();
        let mut tb = TripletBuilder::new(ns + nu, ns + nu);
        let mut put = |m: &CsrMatrix<f64>, r0: usize, c0: usize, s: f64| {
            for (i, j, &v) in m.triplet_iter() {
                tb.push(r0 + i, c0 + j, s * v);
            }
        };
        if let (Some(ml), Some(dl)) = (&self.m_lower, &self.d_lower) {
            let b = &self.m * dl;
            put(ml, 0, 0, -1.0);
            put(&b, ns, 0, 1.0);
            put(&b.transpose(), 0, ns, 1.0);
        }
        put(&self.stiffness(), ns, ns, 1.0);
        tb.build()
    }

    /// Assembles the system for a manufactured solution.
    pub fn assemble(&self, sol: &Manufactured, source: SourceTerm) -> Result<SaddleSystem> {
        let (k, n) = (self.k(), self.mesh().ambient_dim());
        if sol.u.dim() != n || sol.u.degree() != k {
            return Err(Error::DimensionMismatch(format!("expected a {k}-form on R^{n}, got a {}-form on R^{}", sol.u.degree(), sol.u.dim())));
        }
        let ns = self.lower.as_ref().map_or(0, DdrSpace::dim);
        let nu = self.space.dim();
        let mut rhs_u = match source {
            SourceTerm::Interpolated => mat_vec(&self.m, &self.space.interpolate(&sol.g)?),
            SourceTerm::Potential => self.potential_load(&sol.g)?,
        };
        if let Some(du) = sol.u.derivative().filter(|_| k < n) {
            rhs_u += boundary_load(&self.space, du)?;
        }
        let rhs_s = match &self.lower {
            Some(lower) => boundary_load(lower, &sol.u)?,
            None => DVector::zeros(0),
        };
        let a = self.operator();
        let bordered = k == 0;
        let size = ns + nu + usize::from(bordered);
        let mut rhs = DVector::zeros(size);
        rhs.rows_mut(0, ns).copy_from(&rhs_s);
        rhs.rows_mut(ns, nu).copy_from(&rhs_u);
        let matrix = if bordered {
            let ones = self.space.interpolate(&FormField::new(n, 0, |_| vec![1.0]))?;
            let c = mat_vec(&self.m, &ones);
            rhs[size - 1] = integrate(self.mesh(), &sol.u, self.space.quad_degree())?;
            let mut tb = TripletBuilder::new(size, size);
            for (i, j, &v) in a.triplet_iter() {
                tb.push(i, j, v);
            }
            for (i, &v) in c.iter().enumerate() {
                tb.push(i, size - 1, v);
                tb.push(size - 1, i, v);
            }
            tb.build()
        } else {
            a
        };
        Ok(SaddleSystem { matrix, rhs, blocks: (ns, nu) })
    }

    fn potential_load(&self, g: &FormField) -> Result<DVector<f64>> {
        let (k, r, n) = (self.k(), self.r(), self.mesh().ambient_dim());
        let ids: Vec<CellId> = self.mesh().cell_ids(n).collect();
        let q = self.space.quad_degree();
        let parts: Vec<(Vec<usize>, DVector<f64>)> = ids
            .par_iter()
            .map(|&t| {
                let cell = self.mesh().cell(t);
                let load = field_load(cell, r, k, q, |x| pullback_alt(&g.eval(x.as_slice()), &cell.frame))?;
                let p = self.space.potential(t);
                Ok((p.cols.clone(), p.mat.tr_mul(&load)))
            })
            .collect::<Result<_>>()?;
        let mut out = DVector::zeros(self.space.dim());
        for (cols, v) in parts {
            for (&c, x) in cols.iter().zip(v.iter()) {
                out[c] += x;
            }
        }
        Ok(out)
    }

    pub fn solve(&self, sys: &SaddleSystem) -> Result<HodgeSolution> {
        let start = Instant::now();
        let lu = SparseLu::new(&sys.matrix)?;
        let x = lu.solve(&sys.rhs);
        let residual = lu.relative_residual(&x, &sys.rhs);
        let solve_time_s = start.elapsed().as_secs_f64();
        if !residual.is_finite() || residual > SOLVE_RESIDUAL_TOL {
            return Err(Error::Solver(format!("saddle-point residual {residual:.3e}")));
        }
        let (ns, nu) = sys.blocks;
        Ok(HodgeSolution {
            sigma: x.rows(0, ns).into_owned(),
            u: x.rows(ns, nu).into_owned(),
            residual,
            solve_time_s,
        })
    }

    /// Interpolate `(I δu, I u)` of the exact solution.
    pub fn interpolate(&self, sol: &Manufactured) -> Result<(DVector<f64>, DVector<f64>)> {
        let sigma = match (&self.lower, sol.sigma()) {
            (Some(lower), Some(s)) => lower.interpolate(s)?,
            (Some(_), None) => return Err(Error::InvalidArgument("manufactured solution lacks its codifferential".into())),
            (None, _) => DVector::zeros(0),
        };
        Ok((sigma, self.space.interpolate(&sol.u)?))
    }

    pub fn errors(&self, sol: &Manufactured, x: &HodgeSolution) -> Result<ErrorRecord> {
        let mut e = ErrorRecord::default();
        let stab = self.stab;
        if let (Some(lower), Some(dl)) = (&self.lower, &self.d_lower) {
            let sigma = sol.sigma().ok_or_else(|| Error::InvalidArgument("manufactured solution lacks its codifferential".into()))?;
            let d_sigma = sigma.derivative().ok_or_else(|| Error::InvalidArgument("codifferential lacks its derivative".into()))?;
            let ds = mat_vec(dl, &x.sigma);
            e.sigma_l2 = potential_error(lower, &x.sigma, sigma)?;
            e.sigma_stab = lower.stab_seminorm(&x.sigma, stab)?;
            e.d_sigma_l2 = potential_error(&self.space, &ds, d_sigma)?;
            e.d_sigma_stab = self.space.stab_seminorm(&ds, stab)?;
        }
        e.u_l2 = potential_error(&self.space, &x.u, &sol.u)?;
        e.u_stab = self.space.stab_seminorm(&x.u, stab)?;
        if let (Some(upper), Some(d)) = (&self.upper, &self.d) {
            let du = sol.u.derivative().ok_or_else(|| Error::InvalidArgument("manufactured solution lacks its derivative".into()))?;
            let dx = mat_vec(d, &x.u);
            e.du_l2 = potential_error(upper, &dx, du)?;
            e.du_stab = upper.stab_seminorm(&dx, stab)?;
        }
        Ok(e)
    }

    /// Consistency error `E_h(τ, v) = (I g, v) + b − A_h((I δu, I u), (τ, v))`,
    /// returned as the vector of its values on the unit vectors.
    pub fn consistency_error(&self, sol: &Manufactured) -> Result<DVector<f64>> {
        let sys = self.assemble(sol, SourceTerm::Interpolated)?;
        let (s, u) = self.interpolate(sol)?;
        let (ns, nu) = sys.blocks;
        let mut x = DVector::zeros(ns + nu);
        x.rows_mut(0, ns).copy_from(&s);
        x.rows_mut(ns, nu).copy_from(&u);
        let mut out = sys.rhs.rows(0, ns + nu) - mat_vec(&self.operator(), &x);
        // the σ rows were negated to symmetrize the block system
        out.rows_mut(0, ns).neg_mut();
        Ok(out)
    }

    /// `Ẽ^{k−1}(u; ·)` and `Ẽ^k(du; ·)` as vectors over `X^{k−1}` and `X^k`.
    pub fn adjoint_errors(&self, sol: &Manufactured) -> Result<(DVector<f64>, DVector<f64>)> {
        let lower = match (&self.lower, &self.d_lower, &self.m_lower) {
            (Some(l), Some(d), Some(m)) => adjoint_error_vector(l, m, &self.space, &self.m, d, &sol.u)?,
            _ => DVector::zeros(0),
        };
        let upper = match (&self.upper, &self.d, &self.m_upper, sol.u.derivative()) {
            (Some(up), Some(d), Some(m), Some(du)) => adjoint_error_vector(&self.space, &self.m, up, m, d, du)?,
            _ => DVector::zeros(self.space.dim()),
        };
        Ok((lower, upper))
    }

    /// Smallest generalized singular value of the block operator in the
    /// graph norm `‖·‖_h² + ‖d·‖_h²` on both factors, skipping the `b_k`
    /// values that belong to harmonic modes.
    pub fn inf_sup(&self) -> Result<f64> {
        let a = crate::sparse::to_dense(&self.operator());
        let mut norm = DMatrix::zeros(a.nrows(), a.ncols());
        let ns = self.lower.as_ref().map_or(0, DdrSpace::dim);
        if let (Some(ml), Some(dl)) = (&self.m_lower, &self.d_lower) {
            let h = crate::sparse::to_dense(ml) + crate::sparse::to_dense(&(&(&dl.transpose() * &self.m) * dl));
            norm.view_mut((0, 0), (ns, ns)).copy_from(&h);
        }
        let h = crate::sparse::to_dense(&self.m) + crate::sparse::to_dense(&self.stiffness());
        let nu = self.space.dim();
        norm.view_mut((ns, ns), (nu, nu)).copy_from(&h);
        let chol = norm
            .cholesky()
            .ok_or_else(|| Error::Solver("graph-norm Gram matrix is not positive definite".into()))?;
        let l = chol.l();
        let linv_a = l.solve_lower_triangular(&a).ok_or_else(|| Error::Solver("singular Cholesky factor".into()))?;
        let c = l
            .solve_lower_triangular(&linv_a.transpose())
            .ok_or_else(|| Error::Solver("singular Cholesky factor".into()))?;
        let mut s = singular_values(&c)?;
        s.sort_by(f64::total_cmp);
        let harmonic = usize::from(self.k() == 0);
        s.get(harmonic).copied().ok_or_else(|| Error::Solver("empty operator".into()))
    }
}

/// `b` with `Ẽ^ℓ(ω; μ) = bᵀμ`, where `Ẽ^ℓ(ω; μ) = (I δω, μ)_ℓ − (I ω, dμ)_{ℓ+1}`.
fn adjoint_error_vector(
    space: &DdrSpace,
    m: &CsrMatrix<f64>,
    upper: &DdrSpace,
    m_upper: &CsrMatrix<f64>,
    d: &CsrMatrix<f64>,
    omega: &FormField,
) -> Result<DVector<f64>> {
    let delta = omega.codifferential().ok_or_else(|| Error::InvalidArgument("field lacks its codifferential".into()))?;
    let a = mat_vec(m, &space.interpolate(delta)?);
    let b = mat_vec(&d.transpose(), &mat_vec(m_upper, &upper.interpolate(omega)?));
    Ok(a - b)
}

/// Adjoint error functional `Ẽ^ℓ(ω; μ)` for the `(ℓ+1)`-form `ω` and
/// `μ ∈ X^ℓ`, plus its dual norm `sup_μ Ẽ/|||μ|||` with
/// `|||μ|||² = ‖μ‖² + ‖dμ‖²`.
#[derive(Debug)]
pub struct AdjointFunctional {
    b: DVector<f64>,
    graph: CsrMatrix<f64>,
}

impl AdjointFunctional {
    pub fn new(space: &DdrSpace, upper: &DdrSpace, omega: &FormField, stab: Stabilization) -> Result<Self> {
        if upper.k() != space.k() + 1 || upper.r() != space.r() || omega.degree() != upper.k() {
            return Err(Error::DimensionMismatch("adjoint functional needs consecutive spaces and an (ℓ+1)-form".into()));
        }
        let m = space.mass_matrix(stab)?;
        let mu = upper.mass_matrix(stab)?;
        let d = space.global_d()?;
        let b = adjoint_error_vector(space, &m, upper, &mu, &d, omega)?;
        let graph = &m + &(&(&d.transpose() * &mu) * &d);
        Ok(Self { b, graph })
    }

    pub fn value(&self, mu: &DVector<f64>) -> f64 {
        self.b.dot(mu)
    }

    /// `sqrt(bᵀ H⁻¹ b)` with `H` the graph-norm Gram matrix.
    pub fn dual_norm(&self) -> Result<f64> {
        let lu = SparseLu::new(&self.graph)?;
        Ok(self.b.dot(&lu.solve(&self.b)).max(0.0).sqrt())
    }
}

/// `∫_{∂Ω} P_F w ∧ tr ⋆ω` as a vector over `w ∈ X^ℓ`, for an
/// `(ℓ+1)`-form `ω`.
fn boundary_load(space: &DdrSpace, omega: &FormField) -> Result<DVector<f64>> {
    let mesh = space.mesh();
    let n = mesh.ambient_dim();
    let (ell, r) = (space.k(), space.r());
    let mut out = DVector::zeros(space.dim());
    if ell >= n {
        return Ok(out);
    }
    let q = space.quad_degree();
    let facets = mesh.boundary_facets();
    let parts: Vec<(Vec<usize>, DVector<f64>)> = facets
        .par_iter()
        .map(|&fi| {
            let f = CellId::new(n - 1, fi);
            let t = CellId::new(n, mesh.cofaces(f)[0]);
            let eps = f64::from(mesh.relative_orientation(t, f)?);
            let cell = mesh.cell(f);
            // a ∧ β = ⟨a, ⋆⁻¹β⟩ vol on the facet
            let load = field_load(cell, r, ell, q, |x| {
                let beta = pullback_alt(&hodge_star(&omega.eval(x.as_slice()), Orientation::Positive), &cell.frame);
                hodge_star_inv(&beta, Orientation::Positive)
            })?;
            let p = space.potential(f);
            Ok((p.cols.clone(), p.mat.tr_mul(&load) * eps))
        })
        .collect::<Result<_>>()?;
    for (cols, v) in parts {
        for (&c, x) in cols.iter().zip(v.iter()) {
            out[c] += x;
        }
    }
    Ok(out)
}

/// `(Σ_T ‖ω − P_T w‖²_T)^{1/2}` over top-dimensional cells.
pub fn potential_error(space: &DdrSpace, w: &DVector<f64>, omega: &FormField) -> Result<f64> {
    let mesh = space.mesh();
    let (k, r, n) = (space.k(), space.r(), mesh.ambient_dim());
    let q = space.quad_degree();
    let ids: Vec<CellId> = mesh.cell_ids(n).collect();
    let sq: Vec<f64> = ids
        .par_iter()
        .map(|&t| {
            let cell = mesh.cell(t);
            let p = PolyForm::from_coeffs(n, k, r, cell.scale(), space.potential(t).apply(w));
            let mut acc = 0.0;
            for_each_point(cell, q, |x, wt| {
                let exact = pullback_alt(&omega.eval(x.as_slice()), &cell.frame);
                let approx = p.evaluate(cell.local_coords(x).as_slice());
                acc += wt * exact.coeffs().iter().zip(approx.coeffs()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            })?;
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(sq.iter().sum::<f64>().sqrt())
}

/// `∫_Ω ω` for a scalar field.
fn integrate(mesh: &PolytopalMesh, omega: &FormField, q: usize) -> Result<f64> {
    let n = mesh.ambient_dim();
    let mut total = 0.0;
    for t in mesh.cell_ids(n) {
        for_each_point(mesh.cell(t), q, |x, w| total += w * omega.eval_coeffs(x.as_slice())[0])?;
    }
    Ok(total)
}

/// Least-squares slope of `log e` against `log h`. `None` when fewer than
/// two points are usable (non-positive entries are skipped).
pub fn fitted_slope(h: &[f64], e: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = h.iter().zip(e).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let (num, den) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    (den > 0.0).then(|| num / den)
}

/// One refinement level of a convergence study.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub mesh_h: f64,
    pub dofs: usize,
    pub errors: ErrorRecord,
    pub total: f64,
    pub residual: f64,
    #[serde(skip)]
    pub solve_time_s: f64,
}

/// Convergence summary with fitted slopes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub solution: String,
    pub source: SourceTerm,
    pub runs: Vec<RunRecord>,
    /// Slope per error column (absent when the column is identically zero).
    pub slopes: Vec<(String, Option<f64>)>,
    pub total_slope: Option<f64>,
    pub target_slope: f64,
}

impl ConvergenceReport {
    pub fn slope_of(&self, column: &str) -> Option<f64> {
        self.slopes.iter().find(|(c, _)| c == column).and_then(|(_, s)| *s)
    }
}

/// Options shared by the runs of a study.
#[derive(Clone, Copy, Debug)]
pub struct StudyOptions {
    pub k: usize,
    pub r: usize,
    pub stab: Stabilization,
    pub source: SourceTerm,
    pub quad_degree: Option<usize>,
}

/// Solves on each mesh and fits slopes of every error column against `h`.
pub fn convergence_study(meshes: &[Arc<PolytopalMesh>], sol: &Manufactured, opts: StudyOptions) -> Result<ConvergenceReport> {
    let n = meshes.first().ok_or_else(|| Error::InvalidArgument("no meshes".into()))?.ambient_dim();
    let mut runs = Vec::new();
    for mesh in meshes {
        let spaces = Arc::new(LocalSpaces::new(mesh.clone()));
        let scheme = HodgeScheme::new(spaces, opts.k, opts.r, opts.stab, opts.quad_degree)?;
        let sys = scheme.assemble(sol, opts.source)?;
        let x = scheme.solve(&sys)?;
        let errors = scheme.errors(sol, &x)?;
        log::info!("h = {:.4}, dofs = {}, total error = {:.3e}", mesh.h(), scheme.dofs(), errors.total());
        runs.push(RunRecord {
            mesh_h: mesh.h(),
            dofs: scheme.dofs(),
            total: errors.total(),
            errors,
            residual: x.residual,
            solve_time_s: x.solve_time_s,
        });
    }
    let h: Vec<f64> = runs.iter().map(|r| r.mesh_h).collect();
    let slopes = ErrorRecord::COLUMNS
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let e: Vec<f64> = runs.iter().map(|r| r.errors.values()[i]).collect();
            (c.to_string(), fitted_slope(&h, &e))
        })
        .collect();
    let total: Vec<f64> = runs.iter().map(|r| r.total).collect();
    Ok(ConvergenceReport {
        n,
        k: opts.k,
        r: opts.r,
        solution: sol.label.clone(),
        source: opts.source,
        total_slope: fitted_slope(&h, &total),
        slopes,
        runs,
        target_slope: opts.r as f64 + 1.0,
    })
}

/// Stabilization seminorm of the interpolant, `s(Iω, Iω)^{1/2}`, on each
/// mesh.
pub fn interpolant_stabilization(meshes: &[Arc<PolytopalMesh>], omega: &FormField, r: usize, stab: Stabilization) -> Result<Vec<(f64, f64)>> {
    meshes
        .iter()
        .map(|m| {
            let sp = DdrSpace::new(Arc::new(LocalSpaces::new(m.clone())), omega.degree(), r)?;
            Ok((m.h(), sp.stab_seminorm(&sp.interpolate(omega)?, stab)?))
        })
        .collect()
}

/// Dual norm of the adjoint error functional for the `(ℓ+1)`-form `ω` on
/// each mesh.
pub fn adjoint_decay(meshes: &[Arc<PolytopalMesh>], omega: &FormField, r: usize, stab: Stabilization) -> Result<Vec<(f64, f64)>> {
    let ell = omega.degree().checked_sub(1).ok_or_else(|| Error::InvalidArgument("ω must have degree ≥ 1".into()))?;
    meshes
        .iter()
        .map(|m| {
            let sp = Arc::new(LocalSpaces::new(m.clone()));
            let lo = DdrSpace::new(sp.clone(), ell, r)?;
            let hi = DdrSpace::new(sp, ell + 1, r)?;
            Ok((m.h(), AdjointFunctional::new(&lo, &hi, omega, stab)?.dual_norm()?))
        })
        .collect()
}
