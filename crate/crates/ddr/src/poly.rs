//! Polynomial differential forms in local scaled coordinates.
//!
//! On a cell `f` of dimension `d` with orthonormal frame `Q`, center `x_f`
//! and diameter `h_f`, polynomials are written in `y = Qᵀ(x − x_f)/h_f`, and
//! forms are expanded on the frame covectors `e^i` (the physical, unit-length
//! dual basis of the frame). A form with polynomial degree at most `R` is a
//! dense vector indexed by `m · C(d, ℓ) + a`, where `m` is the graded rank of
//! the monomial and `a` the lexicographic rank of the index subset. Since
//! monomials are sorted by total degree, degree-`R` coefficient vectors are
//! prefixes of degree-`R + 1` ones.
//!
//! With this representation `d` carries a factor `1/h_f` and the Koszul
//! operator (contraction with `x − x_f = h_f Σ y_i q_i`) a factor `h_f`.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exterior::{self, alt_basis, binomial, parity, shuffle_sign, AltForm, AltIndex};
use crate::mesh::CellId;

/// Largest polynomial degree supported by the monomial tables.
pub const MAX_POLY_DEGREE: usize = 24;
/// Largest cell dimension supported by the monomial tables.
pub const MAX_CELL_DIM: usize = 3;

type Exp = [u8; MAX_CELL_DIM];

/// Monomials in `d` variables up to [`MAX_POLY_DEGREE`], in graded order.
pub struct MonomialTable {
    dim: usize,
    exps: Vec<Exp>,
    lookup: Vec<u32>,
}

const STRIDE: usize = MAX_POLY_DEGREE + 1;

impl MonomialTable {
    fn build(dim: usize) -> Self {
        let mut exps = Vec::new();
        for deg in 0..=MAX_POLY_DEGREE {
            let mut cur = [0u8; MAX_CELL_DIM];
            fill(dim, 0, deg, &mut cur, &mut exps);
        }
        let mut lookup = vec![u32::MAX; STRIDE.pow(dim as u32)];
        for (i, e) in exps.iter().enumerate() {
            lookup[Self::key(dim, e)] = i as u32;
        }
        return Self { dim, exps, lookup };

        fn fill(dim: usize, pos: usize, left: usize, cur: &mut Exp, out: &mut Vec<Exp>) {
            if dim == 0 {
                if left == 0 {
                    out.push(*cur);
                }
                return;
            }
            if pos == dim - 1 {
                cur[pos] = left as u8;
                out.push(*cur);
                cur[pos] = 0;
                return;
            }
            for p in (0..=left).rev() {
                cur[pos] = p as u8;
                fill(dim, pos + 1, left - p, cur, out);
            }
            cur[pos] = 0;
        }
    }

    fn key(dim: usize, e: &Exp) -> usize {
        e[..dim].iter().fold(0, |k, &p| k * STRIDE + p as usize)
    }

    pub fn exponent(&self, i: usize) -> &[u8] {
        &self.exps[i][..self.dim]
    }

    pub fn degree_of(&self, i: usize) -> usize {
        self.exps[i].iter().map(|&p| p as usize).sum()
    }

    /// Rank of an exponent vector.
    pub fn index(&self, e: &[u8]) -> usize {
        let mut full = [0u8; MAX_CELL_DIM];
        full[..self.dim].copy_from_slice(e);
        self.lookup[Self::key(self.dim, &full)] as usize
    }

    /// Rank of the product of two monomials.
    #[inline]
    pub fn product(&self, i: usize, j: usize) -> usize {
        let (a, b) = (&self.exps[i], &self.exps[j]);
        let mut k = 0;
        for t in 0..self.dim {
            k = k * STRIDE + (a[t] + b[t]) as usize;
        }
        self.lookup[k] as usize
    }

    pub fn eval(&self, i: usize, y: &[f64]) -> f64 {
        let mut v = 1.0;
        for t in 0..self.dim {
            v *= y[t].powi(self.exps[i][t] as i32);
        }
        v
    }
}

/// Shared monomial table for cells of dimension `d ≤ 3`.
pub fn monomials(d: usize) -> &'static MonomialTable {
    static TABLES: [OnceLock<MonomialTable>; MAX_CELL_DIM + 1] =
        [OnceLock::new(), OnceLock::new(), OnceLock::new(), OnceLock::new()];
    assert!(d <= MAX_CELL_DIM, "cell dimension {d} exceeds {MAX_CELL_DIM}");
    TABLES[d].get_or_init(|| MonomialTable::build(d))
}

/// `dim P_r(R^d)`, zero for `r < 0`.
pub fn n_monomials(d: usize, r: i64) -> usize {
    if r < 0 {
        0
    } else {
        binomial(r as usize + d, d)
    }
}

/// `dim P_rΛ^ℓ(R^d)`, zero for `r < 0` or `ℓ > d`.
pub fn full_dim(d: usize, r: i64, ell: usize) -> usize {
    n_monomials(d, r) * binomial(d, ell)
}

/// A polynomial `ℓ`-form on a `d`-cell.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyForm {
    pub cell: Option<CellId>,
    dim: usize,
    form_degree: usize,
    poly_degree: usize,
    scale: f64,
    coeffs: DVector<f64>,
}

impl PolyForm {
    pub fn zero(dim: usize, form_degree: usize, poly_degree: usize, scale: f64) -> Self {
        Self::from_coeffs(dim, form_degree, poly_degree, scale, DVector::zeros(full_dim(dim, poly_degree as i64, form_degree)))
    }

    pub fn from_coeffs(dim: usize, form_degree: usize, poly_degree: usize, scale: f64, coeffs: DVector<f64>) -> Self {
        assert!(dim <= MAX_CELL_DIM && poly_degree <= MAX_POLY_DEGREE);
        assert_eq!(coeffs.len(), full_dim(dim, poly_degree as i64, form_degree));
        Self { cell: None, dim, form_degree, poly_degree, scale, coeffs }
    }

    /// The monomial form `y^α e^σ`.
    pub fn monomial(dim: usize, exps: &[u8], sigma: AltIndex, scale: f64) -> Self {
        let deg = exps.iter().map(|&p| p as usize).sum::<usize>();
        let mut p = Self::zero(dim, sigma.len(), deg, scale);
        let nalt = binomial(dim, sigma.len());
        p.coeffs[monomials(dim).index(exps) * nalt + sigma.rank()] = 1.0;
        p
    }

    pub fn with_cell(mut self, cell: CellId) -> Self {
        self.cell = Some(cell);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn form_degree(&self) -> usize {
        self.form_degree
    }
    pub fn poly_degree(&self) -> usize {
        self.poly_degree
    }
    pub fn scale(&self) -> f64 {
        self.scale
    }
    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    /// Reinterprets the form with a larger degree bound.
    pub fn raise_degree(&self, r: usize) -> Self {
        assert!(r >= self.poly_degree);
        let mut c = DVector::zeros(full_dim(self.dim, r as i64, self.form_degree));
        c.rows_mut(0, self.coeffs.len()).copy_from(&self.coeffs);
        Self { coeffs: c, poly_degree: r, ..self.clone() }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { coeffs: &self.coeffs * s, ..self.clone() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim || self.form_degree != other.form_degree {
            return Err(Error::DimensionMismatch("adding forms of different type".into()));
        }
        let r = self.poly_degree.max(other.poly_degree);
        let a = self.raise_degree(r);
        let b = other.raise_degree(r);
        Ok(Self { coeffs: a.coeffs + b.coeffs, ..a })
    }

    fn apply(&self, op: &DMatrix<f64>, form_degree: usize, poly_degree: usize) -> Self {
        Self {
            cell: self.cell,
            dim: self.dim,
            form_degree,
            poly_degree,
            scale: self.scale,
            coeffs: op * &self.coeffs,
        }
    }

    pub fn exterior_derivative(&self) -> Self {
        let (d, l, r) = (self.dim, self.form_degree, self.poly_degree);
        if l >= d {
            return Self::zero(d, l + 1, r.saturating_sub(1), self.scale);
        }
        let op = derivative_matrix(d, r, l) / self.scale;
        self.apply(&op, l + 1, r.saturating_sub(1))
    }

    pub fn koszul(&self) -> Self {
        let (d, l, r) = (self.dim, self.form_degree, self.poly_degree);
        if l == 0 {
            return Self::zero(d, 0, r + 1, self.scale);
        }
        let op = koszul_matrix(d, r, l) * self.scale;
        self.apply(&op, l - 1, r + 1)
    }

    pub fn hodge_star(&self) -> Self {
        let op = star_matrix(self.dim, self.poly_degree, self.form_degree);
        self.apply(&op, self.dim - self.form_degree, self.poly_degree)
    }

    pub fn hodge_star_inv(&self) -> Self {
        let l = self.form_degree;
        self.hodge_star().scaled(parity(l * (self.dim - l)))
    }

    /// `δ = (−1)^ℓ ⋆⁻¹ d ⋆` on `ℓ`-forms: the formal L²-adjoint of `d`.
    pub fn codifferential(&self) -> Self {
        if self.form_degree == 0 {
            return Self::zero(self.dim, 0, self.poly_degree.saturating_sub(1), self.scale);
        }
        self.hodge_star().exterior_derivative().hodge_star_inv().scaled(parity(self.form_degree))
    }

    pub fn wedge(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch("wedge of forms on different cells".into()));
        }
        let d = self.dim;
        let (la, lb) = (self.form_degree, other.form_degree);
        let deg = self.poly_degree + other.poly_degree;
        if la + lb > d {
            return Ok(Self::zero(d, d, deg, self.scale));
        }
        let tab = monomials(d);
        let (ba, bb, bc) = (alt_basis(d, la), alt_basis(d, lb), binomial(d, la + lb));
        let mut out = Self::zero(d, la + lb, deg, self.scale);
        for (i, ci) in self.coeffs.iter().enumerate().filter(|t| *t.1 != 0.0) {
            let (mi, si) = (i / ba.len(), &ba[i % ba.len()]);
            for (j, cj) in other.coeffs.iter().enumerate().filter(|t| *t.1 != 0.0) {
                let (mj, sj) = (j / bb.len(), &bb[j % bb.len()]);
                if let Some(s) = shuffle_sign(si.mask(), sj.mask()) {
                    let m = tab.product(mi, mj);
                    let t = AltIndex::from_mask(d, si.mask() | sj.mask()).rank();
                    out.coeffs[m * bc + t] += s * ci * cj;
                }
            }
        }
        Ok(out)
    }

    /// Value at a local point `y`, as an alternating form on the frame.
    pub fn evaluate(&self, y: &[f64]) -> AltForm {
        let d = self.dim;
        let nalt = binomial(d, self.form_degree);
        let tab = monomials(d);
        let mut c = vec![0.0; nalt];
        for (i, v) in self.coeffs.iter().enumerate() {
            if *v != 0.0 {
                c[i % nalt] += v * tab.eval(i / nalt, y);
            }
        }
        AltForm::from_coeffs(d, self.form_degree, c).unwrap()
    }

    /// Pullback along the affine chart map `y = b + A y′`, with frame
    /// transition matrix `jac` (columns: target covectors in source frame).
    pub fn pullback_affine(&self, a: &DMatrix<f64>, b: &DVector<f64>, jac: &DMatrix<f64>, target_scale: f64) -> Self {
        let op = pullback_matrix(self.poly_degree, self.form_degree, a, b, jac);
        Self {
            cell: None,
            dim: a.ncols(),
            form_degree: self.form_degree,
            poly_degree: self.poly_degree,
            scale: target_scale,
            coeffs: op * &self.coeffs,
        }
    }
}

/// Matrix of `d` on `Full(r, ℓ)` (unit scale) with values in `Full(r−1, ℓ+1)`
/// (`Full(0, ℓ+1)` when `r = 0`).
pub fn derivative_matrix(d: usize, r: usize, ell: usize) -> DMatrix<f64> {
    let rout = r.saturating_sub(1);
    let nout = full_dim(d, rout as i64, ell + 1);
    let nin = full_dim(d, r as i64, ell);
    let mut m = DMatrix::zeros(nout, nin);
    if ell >= d {
        return m;
    }
    let tab = monomials(d);
    let (bin, bout) = (alt_basis(d, ell), binomial(d, ell + 1));
    for col in 0..nin {
        let (mi, sigma) = (col / bin.len(), bin[col % bin.len()]);
        let e = tab.exponent(mi);
        for i in 0..d {
            if e[i] == 0 {
                continue;
            }
            let Some(s) = shuffle_sign(1 << i, sigma.mask()) else { continue };
            let mut e2 = e.to_vec();
            e2[i] -= 1;
            let row = tab.index(&e2) * bout + AltIndex::from_mask(d, sigma.mask() | 1 << i).rank();
            m[(row, col)] += s * e[i] as f64;
        }
    }
    m
}

/// Matrix of the Koszul operator on `Full(r, ℓ)` (unit scale), `ℓ ≥ 1`, with
/// values in `Full(r+1, ℓ−1)`.
pub fn koszul_matrix(d: usize, r: usize, ell: usize) -> DMatrix<f64> {
    assert!(ell >= 1);
    let nin = full_dim(d, r as i64, ell);
    let nout = full_dim(d, r as i64 + 1, ell - 1);
    let mut m = DMatrix::zeros(nout, nin);
    let tab = monomials(d);
    let (bin, bout) = (alt_basis(d, ell), binomial(d, ell - 1));
    for col in 0..nin {
        let (mi, sigma) = (col / bin.len(), bin[col % bin.len()]);
        for (pos, s) in sigma.zero_based().enumerate() {
            let mut e = tab.exponent(mi).to_vec();
            e[s] += 1;
            let rest = AltIndex::from_mask(d, sigma.mask() & !(1 << s));
            let row = tab.index(&e) * bout + rest.rank();
            m[(row, col)] += parity(pos);
        }
    }
    m
}

/// Matrix of the Hodge star on `Full(r, ℓ)` for a positively oriented frame.
pub fn star_matrix(d: usize, r: usize, ell: usize) -> DMatrix<f64> {
    let n = n_monomials(d, r as i64);
    let bin = alt_basis(d, ell);
    let nout = binomial(d, d - ell);
    let mut m = DMatrix::zeros(n * nout, n * bin.len());
    for (a, sigma) in bin.iter().enumerate() {
        let comp = sigma.complement();
        let s = shuffle_sign(sigma.mask(), comp.mask()).unwrap();
        for mi in 0..n {
            m[(mi * nout + comp.rank(), mi * bin.len() + a)] = s;
        }
    }
    m
}

/// Matrix of the inverse Hodge star on `Full(r, ℓ)`.
pub fn star_inv_matrix(d: usize, r: usize, ell: usize) -> DMatrix<f64> {
    star_matrix(d, r, ell) * parity(ell * (d - ell))
}

/// Zero-padding embedding `Full(r1, ℓ) → Full(r2, ℓ)`, `r1 ≤ r2`.
pub fn embed_matrix(d: usize, r1: i64, r2: usize, ell: usize) -> DMatrix<f64> {
    let (n1, n2) = (full_dim(d, r1, ell), full_dim(d, r2 as i64, ell));
    assert!(n1 <= n2);
    DMatrix::from_fn(n2, n1, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// Substitution matrix for `y = b + A y′`: column `α` holds the coefficients
/// of `(b + A y′)^α` in the monomials of `y′`.
pub fn substitution_matrix(r: usize, a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let (d, dp) = (a.nrows(), a.ncols());
    let (src, dst) = (monomials(d), monomials(dp));
    let (nin, nout) = (n_monomials(d, r as i64), n_monomials(dp, r as i64));
    // linear factor i: b_i + Σ_j A_ij y′_j, as a sparse list (monomial, coeff)
    let unit = |j: usize| {
        let mut e = [0u8; MAX_CELL_DIM];
        e[j] = 1;
        dst.index(&e[..dp])
    };
    let linear: Vec<Vec<(usize, f64)>> = (0..d)
        .map(|i| {
            let mut l = vec![(0, b[i])];
            l.extend((0..dp).map(|j| (unit(j), a[(i, j)])));
            l
        })
        .collect();
    let mut s = DMatrix::zeros(nout, nin);
    s[(0, 0)] = 1.0;
    for col in 1..nin {
        let e = src.exponent(col);
        let i = e.iter().position(|&p| p > 0).unwrap();
        let mut e2 = e.to_vec();
        e2[i] -= 1;
        let prev = src.index(&e2);
        for row in 0..nout {
            let c = s[(row, prev)];
            if c == 0.0 {
                continue;
            }
            for &(m, v) in &linear[i] {
                if v != 0.0 {
                    let t = dst.product(row, m);
                    s[(t, col)] += c * v;
                }
            }
        }
    }
    s
}

/// Matrix of the pullback `Full(r, ℓ)` on a `d`-chart to `Full(r, ℓ)` on a
/// `d′`-chart, for `y = b + A y′` and covector transition `jac` (`d × d′`).
pub fn pullback_matrix(r: usize, ell: usize, a: &DMatrix<f64>, b: &DVector<f64>, jac: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, dp) = (a.nrows(), a.ncols());
    let s = substitution_matrix(r, a, b);
    let bin = alt_basis(d, ell);
    let bout = alt_basis(dp, ell);
    let minors: Vec<Vec<f64>> = bin
        .iter()
        .map(|sig| {
            let rows: Vec<usize> = sig.zero_based().collect();
            bout.iter()
                .map(|tau| exterior::minor(jac, &rows, &tau.zero_based().collect::<Vec<_>>()))
                .collect()
        })
        .collect();
    let (nin, nout) = (s.ncols(), s.nrows());
    let mut m = DMatrix::zeros(nout * bout.len(), nin * bin.len());
    for al in 0..nin {
        for be in 0..nout {
            let sv = s[(be, al)];
            if sv == 0.0 {
                continue;
            }
            for (si, mrow) in minors.iter().enumerate() {
                for (ti, &mv) in mrow.iter().enumerate() {
                    if mv != 0.0 {
                        m[(be * bout.len() + ti, al * bin.len() + si)] += sv * mv;
                    }
                }
            }
        }
    }
    m
}

/// Monomial-form basis of `P_rΛ^ℓ(R^d)` (empty for `r = −1` or `ℓ > d`).
pub fn poly_form_basis(d: usize, r: i64, ell: usize) -> Vec<PolyForm> {
    let n = full_dim(d, r, ell);
    (0..n)
        .map(|i| {
            let mut c = DVector::zeros(n);
            c[i] = 1.0;
            PolyForm::from_coeffs(d, ell, r as usize, 1.0, c)
        })
        .collect()
}

/// A form-valued function on ambient space, with optional exact derivative
/// and codifferential.
#[derive(Clone)]
pub struct FormField {
    dim: usize,
    degree: usize,
    value: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    derivative: Option<Arc<FormField>>,
    codifferential: Option<Arc<FormField>>,
}

impl std::fmt::Debug for FormField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FormField")
            .field("dim", &self.dim)
            .field("degree", &self.degree)
            .field("has_derivative", &self.derivative.is_some())
            .field("has_codifferential", &self.codifferential.is_some())
            .finish()
    }
}

impl FormField {
    /// `value` returns coefficients in `alt_basis(dim, degree)` order.
    pub fn new(dim: usize, degree: usize, value: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self { dim, degree, value: Arc::new(value), derivative: None, codifferential: None }
    }

    pub fn zero(dim: usize, degree: usize) -> Self {
        let n = binomial(dim, degree);
        let mut f = Self::new(dim, degree, move |_| vec![0.0; n]);
        if degree < dim {
            f.derivative = Some(Arc::new(Self::new(dim, degree + 1, move |_| vec![0.0; binomial(dim, degree + 1)])));
        }
        f
    }

    pub fn with_derivative(mut self, d: FormField) -> Self {
        assert_eq!((d.dim, d.degree), (self.dim, self.degree + 1));
        self.derivative = Some(Arc::new(d));
        self
    }

    pub fn with_codifferential(mut self, delta: FormField) -> Self {
        assert_eq!((delta.dim, delta.degree + 1), (self.dim, self.degree));
        self.codifferential = Some(Arc::new(delta));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn eval_coeffs(&self, x: &[f64]) -> Vec<f64> {
        (self.value)(x)
    }

    pub fn eval(&self, x: &[f64]) -> AltForm {
        AltForm::from_coeffs(self.dim, self.degree, (self.value)(x)).expect("field returned wrong size")
    }

    pub fn derivative(&self) -> Option<&FormField> {
        self.derivative.as_deref()
    }

    pub fn codifferential(&self) -> Option<&FormField> {
        self.codifferential.as_deref()
    }

    /// Linear combination `a·self + b·other`, keeping derivative and
    /// codifferential when both operands provide them.
    pub fn combine(&self, a: f64, other: &FormField, b: f64) -> FormField {
        assert_eq!((self.dim, self.degree), (other.dim, other.degree));
        let (f, g) = (self.value.clone(), other.value.clone());
        let mut out = FormField::new(self.dim, self.degree, move |x| {
            f(x).into_iter().zip(g(x)).map(|(u, v)| a * u + b * v).collect()
        });
        if let (Some(p), Some(q)) = (&self.derivative, &other.derivative) {
            out.derivative = Some(Arc::new(p.combine(a, q, b)));
        }
        if let (Some(p), Some(q)) = (&self.codifferential, &other.codifferential) {
            out.codifferential = Some(Arc::new(p.combine(a, q, b)));
        }
        out
    }

    /// Central finite-difference approximation of `dω` at `x`.
    pub fn finite_difference_derivative(&self, x: &[f64], step: f64) -> AltForm {
        let n = self.dim;
        let mut out = AltForm::zero(n, self.degree + 1);
        for i in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += step;
            xm[i] -= step;
            let di: Vec<f64> = (self.value)(&xp).iter().zip((self.value)(&xm)).map(|(p, m)| (p - m) / (2.0 * step)).collect();
            let di = AltForm::from_coeffs(n, self.degree, di).unwrap();
            out = out.add(&exterior::wedge(&AltForm::dx(n, i + 1), &di).unwrap()).unwrap();
        }
        out
    }
}
