//! Constant alternating forms on an oriented Euclidean space.
//!
//! A k-form on `R^n` is stored as a dense coefficient vector over the basis
//! `dx^{s1} ∧ … ∧ dx^{sk}`, with `s1 < … < sk` enumerated in lexicographic
//! order. Index subsets are kept internally as bitmasks, so `n` is limited
//! to 32.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Binomial coefficient `C(n, k)`, zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Parity sign `(-1)^m`.
#[inline]
pub fn parity(m: usize) -> f64 {
    if m.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// An increasing subset of `{1, …, dim}` labelling a basis covector product.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AltIndex {
    dim: u8,
    mask: u32,
}

impl AltIndex {
    /// Builds an index from 1-based entries, which must be strictly increasing.
    pub fn new(dim: usize, subset: &[usize]) -> Result<Self> {
        if dim > 32 {
            return Err(Error::InvalidArgument(format!("dimension {dim} exceeds 32")));
        }
        let mut mask = 0u32;
        let mut last = 0usize;
        for &s in subset {
            if s <= last || s > dim {
                return Err(Error::InvalidArgument(format!(
                    "subset {subset:?} is not strictly increasing within [1, {dim}]"
                )));
            }
            mask |= 1 << (s - 1);
            last = s;
        }
        Ok(Self { dim: dim as u8, mask })
    }

    pub(crate) fn from_mask(dim: usize, mask: u32) -> Self {
        debug_assert!(dim == 32 || mask >> dim == 0);
        Self { dim: dim as u8, mask }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    /// Entries as 1-based integers in increasing order.
    pub fn subset(&self) -> Vec<usize> {
        self.zero_based().map(|i| i + 1).collect()
    }

    pub(crate) fn zero_based(&self) -> impl Iterator<Item = usize> + '_ {
        let m = self.mask;
        (0..self.dim as usize).filter(move |i| m >> i & 1 == 1)
    }

    /// Complementary subset in `{1, …, dim}`.
    pub fn complement(&self) -> Self {
        let full = if self.dim == 32 { u32::MAX } else { (1u32 << self.dim) - 1 };
        Self { dim: self.dim, mask: full & !self.mask }
    }

    /// Position of this index in `alt_basis(dim, len)`.
    pub fn rank(&self) -> usize {
        let n = self.dim();
        let k = self.len();
        let mut r = 0;
        let mut prev = 0usize;
        for (i, s) in self.subset().into_iter().enumerate() {
            for j in prev + 1..s {
                r += binomial(n - j, k - i - 1);
            }
            prev = s;
        }
        r
    }
}

impl fmt::Debug for AltIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.subset())
    }
}

/// All increasing subsets of size `degree`, in lexicographic order.
pub fn alt_basis(dim: usize, degree: usize) -> Vec<AltIndex> {
    fn rec(dim: usize, start: usize, left: usize, mask: u32, out: &mut Vec<AltIndex>) {
        if left == 0 {
            out.push(AltIndex::from_mask(dim, mask));
            return;
        }
        for i in start..dim {
            if dim - i < left {
                break;
            }
            rec(dim, i + 1, left - 1, mask | 1 << i, out);
        }
    }
    let mut out = Vec::with_capacity(binomial(dim, degree));
    if degree <= dim {
        rec(dim, 0, degree, 0, &mut out);
    }
    out
}

/// Sign of the permutation sorting the concatenation `(a, b)`, or `None`
/// when the two subsets overlap.
#[inline]
pub fn shuffle_sign(a: u32, b: u32) -> Option<f64> {
    if a & b != 0 {
        return None;
    }
    let mut inversions = 0;
    let mut bb = b;
    while bb != 0 {
        let j = bb.trailing_zeros();
        inversions += (a >> j).count_ones() as usize;
        bb &= bb - 1;
    }
    Some(parity(inversions))
}

/// Orientation of a frame relative to the canonical one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    Positive,
    Negative,
}

impl Orientation {
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Positive => 1.0,
            Orientation::Negative => -1.0,
        }
    }
}

/// A constant alternating form.
#[derive(Clone, Debug, PartialEq)]
pub struct AltForm {
    dim: usize,
    degree: usize,
    coeffs: Vec<f64>,
}

impl AltForm {
    pub fn zero(dim: usize, degree: usize) -> Self {
        Self { dim, degree, coeffs: vec![0.0; binomial(dim, degree)] }
    }

    /// Coefficients listed in `alt_basis(dim, degree)` order.
    pub fn from_coeffs(dim: usize, degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != binomial(dim, degree) {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for a {degree}-form in dimension {dim}",
                coeffs.len()
            )));
        }
        Ok(Self { dim, degree, coeffs })
    }

    /// The basis form `dx^{s1} ∧ … ∧ dx^{sk}`.
    pub fn basis(index: AltIndex) -> Self {
        let mut f = Self::zero(index.dim(), index.len());
        f.coeffs[index.rank()] = 1.0;
        f
    }

    /// `dx^i` (1-based).
    pub fn dx(dim: usize, i: usize) -> Self {
        Self::basis(AltIndex::new(dim, &[i]).expect("valid index"))
    }

    pub fn volume(dim: usize) -> Self {
        Self { dim, degree: dim, coeffs: vec![1.0] }
    }

    pub fn scalar(dim: usize, value: f64) -> Self {
        Self { dim, degree: 0, coeffs: vec![value] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, index: AltIndex) -> f64 {
        debug_assert_eq!(index.len(), self.degree);
        self.coeffs[index.rank()]
    }

    pub fn terms(&self) -> impl Iterator<Item = (AltIndex, f64)> + '_ {
        alt_basis(self.dim, self.degree).into_iter().zip(self.coeffs.iter().copied())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| c * s).collect(), ..self.clone() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_space(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(Self { coeffs, ..self.clone() })
    }

    /// Euclidean inner product induced on `Alt^k`.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_same_space(other)?;
        Ok(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    fn check_same_space(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim || self.degree != other.degree {
            return Err(Error::DimensionMismatch(format!(
                "({}, {}) vs ({}, {})",
                self.dim, self.degree, other.dim, other.degree
            )));
        }
        Ok(())
    }

    /// Evaluates the form on `degree` vectors.
    pub fn evaluate(&self, vectors: &[Vec<f64>]) -> Result<f64> {
        if vectors.len() != self.degree || vectors.iter().any(|v| v.len() != self.dim) {
            return Err(Error::DimensionMismatch("evaluate: wrong number or size of vectors".into()));
        }
        let mut total = 0.0;
        for (idx, c) in self.terms() {
            if c == 0.0 {
                continue;
            }
            let rows: Vec<usize> = idx.zero_based().collect();
            let m = DMatrix::from_fn(self.degree, self.degree, |i, j| vectors[j][rows[i]]);
            total += c * m.determinant();
        }
        Ok(total)
    }
}

/// Exterior product.
pub fn wedge(a: &AltForm, b: &AltForm) -> Result<AltForm> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch(format!("wedge of forms in R^{} and R^{}", a.dim, b.dim)));
    }
    let mut out = AltForm::zero(a.dim, a.degree + b.degree);
    if a.degree + b.degree > a.dim {
        return Ok(out);
    }
    for (ia, ca) in a.terms().filter(|t| t.1 != 0.0) {
        for (ib, cb) in b.terms().filter(|t| t.1 != 0.0) {
            if let Some(s) = shuffle_sign(ia.mask, ib.mask) {
                let idx = AltIndex::from_mask(a.dim, ia.mask | ib.mask);
                out.coeffs[idx.rank()] += s * ca * cb;
            }
        }
    }
    Ok(out)
}

/// Hodge star: `⋆dx^σ = sign(σ, τ) dx^τ` with `τ` the complement of `σ`,
/// multiplied by the orientation sign.
pub fn hodge_star(a: &AltForm, o: Orientation) -> AltForm {
    let mut out = AltForm::zero(a.dim, a.dim - a.degree);
    for (idx, c) in a.terms() {
        let comp = idx.complement();
        let s = shuffle_sign(idx.mask, comp.mask).unwrap();
        out.coeffs[comp.rank()] = o.sign() * s * c;
    }
    out
}

/// Inverse of [`hodge_star`] for the same orientation.
pub fn hodge_star_inv(a: &AltForm, o: Orientation) -> AltForm {
    let m = a.degree;
    hodge_star(a, o).scale(parity(m * (a.dim - m)))
}

/// Interior product `(a ⌟ v)(v1, …) = a(v, v1, …)`.
pub fn contraction(a: &AltForm, v: &[f64]) -> Result<AltForm> {
    if a.degree == 0 {
        return Err(Error::InvalidArgument("contraction of a 0-form".into()));
    }
    if v.len() != a.dim {
        return Err(Error::DimensionMismatch(format!("vector of size {} in R^{}", v.len(), a.dim)));
    }
    let mut out = AltForm::zero(a.dim, a.degree - 1);
    for (idx, c) in a.terms().filter(|t| t.1 != 0.0) {
        for (pos, s) in idx.zero_based().enumerate() {
            let rest = AltIndex::from_mask(a.dim, idx.mask & !(1 << s));
            out.coeffs[rest.rank()] += parity(pos) * v[s] * c;
        }
    }
    Ok(out)
}

/// Pullback to the subspace spanned by an orthonormal frame (columns of
/// `frame`, in ambient coordinates). The result lives on `R^{frame.ncols()}`
/// with coordinates given by the frame.
pub fn trace_alt(a: &AltForm, frame: &DMatrix<f64>) -> Result<AltForm> {
    if frame.nrows() != a.dim {
        return Err(Error::DimensionMismatch(format!(
            "frame vectors of size {} in R^{}",
            frame.nrows(),
            a.dim
        )));
    }
    let gram = frame.transpose() * frame;
    let dev = (gram - DMatrix::identity(frame.ncols(), frame.ncols())).amax();
    if dev > 1e-12 {
        return Err(Error::NonOrthonormalFrame(dev));
    }
    Ok(pullback_alt(a, frame))
}

/// Pullback along an arbitrary linear map `J` (rows: source coordinates,
/// columns: target coordinates): coefficients are the `k × k` minors of `J`.
pub(crate) fn pullback_alt(a: &AltForm, jac: &DMatrix<f64>) -> AltForm {
    let m = jac.ncols();
    let k = a.degree;
    let mut out = AltForm::zero(m, k);
    if k > m {
        return out;
    }
    let targets = alt_basis(m, k);
    for (idx, c) in a.terms().filter(|t| t.1 != 0.0) {
        let rows: Vec<usize> = idx.zero_based().collect();
        for (t, tau) in targets.iter().enumerate() {
            let cols: Vec<usize> = tau.zero_based().collect();
            out.coeffs[t] += c * minor(jac, &rows, &cols);
        }
    }
    out
}

pub(crate) fn minor(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    match rows.len() {
        0 => 1.0,
        1 => m[(rows[0], cols[0])],
        2 => m[(rows[0], cols[0])] * m[(rows[1], cols[1])] - m[(rows[0], cols[1])] * m[(rows[1], cols[0])],
        k => DMatrix::from_fn(k, k, |i, j| m[(rows[i], cols[j])]).determinant(),
    }
}

/// Identification of 2D 1-forms with vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ProxyConvention {
    /// `(a, b) ↔ a dx¹ + b dx²`.
    Direct,
    /// `(b, −a) ↔ a dx¹ + b dx²`: the clockwise rotation of the direct proxy.
    #[default]
    Rotated,
}

/// Builds the form represented by a scalar (`values.len() == 1`) or vector proxy.
///
/// In 3D, 2-forms use `(a, b, c) ↔ a dx²∧dx³ − b dx¹∧dx³ + c dx¹∧dx²`.
/// The convention flag only affects 1-forms in 2D.
pub fn proxy_encode(values: &[f64], degree: usize, dim: usize, convention: ProxyConvention) -> Result<AltForm> {
    let expected = proxy_len(dim, degree)?;
    if values.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "proxy of size {} for {degree}-forms in dimension {dim}",
            values.len()
        )));
    }
    let out = match (dim, degree) {
        (_, 0) => AltForm::scalar(dim, values[0]),
        (d, k) if k == d => AltForm::volume(d).scale(values[0]),
        (2, 1) => match convention {
            ProxyConvention::Direct => AltForm::from_coeffs(2, 1, values.to_vec())?,
            ProxyConvention::Rotated => AltForm::from_coeffs(2, 1, vec![-values[1], values[0]])?,
        },
        (3, 1) => AltForm::from_coeffs(3, 1, values.to_vec())?,
        // basis order: {1,2}, {1,3}, {2,3}
        (3, 2) => AltForm::from_coeffs(3, 2, vec![values[2], -values[1], values[0]])?,
        _ => unreachable!(),
    };
    Ok(out)
}

/// Inverse of [`proxy_encode`].
pub fn proxy_decode(form: &AltForm, convention: ProxyConvention) -> Result<Vec<f64>> {
    let (dim, degree) = (form.dim, form.degree);
    proxy_len(dim, degree)?;
    let c = &form.coeffs;
    Ok(match (dim, degree) {
        (_, 0) => vec![c[0]],
        (d, k) if k == d => vec![c[0]],
        (2, 1) => match convention {
            ProxyConvention::Direct => c.clone(),
            ProxyConvention::Rotated => vec![c[1], -c[0]],
        },
        (3, 1) => c.clone(),
        (3, 2) => vec![c[2], -c[1], c[0]],
        _ => unreachable!(),
    })
}

fn proxy_len(dim: usize, degree: usize) -> Result<usize> {
    match (dim, degree) {
        (2 | 3, 0) => Ok(1),
        (d, k) if (d == 2 || d == 3) && k == d => Ok(1),
        (2, 1) | (3, 1) | (3, 2) => Ok(dim),
        _ => Err(Error::UnsupportedProxy { dim, degree }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn form(dim: usize, degree: usize, c: &[f64]) -> AltForm {
        AltForm::from_coeffs(dim, degree, c.to_vec()).unwrap()
    }

    fn arb_form(dim: usize, degree: usize) -> impl Strategy<Value = AltForm> {
        prop::collection::vec(-2.0..2.0f64, binomial(dim, degree))
            .prop_map(move |c| AltForm::from_coeffs(dim, degree, c).unwrap())
    }

    fn close(a: &AltForm, b: &AltForm, tol: f64) -> bool {
        a.dim == b.dim && a.degree == b.degree && a.coeffs.iter().zip(&b.coeffs).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn basis_enumeration() {
        let b = alt_basis(3, 1);
        assert_eq!(b.iter().map(|i| i.subset()).collect::<Vec<_>>(), vec![vec![1], vec![2], vec![3]]);
        let b = alt_basis(3, 2);
        assert_eq!(
            b.iter().map(|i| i.subset()).collect::<Vec<_>>(),
            vec![vec![1, 2], vec![1, 3], vec![2, 3]]
        );
        assert!(alt_basis(2, 3).is_empty());
        for n in 0..7 {
            for k in 0..9 {
                let b = alt_basis(n, k);
                assert_eq!(b.len(), binomial(n, k));
                for (r, idx) in b.iter().enumerate() {
                    assert_eq!(idx.rank(), r);
                }
            }
        }
    }

    #[test]
    fn wedge_examples() {
        let dx1 = AltForm::dx(3, 1);
        let dx2 = AltForm::dx(3, 2);
        let dx3 = AltForm::dx(3, 3);
        assert_eq!(wedge(&dx1, &dx1).unwrap().max_abs(), 0.0);
        assert_eq!(wedge(&dx1, &dx2).unwrap(), wedge(&dx2, &dx1).unwrap().scale(-1.0));
        let v = wedge(&dx1, &wedge(&dx2, &dx3).unwrap()).unwrap();
        assert_eq!(v, AltForm::volume(3));
        assert!(wedge(&dx1, &AltForm::dx(2, 1)).is_err());
    }

    #[test]
    fn star_examples() {
        let o = Orientation::Positive;
        // ⋆(a1 dx1 + a2 dx2) = a1 dx2 - a2 dx1
        let s = hodge_star(&form(2, 1, &[3.0, 5.0]), o);
        assert_eq!(s, form(2, 1, &[-5.0, 3.0]));
        // ⋆(a12 dx12 + a13 dx13 + a23 dx23) = a12 dx3 - a13 dx2 + a23 dx1
        let s = hodge_star(&form(3, 2, &[2.0, 3.0, 7.0]), o);
        assert_eq!(s, form(3, 1, &[7.0, -3.0, 2.0]));
        assert_eq!(hodge_star(&AltForm::scalar(3, 1.0), o), AltForm::volume(3));
        let neg = hodge_star(&AltForm::scalar(3, 1.0), Orientation::Negative);
        assert_eq!(neg, AltForm::volume(3).scale(-1.0));
    }

    #[test]
    fn contraction_examples() {
        let dx12 = wedge(&AltForm::dx(2, 1), &AltForm::dx(2, 2)).unwrap();
        assert_eq!(contraction(&dx12, &[1.0, 0.0]).unwrap(), AltForm::dx(2, 2));
        assert!(contraction(&AltForm::scalar(2, 1.0), &[1.0, 0.0]).is_err());
    }

    #[test]
    fn contraction_matches_evaluation() {
        let a = form(3, 2, &[0.3, -1.2, 2.0]);
        let v = vec![0.5, -0.25, 1.5];
        let w = vec![1.0, 2.0, -3.0];
        let lhs = contraction(&a, &v).unwrap().evaluate(std::slice::from_ref(&w)).unwrap();
        let rhs = a.evaluate(&[v, w]).unwrap();
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn contraction_of_two_form_proxy_is_a_cross_product() {
        // With the 3D 2-form proxy, ω ⌟ v has proxy w × v.
        let w = [0.7, -1.3, 2.1];
        let v = [0.4, 0.9, -0.6];
        let omega = proxy_encode(&w, 2, 3, ProxyConvention::default()).unwrap();
        let c = proxy_decode(&contraction(&omega, &v).unwrap(), ProxyConvention::default()).unwrap();
        let cross = [w[1] * v[2] - w[2] * v[1], w[2] * v[0] - w[0] * v[2], w[0] * v[1] - w[1] * v[0]];
        for i in 0..3 {
            assert!((c[i] - cross[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn trace_examples() {
        let w = [0.3, -0.8, 1.7];
        let a = form(3, 1, &w);
        let e1 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let t = trace_alt(&a, &e1).unwrap();
        assert!((t.coeffs[0] - w[0]).abs() < 1e-15);
        let id = DMatrix::identity(3, 3);
        assert!(close(&trace_alt(&a, &id).unwrap(), &a, 1e-15));
        // degree-2 form on the plane spanned by (e1, e2): proxy · e3
        let b = proxy_encode(&w, 2, 3, ProxyConvention::Direct).unwrap();
        let plane = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let tb = trace_alt(&b, &plane).unwrap();
        assert!((tb.coeffs[0] - w[2]).abs() < 1e-15);
        let bad = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 0.0]);
        assert!(matches!(trace_alt(&a, &bad), Err(Error::NonOrthonormalFrame(_))));
    }

    #[test]
    fn trace_onto_tilted_hyperplane_gives_normal_component() {
        let s = 0.5f64.sqrt();
        // (q1, q2, n) positively oriented with n = q1 × q2
        let q1 = [s, s, 0.0];
        let q2 = [0.0, 0.0, 1.0];
        let n = [s, -s, 0.0];
        let frame = DMatrix::from_column_slice(3, 2, &[q1[0], q1[1], q1[2], q2[0], q2[1], q2[2]]);
        let w = [1.1, -0.4, 0.9];
        let b = proxy_encode(&w, 2, 3, ProxyConvention::Direct).unwrap();
        let t = trace_alt(&b, &frame).unwrap();
        let dot = w[0] * n[0] + w[1] * n[1] + w[2] * n[2];
        assert!((t.coeffs[0] - dot).abs() < 1e-14);
    }

    #[test]
    fn proxy_examples() {
        let f = proxy_encode(&[1.0, 2.0, 3.0], 2, 3, ProxyConvention::Direct).unwrap();
        let dx = |i| AltForm::dx(3, i);
        let expected = wedge(&dx(2), &dx(3))
            .unwrap()
            .add(&wedge(&dx(1), &dx(3)).unwrap().scale(-2.0))
            .unwrap()
            .add(&wedge(&dx(1), &dx(2)).unwrap().scale(3.0))
            .unwrap();
        assert_eq!(f, expected);
        // rotated: (b, -a) ↔ a dx1 + b dx2
        let g = proxy_encode(&[5.0, -2.0], 1, 2, ProxyConvention::Rotated).unwrap();
        assert_eq!(g, form(2, 1, &[2.0, 5.0]));
        assert!(proxy_encode(&[1.0], 1, 4, ProxyConvention::Direct).is_err());
    }

    #[test]
    fn wedge_2d_matches_rotated_dot_product() {
        let w = [0.3, 1.9];
        let v = [-1.1, 0.6];
        let a = proxy_encode(&w, 1, 2, ProxyConvention::Direct).unwrap();
        let b = proxy_encode(&v, 1, 2, ProxyConvention::Direct).unwrap();
        let rot = [v[1], -v[0]];
        let c = wedge(&a, &b).unwrap().coeffs[0];
        assert!((c - (w[0] * rot[0] + w[1] * rot[1])).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn wedge_associative_and_graded(a in arb_form(4, 1), b in arb_form(4, 2), c in arb_form(4, 1)) {
            let l = wedge(&wedge(&a, &b).unwrap(), &c).unwrap();
            let r = wedge(&a, &wedge(&b, &c).unwrap()).unwrap();
            prop_assert!(close(&l, &r, 1e-13));
            let ab = wedge(&a, &b).unwrap();
            let ba = wedge(&b, &a).unwrap();
            prop_assert!(close(&ab, &ba, 1e-13));
            let ac = wedge(&a, &c).unwrap();
            let ca = wedge(&c, &a).unwrap().scale(-1.0);
            prop_assert!(close(&ac, &ca, 1e-13));
        }

        #[test]
        fn wedge_bilinear(a in arb_form(3, 1), b in arb_form(3, 1), c in arb_form(3, 2), s in -3.0..3.0f64) {
            let l = wedge(&a.scale(s).add(&b).unwrap(), &c).unwrap();
            let r = wedge(&a, &c).unwrap().scale(s).add(&wedge(&b, &c).unwrap()).unwrap();
            prop_assert!(close(&l, &r, 1e-13));
        }

        #[test]
        fn star_is_isometric_involution(n in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for k in 0..=n {
                let mut rnd = || AltForm::from_coeffs(n, k, (0..binomial(n, k)).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
                let a = rnd();
                let b = rnd();
                let o = Orientation::Positive;
                let sa = hodge_star(&a, o);
                prop_assert!((sa.inner(&hodge_star(&b, o)).unwrap() - a.inner(&b).unwrap()).abs() < 1e-13);
                prop_assert!(close(&hodge_star(&sa, o), &a.scale(parity(k * (n - k))), 1e-14));
                prop_assert!(close(&hodge_star_inv(&sa, o), &a, 1e-14));
                prop_assert!(close(&hodge_star_inv(&hodge_star(&a, Orientation::Negative), Orientation::Negative), &a, 1e-14));
                // ⋆⁻¹a ∧ b = b ∧ ⋆a = a ∧ ⋆b
                let x = wedge(&hodge_star_inv(&a, o), &b).unwrap();
                let y = wedge(&b, &hodge_star(&a, o)).unwrap();
                let z = wedge(&a, &hodge_star(&b, o)).unwrap();
                prop_assert!(close(&x, &y, 1e-13) && close(&y, &z, 1e-13));
                // a ∧ ⋆b = <a, b> vol
                prop_assert!((z.coeffs[0] - a.inner(&b).unwrap()).abs() < 1e-13);
            }
        }

        #[test]
        fn contraction_nilpotent(a in arb_form(4, 3), v in prop::collection::vec(-1.0..1.0f64, 4)) {
            let c = contraction(&contraction(&a, &v).unwrap(), &v).unwrap();
            prop_assert!(c.max_abs() < 1e-14);
        }

        #[test]
        fn trace_respects_wedge(a in arb_form(3, 1), b in arb_form(3, 1), angle in 0.0..6.2f64, tilt in -1.0..1.0f64) {
            let q1 = nalgebra::Vector3::new(angle.cos(), angle.sin(), 0.0);
            let q2 = nalgebra::Vector3::new(-angle.sin() * tilt, angle.cos() * tilt, 1.0).normalize();
            let q2 = (q2 - q1 * q1.dot(&q2)).normalize();
            let frame = DMatrix::from_columns(&[
                nalgebra::DVector::from_column_slice(q1.as_slice()),
                nalgebra::DVector::from_column_slice(q2.as_slice()),
            ]);
            let l = trace_alt(&wedge(&a, &b).unwrap(), &frame).unwrap();
            let r = wedge(&trace_alt(&a, &frame).unwrap(), &trace_alt(&b, &frame).unwrap()).unwrap();
            prop_assert!(close(&l, &r, 1e-13));
        }

        #[test]
        fn proxy_round_trip(v in prop::collection::vec(-5.0..5.0f64, 3), dim in 2usize..4, k in 0usize..4) {
            prop_assume!(k <= dim);
            for conv in [ProxyConvention::Direct, ProxyConvention::Rotated] {
                let len = if k == 0 || k == dim { 1 } else { dim };
                let f = proxy_encode(&v[..len], k, dim, conv).unwrap();
                prop_assert_eq!(proxy_decode(&f, conv).unwrap(), v[..len].to_vec());
            }
        }
    }
}
