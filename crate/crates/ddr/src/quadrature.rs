//! Simplex quadrature and exact integration of polynomial forms on cells.
//!
//! Rules are conical products of Gauss–Jacobi rules (computed by the
//! Golub–Welsch eigenvalue method) and are checked against exact monomial
//! integrals when first built. Polynomial integrals on a cell reduce to its
//! monomial moments `∫_f y^α`, computed once on the cell's subdivision.

use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::exterior::{alt_basis, binomial, shuffle_sign, AltForm};
use crate::mesh::{Cell, CellId, PolytopalMesh};
use crate::poly::{full_dim, monomials, n_monomials, FormField, PolyForm};

/// Highest exactness degree for which rules are built.
pub const MAX_DEGREE: usize = 21;

/// Quadrature on the reference simplex `{x ≥ 0, Σ x ≤ 1}`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub dim: usize,
    pub degree_exact: usize,
    /// Barycentric coordinates `(1 − Σx, x_1, …, x_d)`.
    pub points: Vec<Vec<f64>>,
    /// Sum to `1/d!`.
    pub weights: Vec<f64>,
}

/// Gauss–Jacobi nodes and weights on `[0, 1]` for the weight `(1 − u)^a`.
fn gauss_jacobi01(m: usize, a: usize) -> (Vec<f64>, Vec<f64>) {
    let alpha = a as f64;
    let mut t = DMatrix::zeros(m, m);
    for k in 0..m {
        let kf = k as f64;
        let s = 2.0 * kf + alpha;
        t[(k, k)] = if k == 0 { -alpha / (alpha + 2.0) } else { -alpha * alpha / (s * (s + 2.0)) };
        if k + 1 < m {
            let j = kf + 1.0;
            let s = 2.0 * j + alpha;
            let b = 4.0 * j * (j + alpha) * j * (j + alpha) / (s * s * (s + 1.0) * (s - 1.0));
            t[(k, k + 1)] = b.sqrt();
            t[(k + 1, k)] = b.sqrt();
        }
    }
    let mu0 = 2f64.powi(a as i32 + 1) / (alpha + 1.0);
    let eig = SymmetricEigen::new(t);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            ((1.0 + eig.eigenvalues[i]) / 2.0, mu0 * v0 * v0 / 2f64.powi(a as i32 + 1))
        })
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    pairs.into_iter().unzip()
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    gauss_jacobi01(m, 0)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

impl QuadratureRule {
    fn build(dim: usize, degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::QuadratureUnavailable(degree));
        }
        if dim == 0 {
            return Ok(Self { dim, degree_exact: degree, points: vec![vec![1.0]], weights: vec![1.0] });
        }
        let m = degree / 2 + 1;
        let rules: Vec<(Vec<f64>, Vec<f64>)> = (1..=dim).map(|i| gauss_jacobi01(m, dim - i)).collect();
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let total = m.pow(dim as u32);
        for flat in 0..total {
            let mut idx = flat;
            let mut x = vec![0.0; dim];
            let mut w = 1.0;
            let mut rest = 1.0;
            for (i, (u, wu)) in rules.iter().enumerate() {
                let j = idx % m;
                idx /= m;
                x[i] = rest * u[j];
                rest *= 1.0 - u[j];
                w *= wu[j];
            }
            let mut bary = vec![1.0 - x.iter().sum::<f64>()];
            bary.extend(x);
            points.push(bary);
            weights.push(w);
        }
        let rule = Self { dim, degree_exact: degree, points, weights };
        rule.self_test()?;
        Ok(rule)
    }

    /// Exactness check against `∫ x^a = Π a_i! / (|a| + d)!`.
    fn self_test(&self) -> Result<()> {
        let d = self.dim;
        let tab = monomials(d);
        for i in 0..n_monomials(d, self.degree_exact as i64) {
            let e = tab.exponent(i);
            let exact = e.iter().map(|&p| factorial(p as usize)).product::<f64>() / factorial(tab.degree_of(i) + d);
            let approx: f64 = self.points.iter().zip(&self.weights).map(|(p, w)| w * tab.eval(i, &p[1..])).sum();
            if (approx - exact).abs() > 1e-12 * exact {
                return Err(Error::Solver(format!(
                    "quadrature self-test failed: dim {d}, degree {}, monomial {e:?}",
                    self.degree_exact
                )));
            }
        }
        Ok(())
    }

    /// Cached rule of exactness at least `degree`.
    pub fn get(dim: usize, degree: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<RwLock<Vec<Vec<Option<Arc<QuadratureRule>>>>>> = OnceLock::new();
        if degree > MAX_DEGREE {
            return Err(Error::QuadratureUnavailable(degree));
        }
        if dim > 3 {
            return Err(Error::InvalidArgument(format!("no simplex rules in dimension {dim}")));
        }
        let cache = CACHE.get_or_init(|| RwLock::new(vec![vec![None; MAX_DEGREE + 1]; 4]));
        if let Some(r) = &cache.read().unwrap()[dim][degree] {
            return Ok(r.clone());
        }
        let rule = Arc::new(Self::build(dim, degree)?);
        cache.write().unwrap()[dim][degree] = Some(rule.clone());
        Ok(rule)
    }
}

/// Visits `(x, w)` quadrature pairs covering a cell.
pub fn for_each_point(cell: &Cell, degree: usize, mut visit: impl FnMut(&DVector<f64>, f64)) -> Result<()> {
    let d = cell.dim();
    let rule = QuadratureRule::get(d, degree)?;
    let scale = factorial(d);
    for ch in &cell.chunks {
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let mut x = &ch.points[0] * p[0];
            for (k, lam) in p.iter().enumerate().skip(1) {
                x.axpy(*lam, &ch.points[k], 1.0);
            }
            visit(&x, w * scale * ch.measure);
        }
    }
    Ok(())
}

/// Monomial moments `∫_f y^α` of a cell, in physical measure.
#[derive(Clone, Debug)]
pub struct Moments {
    dim: usize,
    degree: usize,
    values: Vec<f64>,
}

impl Moments {
    pub fn compute(cell: &Cell, degree: usize) -> Result<Self> {
        let d = cell.dim();
        let tab = monomials(d);
        let n = n_monomials(d, degree as i64);
        let mut values = vec![0.0; n];
        let mut powers = vec![vec![1.0; degree + 1]; d];
        for_each_point(cell, degree, |x, w| {
            let y = cell.local_coords(x);
            for i in 0..d {
                for p in 1..=degree {
                    powers[i][p] = powers[i][p - 1] * y[i];
                }
            }
            for (k, v) in values.iter_mut().enumerate() {
                let e = tab.exponent(k);
                let mut m = w;
                for i in 0..d {
                    m *= powers[i][e[i] as usize];
                }
                *v += m;
            }
        })?;
        Ok(Self { dim: d, degree, values })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Scalar Gram block `∫ y^α y^β`, rows `|α| ≤ r1`, columns `|β| ≤ r2`.
    pub fn scalar_gram(&self, r1: usize, r2: usize) -> DMatrix<f64> {
        assert!(r1 + r2 <= self.degree, "moments of degree {} needed, have {}", r1 + r2, self.degree);
        let tab = monomials(self.dim);
        let (n1, n2) = (n_monomials(self.dim, r1 as i64), n_monomials(self.dim, r2 as i64));
        DMatrix::from_fn(n1, n2, |i, j| self.values[tab.product(i, j)])
    }

    /// L² Gram matrix between `Full(r1, ℓ)` and `Full(r2, ℓ)`.
    pub fn gram(&self, r1: usize, r2: usize, ell: usize) -> DMatrix<f64> {
        let s = self.scalar_gram(r1, r2);
        let na = binomial(self.dim, ell);
        let mut g = DMatrix::zeros(s.nrows() * na, s.ncols() * na);
        for i in 0..s.nrows() {
            for j in 0..s.ncols() {
                for a in 0..na {
                    g[(i * na + a, j * na + a)] = s[(i, j)];
                }
            }
        }
        g
    }

    /// Pairing `∫ a ∧ b` for `a ∈ Full(ra, ℓ)` (rows), `b ∈ Full(rb, d − ℓ)` (columns).
    pub fn wedge(&self, ell: usize, ra: usize, rb: usize) -> DMatrix<f64> {
        let d = self.dim;
        let s = self.scalar_gram(ra, rb);
        let (ba, bb) = (alt_basis(d, ell), alt_basis(d, d - ell));
        let mut w = DMatrix::zeros(s.nrows() * ba.len(), s.ncols() * bb.len());
        for (a, sig) in ba.iter().enumerate() {
            let comp = sig.complement();
            let sign = shuffle_sign(sig.mask(), comp.mask()).unwrap();
            let b = comp.rank();
            for i in 0..s.nrows() {
                for j in 0..s.ncols() {
                    w[(i * ba.len() + a, j * bb.len() + b)] = sign * s[(i, j)];
                }
            }
        }
        w
    }
}

/// `∫_f a ∧ b` for forms of complementary degree on the same cell.
pub fn integrate_wedge(mesh: &PolytopalMesh, f: CellId, a: &PolyForm, b: &PolyForm) -> Result<f64> {
    let d = f.dim;
    if a.dim() != d || b.dim() != d || a.form_degree() + b.form_degree() != d {
        return Err(Error::DimensionMismatch(format!(
            "integrate_wedge on a {d}-cell with degrees {} and {}",
            a.form_degree(),
            b.form_degree()
        )));
    }
    let m = Moments::compute(mesh.cell(f), a.poly_degree() + b.poly_degree())?;
    let w = m.wedge(a.form_degree(), a.poly_degree(), b.poly_degree());
    Ok(a.coeffs().dot(&(w * b.coeffs())))
}

/// Load vector `∫_f ⟨F(x), e^σ⟩ y^α` over `Full(r, ℓ)`, where `F` returns
/// `ℓ`-forms expressed in the cell frame.
pub fn field_load(cell: &Cell, r: usize, ell: usize, degree: usize, fun: impl Fn(&DVector<f64>) -> AltForm) -> Result<DVector<f64>> {
    let d = cell.dim();
    let tab = monomials(d);
    let nalt = binomial(d, ell);
    let nm = n_monomials(d, r as i64);
    let mut load = DVector::zeros(full_dim(d, r as i64, ell));
    for_each_point(cell, degree, |x, w| {
        let y = cell.local_coords(x);
        let v = fun(x);
        for m in 0..nm {
            let ym = w * tab.eval(m, y.as_slice());
            for a in 0..nalt {
                load[m * nalt + a] += ym * v.coeffs()[a];
            }
        }
    })?;
    Ok(load)
}

/// `∫_f tr F ∧ b` for an ambient field `F` and a polynomial form `b` on `f`.
pub fn integrate_field_wedge(mesh: &PolytopalMesh, f: CellId, field: &FormField, b: &PolyForm, degree: usize) -> Result<f64> {
    let cell = mesh.cell(f);
    let d = f.dim;
    if field.degree() + b.form_degree() != d || b.dim() != d {
        return Err(Error::DimensionMismatch("field and test form degrees must add up to the cell dimension".into()));
    }
    let load = field_load(cell, b.poly_degree(), b.form_degree(), degree, |x| {
        let tr = crate::exterior::pullback_alt(&field.eval(x.as_slice()), &cell.frame);
        // e^σ ∧ e^τ = sign(σ, τ) vol, so the coefficients of ⋆trF pair directly with b
        crate::exterior::hodge_star(&tr, crate::exterior::Orientation::Positive)
    })?;
    Ok(load.dot(b.coeffs()))
}

/// Builds the L² mass matrix of a set of columns in `Full(r, ℓ)`.
pub fn mass_matrix(moments: &Moments, r: usize, ell: usize, columns: &DMatrix<f64>) -> DMatrix<f64> {
    let g = moments.gram(r, r, ell);
    columns.transpose() * g * columns
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exterior::AltIndex;
    use crate::mesh::cartesian_grid;

    #[test]
    fn rules_pass_self_test_up_to_cap() {
        for d in 0..=3 {
            for deg in 0..=MAX_DEGREE {
                let r = QuadratureRule::get(d, deg).unwrap();
                let s: f64 = r.weights.iter().sum();
                assert!((s - 1.0 / factorial(d)).abs() < 1e-14);
                assert!(r.points.iter().all(|p| p.iter().all(|&l| (-1e-15..=1.0 + 1e-15).contains(&l))));
            }
        }
        assert!(matches!(QuadratureRule::get(2, 22), Err(Error::QuadratureUnavailable(22))));
    }

    #[test]
    fn unit_segment_and_square_examples() {
        let m = cartesian_grid(1, &[1]).unwrap();
        let e = CellId::new(1, 0);
        let one = PolyForm::monomial(1, &[0], AltIndex::new(1, &[]).unwrap(), 1.0);
        // ∫ 1 · dx over [0,1] (the frame covector e¹ = dx)
        let dx = PolyForm::monomial(1, &[0], AltIndex::new(1, &[1]).unwrap(), 1.0);
        assert!((integrate_wedge(&m, e, &one, &dx).unwrap() - 1.0).abs() < 1e-15);
        let sq = cartesian_grid(2, &[1, 1]).unwrap();
        let y1 = PolyForm::monomial(2, &[1, 0], AltIndex::new(2, &[]).unwrap(), 1.0);
        let vol = PolyForm::monomial(2, &[0, 0], AltIndex::new(2, &[1, 2]).unwrap(), 1.0);
        assert!(integrate_wedge(&sq, CellId::new(2, 0), &y1, &vol).unwrap().abs() < 1e-16);
    }

    #[test]
    fn unit_cube_volume_from_field() {
        let m = cartesian_grid(3, &[1, 1, 1]).unwrap();
        let f = FormField::new(3, 0, |_| vec![1.0]);
        let vol = PolyForm::monomial(3, &[0, 0, 0], AltIndex::new(3, &[1, 2, 3]).unwrap(), 1.0);
        let v = integrate_field_wedge(&m, CellId::new(3, 0), &f, &vol, 2).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
    }
}
