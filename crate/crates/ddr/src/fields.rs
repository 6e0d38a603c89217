//! Form fields on ambient space: polynomial lifts and manufactured
//! trigonometric families with exact derivative and codifferential.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::exterior::{alt_basis, pullback_alt, AltIndex};
use crate::mesh::{CellId, PolytopalMesh};
use crate::poly::{FormField, PolyForm};

/// Field whose value is the ambient polynomial form `p` (with unit scale and
/// origin), carrying exact `d`, `δ` and `dδ`.
pub fn global_polynomial(p: &PolyForm) -> FormField {
    assert!(p.cell.is_none() && p.scale() == 1.0, "global polynomials use ambient coordinates");
    let lift = |q: PolyForm| FormField::new(q.dim(), q.form_degree(), move |x| q.evaluate(x).coeffs().to_vec());
    let mut f = lift(p.clone());
    let n = p.dim();
    if p.form_degree() < n {
        let dp = p.exterior_derivative();
        let mut df = lift(dp.clone());
        if dp.form_degree() < n {
            df = df.with_derivative(FormField::zero(n, dp.form_degree() + 1));
        }
        f = f.with_derivative(df);
    }
    if p.form_degree() > 0 {
        let delta = p.codifferential();
        let d_delta = lift(delta.exterior_derivative());
        f = f.with_codifferential(lift(delta).with_derivative(d_delta));
    }
    f
}

/// Extends a polynomial form on the cell `f` to ambient space through the
/// orthogonal projection onto the affine hull of `f`. Its trace on `f` and
/// on every subcell of `f` is the trace of `p`.
pub fn cell_polynomial(mesh: &PolytopalMesh, f: CellId, p: &PolyForm) -> FormField {
    assert_eq!(p.dim(), f.dim);
    let cell = mesh.cell(f).clone();
    let n = mesh.ambient_dim();
    let lift = move |q: PolyForm, cell: crate::mesh::Cell| {
        let qt: DMatrix<f64> = cell.frame.transpose();
        FormField::new(n, q.form_degree(), move |x| {
            let y = cell.local_coords(&DVector::from_column_slice(x));
            pullback_alt(&q.evaluate(y.as_slice()), &qt).coeffs().to_vec()
        })
    };
    let mut field = lift(p.clone(), cell.clone());
    if p.form_degree() < f.dim {
        field = field.with_derivative(lift(p.exterior_derivative(), cell));
    } else if p.form_degree() < n {
        field = field.with_derivative(FormField::zero(n, p.form_degree() + 1));
    }
    field
}

/// Smooth `k`-form on `R^n` with components
/// `u_σ = c_σ Π_{i∈σ} sin(mπx_i) Π_{j∉σ} cos(mπx_j)`, whose normal traces of
/// `u` and of `⋆du` vanish on the unit box, so it fits the natural boundary
/// conditions of the mixed Hodge Laplacian there. Carries exact `d`, `δ` and
/// the Hodge Laplacian `(dδ + δd)u = n(mπ)²u`.
#[derive(Clone, Debug)]
pub struct TrigForm {
    pub dim: usize,
    pub degree: usize,
    pub wave: f64,
    pub weights: Vec<f64>,
}

impl TrigForm {
    /// Weights `1, 2, …` give a non-symmetric representative.
    pub fn new(dim: usize, degree: usize, m: usize) -> Self {
        let n = alt_basis(dim, degree).len();
        Self { dim, degree, wave: m as f64 * PI, weights: (0..n).map(|i| 1.0 + 0.5 * i as f64).collect() }
    }

    /// Eigenvalue of the Hodge Laplacian.
    pub fn laplace_eigenvalue(&self) -> f64 {
        self.dim as f64 * self.wave * self.wave
    }

    fn factor(&self, x: &[f64], sines: u32, dsin: Option<usize>) -> f64 {
        // product of sin on `sines`, cos elsewhere; `dsin` differentiates one axis
        let w = self.wave;
        (0..self.dim)
            .map(|i| {
                let s = sines & (1 << i) != 0;
                match (s, dsin == Some(i)) {
                    (true, false) => (w * x[i]).sin(),
                    (false, false) => (w * x[i]).cos(),
                    (true, true) => w * (w * x[i]).cos(),
                    (false, true) => -w * (w * x[i]).sin(),
                }
            })
            .product()
    }

    fn value(&self, x: &[f64]) -> Vec<f64> {
        alt_basis(self.dim, self.degree)
            .iter()
            .zip(&self.weights)
            .map(|(s, c)| c * self.factor(x, s.mask(), None))
            .collect()
    }

    /// `du = Σ_i Σ_σ ∂_i u_σ dx_i ∧ dx_σ`.
    fn derivative(&self, x: &[f64]) -> Vec<f64> {
        let (n, k) = (self.dim, self.degree);
        let out_basis = alt_basis(n, k + 1);
        let mut out = vec![0.0; out_basis.len()];
        for (s, c) in alt_basis(n, k).iter().zip(&self.weights) {
            for i in 0..n {
                let bit = 1u32 << i;
                if s.mask() & bit != 0 {
                    continue;
                }
                let sign = crate::exterior::shuffle_sign(bit, s.mask()).unwrap();
                let target = AltIndex::from_mask(n, s.mask() | bit);
                out[target.rank()] += sign * c * self.factor(x, s.mask(), Some(i));
            }
        }
        out
    }

    /// `δu = −Σ_i Σ_σ ∂_i u_σ ι_{e_i} dx_σ`.
    fn codifferential(&self, x: &[f64]) -> Vec<f64> {
        let (n, k) = (self.dim, self.degree);
        let mut out = vec![0.0; alt_basis(n, k - 1).len()];
        for (s, c) in alt_basis(n, k).iter().zip(&self.weights) {
            for i in 0..n {
                let bit = 1u32 << i;
                if s.mask() & bit == 0 {
                    continue;
                }
                // ι_{e_i} dx_σ = (−1)^{position of i in σ} dx_{σ∖i}
                let pos = (s.mask() & (bit - 1)).count_ones() as usize;
                let target = AltIndex::from_mask(n, s.mask() & !bit);
                out[target.rank()] -= crate::exterior::parity(pos) * c * self.factor(x, s.mask(), Some(i));
            }
        }
        out
    }

    /// Field with exact derivative (and its derivative) and codifferential
    /// (and its derivative).
    pub fn field(&self) -> FormField {
        let (n, k) = (self.dim, self.degree);
        let me = self.clone();
        let mut f = FormField::new(n, k, move |x| me.value(x));
        if k < n {
            let me = self.clone();
            let mut du = FormField::new(n, k + 1, move |x| me.derivative(x));
            if k + 1 < n {
                du = du.with_derivative(FormField::zero(n, k + 2));
            }
            f = f.with_derivative(du);
        }
        if k > 0 {
            let me = self.clone();
            let mut delta = FormField::new(n, k - 1, move |x| me.codifferential(x));
            let me = self.clone();
            // dδu = Δu − δdu; evaluated by finite composition of the closed forms
            delta = delta.with_derivative(FormField::new(n, k, move |x| me.d_delta(x)));
            f = f.with_codifferential(delta);
        }
        f
    }

    /// `dδu`, computed from the closed form of `δu`.
    fn d_delta(&self, x: &[f64]) -> Vec<f64> {
        let (n, k) = (self.dim, self.degree);
        let mut out = vec![0.0; alt_basis(n, k).len()];
        let w = self.wave;
        for (s, c) in alt_basis(n, k).iter().zip(&self.weights) {
            for i in 0..n {
                let bi = 1u32 << i;
                if s.mask() & bi == 0 {
                    continue;
                }
                let pos = (s.mask() & (bi - 1)).count_ones() as usize;
                let rest = s.mask() & !bi;
                let coef = -crate::exterior::parity(pos) * c;
                // term coef · ∂_i u_σ dx_rest; u_σ has sin in every axis of σ, so
                // ∂_i turns sin(wx_i) into w cos(wx_i)
                for j in 0..n {
                    let bj = 1u32 << j;
                    if rest & bj != 0 {
                        continue;
                    }
                    let sign = crate::exterior::shuffle_sign(bj, rest).unwrap();
                    let target = AltIndex::from_mask(n, rest | bj);
                    let val: f64 = (0..n)
                        .map(|a| {
                            let t = w * x[a];
                            let in_s = s.mask() & (1 << a) != 0;
                            match (a == i, a == j) {
                                (true, true) => -w * w * t.sin(),
                                (true, false) => w * t.cos(),
                                (false, true) => {
                                    if in_s {
                                        w * t.cos()
                                    } else {
                                        -w * t.sin()
                                    }
                                }
                                (false, false) => {
                                    if in_s {
                                        t.sin()
                                    } else {
                                        t.cos()
                                    }
                                }
                            }
                        })
                        .product();
                    out[target.rank()] += sign * coef * val;
                }
            }
        }
        out
    }
}
