//! Small dense solves with equilibration and a conditioning guard.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh::CellId;

/// Condition estimate above which a local solve logs a warning.
pub const WARN_CONDITION: f64 = 1e8;
/// Condition estimate above which a local solve is rejected.
pub const MAX_CONDITION: f64 = 1e12;

fn equilibrate(a: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let rows = DVector::from_fn(a.nrows(), |i, _| {
        let m = a.row(i).amax();
        if m > 0.0 {
            1.0 / m
        } else {
            1.0
        }
    });
    let scaled = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * rows[i]);
    let cols = DVector::from_fn(a.ncols(), |j, _| {
        let m = scaled.column(j).amax();
        if m > 0.0 {
            1.0 / m
        } else {
            1.0
        }
    });
    (rows, cols)
}

/// Solves `A X = B` for square `A`, returning an error when `A` is singular
/// or worse conditioned than [`MAX_CONDITION`] after equilibration.
pub fn solve_square(cell: CellId, context: &'static str, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    assert_eq!(a.nrows(), a.ncols(), "{context}: system is not square");
    assert_eq!(a.nrows(), b.nrows());
    if a.nrows() == 0 {
        return Ok(DMatrix::zeros(0, b.ncols()));
    }
    let (r, c) = equilibrate(a);
    let s = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * r[i] * c[j]);
    let sv = s.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > MAX_CONDITION {
        return Err(Error::IllConditioned { cell, context, cond });
    }
    if cond > WARN_CONDITION {
        log::warn!("{context} on {cell}: condition estimate {cond:.3e}");
    }
    let rb = DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] * r[i]);
    let lu = s.clone().full_piv_lu();
    let mut y = lu.solve(&rb).ok_or_else(|| Error::Solver(format!("{context}: singular pivot")))?;
    // one step of iterative refinement
    if let Some(dy) = lu.solve(&(&rb - &s * &y)) {
        y += dy;
    }
    Ok(DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] * c[i]))
}

/// Solves `M X = B` for symmetric positive definite `M` with diagonal scaling.
pub fn solve_spd(cell: CellId, context: &'static str, m: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, b.ncols()));
    }
    let d = DVector::from_fn(m.nrows(), |i, _| 1.0 / m[(i, i)].max(f64::MIN_POSITIVE).sqrt());
    let s = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * d[i] * d[j]);
    let Some(ch) = s.clone().cholesky() else {
        return solve_square(cell, context, m, b);
    };
    let rb = DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] * d[i]);
    let y = ch.solve(&rb);
    Ok(DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] * d[i]))
}

/// Full singular value decomposition `A = U diag(s) Vᵀ` (`U` is `m×m`, `V`
/// is `n×n`, `s` descending of length `min(m, n)`).
pub fn svd(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok((DMatrix::identity(m, m), Vec::new(), DMatrix::identity(n, n)));
    }
    let fm = faer::Mat::from_fn(m, n, |i, j| a[(i, j)]);
    let dec = fm.svd().map_err(|e| Error::Solver(format!("SVD failed: {e:?}")))?;
    let (u, v, sv) = (dec.U(), dec.V(), dec.S().column_vector());
    Ok((
        DMatrix::from_fn(m, m, |i, j| u[(i, j)]),
        (0..m.min(n)).map(|i| sv[i]).collect(),
        DMatrix::from_fn(n, n, |i, j| v[(i, j)]),
    ))
}

/// Numerical rank, range and null space of `A` with a relative cutoff.
struct Split {
    rank: usize,
    u: DMatrix<f64>,
    s: Vec<f64>,
    v: DMatrix<f64>,
}

impl Split {
    fn new(a: &DMatrix<f64>, rcond: f64) -> Result<Self> {
        let (u, s, v) = svd(a)?;
        let smax = s.first().copied().unwrap_or(0.0);
        let rank = s.iter().take_while(|&&x| x > rcond * smax && x > 0.0).count();
        Ok(Self { rank, u, s, v })
    }

    fn pinv_apply(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let r = self.rank;
        let mut c = self.u.columns(0, r).transpose() * b;
        for i in 0..r {
            c.row_mut(i).scale_mut(1.0 / self.s[i]);
        }
        self.v.columns(0, r) * c
    }

    fn null(&self) -> DMatrix<f64> {
        self.v.columns(self.rank, self.v.ncols() - self.rank).into_owned()
    }
}

/// Minimum-norm least-squares solution of `A X ≈ B` with a relative
/// singular value cutoff and one step of iterative refinement.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    if a.ncols() == 0 || a.nrows() == 0 {
        return Ok(DMatrix::zeros(a.ncols(), b.ncols()));
    }
    let sp = Split::new(a, rcond)?;
    let mut x = sp.pinv_apply(b);
    // refinement against the projected residual
    x += sp.pinv_apply(&(b - a * &x));
    Ok(x)
}

/// Solution of `A X ≈ B` in the least-squares sense; among its minimizers,
/// the one that minimizes `‖C X − E‖`, and among those the minimum-norm one.
pub fn staged_lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, e: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    let n = a.ncols();
    if n == 0 {
        return Ok(DMatrix::zeros(0, b.ncols()));
    }
    let sp = Split::new(a, rcond)?;
    let mut x0 = sp.pinv_apply(b);
    x0 += sp.pinv_apply(&(b - a * &x0));
    let z = sp.null();
    if z.ncols() == 0 || c.nrows() == 0 {
        return Ok(x0);
    }
    let cz = c * &z;
    let y = lstsq(&cz, &(e - c * &x0), rcond)?;
    Ok(x0 + z * y)
}

/// Orthonormal basis of the null space of `A` (columns), relative cutoff `rcond`.
pub fn null_space(a: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    Ok(Split::new(a, rcond)?.null())
}

/// Singular values of `A`, descending.
pub fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(svd(a)?.1)
}

/// Horizontal concatenation.
pub fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).max().unwrap_or(0);
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        if b.ncols() > 0 {
            assert_eq!(b.nrows(), rows);
            out.columns_mut(at, b.ncols()).copy_from(b);
        }
        at += b.ncols();
    }
    out
}

/// Vertical concatenation.
pub fn vcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.iter().map(|b| b.ncols()).max().unwrap_or(0);
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        if b.nrows() > 0 {
            assert_eq!(b.ncols(), cols);
            out.rows_mut(at, b.nrows()).copy_from(b);
        }
        at += b.nrows();
    }
    out
}
