//! Sparse assembly helpers and the plain-text triplet format.
//!
//! The triplet format has a header line `rows cols nnz` followed by one
//! `row col value` line per stored entry, zero-based, values printed with
//! enough digits to round-trip.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};

/// Accumulates dense blocks into a sparse matrix.
#[derive(Debug)]
pub struct TripletBuilder {
    coo: CooMatrix<f64>,
}

impl TripletBuilder {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { coo: CooMatrix::new(rows, cols) }
    }

    /// Adds `block` at the given global row and column indices.
    pub fn add_block(&mut self, rows: &[usize], cols: &[usize], block: &DMatrix<f64>) {
        debug_assert_eq!((rows.len(), cols.len()), block.shape());
        for (j, &c) in cols.iter().enumerate() {
            for (i, &r) in rows.iter().enumerate() {
                let v = block[(i, j)];
                if v != 0.0 {
                    self.coo.push(r, c, v);
                }
            }
        }
    }

    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        if v != 0.0 {
            self.coo.push(r, c, v);
        }
    }

    pub fn build(self) -> CsrMatrix<f64> {
        CsrMatrix::from(&self.coo)
    }
}

pub fn to_dense(m: &CsrMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from(m)
}

pub fn mat_vec(m: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    assert_eq!(m.ncols(), x.len());
    let mut y = DVector::zeros(m.nrows());
    for (i, row) in m.row_iter().enumerate() {
        y[i] = row.col_indices().iter().zip(row.values()).map(|(&j, v)| v * x[j]).sum();
    }
    y
}

pub fn max_abs(m: &CsrMatrix<f64>) -> f64 {
    m.values().iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Frobenius norm.
pub fn norm(m: &CsrMatrix<f64>) -> f64 {
    m.values().iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn write_triplets(m: &CsrMatrix<f64>, mut out: impl Write) -> Result<()> {
    writeln!(out, "{} {} {}", m.nrows(), m.ncols(), m.nnz())?;
    for (i, row) in m.row_iter().enumerate() {
        for (&j, v) in row.col_indices().iter().zip(row.values()) {
            writeln!(out, "{i} {j} {v:e}")?;
        }
    }
    Ok(())
}

pub fn read_triplets(input: impl BufRead) -> Result<CsrMatrix<f64>> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::Schema("empty triplet file".into()))??;
    let head: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Schema(format!("bad triplet header `{header}`"))))
        .collect::<Result<_>>()?;
    let [rows, cols, nnz] = head[..] else {
        return Err(Error::Schema(format!("bad triplet header `{header}`")));
    };
    let mut coo = CooMatrix::new(rows, cols);
    for line in lines.take(nnz) {
        let line = line?;
        let t: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Schema(format!("bad triplet line `{line}`"));
        if t.len() != 3 {
            return Err(bad());
        }
        let (i, j): (usize, usize) = (t[0].parse().map_err(|_| bad())?, t[1].parse().map_err(|_| bad())?);
        let v: f64 = t[2].parse().map_err(|_| bad())?;
        if i >= rows || j >= cols {
            return Err(bad());
        }
        coo.push(i, j, v);
    }
    if coo.nnz() != nnz {
        return Err(Error::Schema(format!("expected {nnz} entries, found {}", coo.nnz())));
    }
    Ok(CsrMatrix::from(&coo))
}

/// Sparse LU factorization of a square matrix, with one step of iterative
/// refinement per solve.
pub struct SparseLu {
    a: CsrMatrix<f64>,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SparseLu({}×{}, nnz {})", self.a.nrows(), self.a.ncols(), self.a.nnz())
    }
}

impl SparseLu {
    pub fn new(a: &CsrMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!("LU needs a square matrix, got {}×{}", a.nrows(), a.ncols())));
        }
        let trip: Vec<faer::sparse::Triplet<usize, usize, f64>> =
            a.triplet_iter().map(|(i, j, &v)| faer::sparse::Triplet::new(i, j, v)).collect();
        let m = faer::sparse::SparseColMat::<usize, f64>::try_new_from_triplets(a.nrows(), a.ncols(), &trip)
            .map_err(|e| Error::Solver(format!("sparse matrix creation: {e:?}")))?;
        let lu = m.sp_lu().map_err(|e| Error::Solver(format!("sparse LU: {e:?}")))?;
        Ok(Self { a: a.clone(), lu })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        use faer::linalg::solvers::Solve;
        let raw = |rhs: &DVector<f64>| {
            let col = faer::Col::from_fn(rhs.len(), |i| rhs[i]);
            let x = self.lu.solve(&col);
            DVector::from_fn(rhs.len(), |i, _| x[i])
        };
        let mut x = raw(b);
        let res = b - mat_vec(&self.a, &x);
        x += raw(&res);
        x
    }

    /// `‖Ax − b‖ / ‖b‖` (absolute when `b = 0`).
    pub fn relative_residual(&self, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let r = (mat_vec(&self.a, x) - b).norm();
        let nb = b.norm();
        if nb > 0.0 {
            r / nb
        } else {
            r
        }
    }
}
