//! Global complexes, their cohomology by numerical rank, and exact Betti
//! numbers of the mesh cell complex.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use nalgebra_sparse::CsrMatrix;
use num_bigint::BigInt;
use num_traits::Zero;
use petgraph::unionfind::UnionFind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ddr::DdrSpace;
use crate::error::{Error, Result};
use crate::linalg::singular_values;
use crate::mesh::{Cell, PolytopalMesh};
use crate::sparse::{max_abs, norm, to_dense, TripletBuilder};
use crate::spaces::LocalSpaces;
use crate::vem::VemSpace;

/// Default relative singular value cutoff for numerical ranks.
pub const RANK_TOL: f64 = 1e-8;

/// Which construction produced a [`ComplexMatrices`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "degree")]
pub enum Provenance {
    Ddr(usize),
    Vem(usize),
    CellComplex,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Ddr(r) => write!(f, "DDR_{r}"),
            Provenance::Vem(r) => write!(f, "VEM_{r}"),
            Provenance::CellComplex => write!(f, "CW"),
        }
    }
}

/// Space dimensions `N_0, …, N_n` and differentials `D^0, …, D^{n−1}`.
#[derive(Clone, Debug)]
pub struct ComplexMatrices {
    pub provenance: Provenance,
    pub dims: Vec<usize>,
    pub d: Vec<CsrMatrix<f64>>,
}

impl ComplexMatrices {
    pub fn ddr(spaces: &Arc<LocalSpaces>, r: usize) -> Result<Self> {
        let n = spaces.mesh().ambient_dim();
        let xs: Vec<DdrSpace> = (0..=n).into_par_iter().map(|k| DdrSpace::new(spaces.clone(), k, r)).collect::<Result<_>>()?;
        let d = xs[..n].par_iter().map(|x| x.global_d()).collect::<Result<_>>()?;
        Ok(Self { provenance: Provenance::Ddr(r), dims: xs.iter().map(|x| x.dim()).collect(), d })
    }

    pub fn vem(spaces: &Arc<LocalSpaces>, r: usize) -> Result<Self> {
        let n = spaces.mesh().ambient_dim();
        let vs: Vec<VemSpace> = (0..=n).into_par_iter().map(|k| VemSpace::new(spaces.clone(), k, r)).collect::<Result<_>>()?;
        let d = vs[..n].par_iter().map(|v| v.global_d()).collect::<Result<_>>()?;
        Ok(Self { provenance: Provenance::Vem(r), dims: vs.iter().map(|v| v.dim()).collect(), d })
    }

    /// Coboundary matrices of the cell complex: `(δ^k c)_g = Σ_{f ∈ ∂g} ε_{gf} c_f`.
    pub fn cell_complex(mesh: &PolytopalMesh) -> Self {
        let n = mesh.ambient_dim();
        let dims: Vec<usize> = (0..=n).map(|k| mesh.num_cells(k)).collect();
        let d = (0..n)
            .map(|k| {
                let mut tb = TripletBuilder::new(dims[k + 1], dims[k]);
                for (i, c) in mesh.cells(k + 1).iter().enumerate() {
                    for &(f, e) in &c.boundary {
                        tb.push(i, f, e as f64);
                    }
                }
                tb.build()
            })
            .collect();
        Self { provenance: Provenance::CellComplex, dims, d }
    }

    pub fn degree(&self) -> usize {
        self.dims.len() - 1
    }
}

/// Largest `‖D^{k+1} D^k‖_max / (‖D^{k+1}‖_F ‖D^k‖_F)` over `k`.
pub fn verify_complex(c: &ComplexMatrices) -> f64 {
    c.d.windows(2)
        .map(|w| {
            let prod = &w[1] * &w[0];
            let scale = norm(&w[1]) * norm(&w[0]);
            if scale == 0.0 {
                0.0
            } else {
                max_abs(&prod) / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Numerical rank of one differential with its spectral gap.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankInfo {
    pub rank: usize,
    pub sigma_max: f64,
    /// Smallest singular value kept.
    pub sigma_kept: Option<f64>,
    /// Largest singular value dropped.
    pub sigma_dropped: Option<f64>,
    /// `sigma_kept / sigma_dropped`; `None` when nothing is dropped or the
    /// dropped values are exactly zero.
    pub gap: Option<f64>,
    /// Either side of the cutoff lies within a factor 10 of it.
    pub ambiguous: bool,
}

pub fn numerical_rank(m: &CsrMatrix<f64>, tol: f64) -> Result<RankInfo> {
    let s = if m.nnz() == 0 { Vec::new() } else { singular_values(&to_dense(m))? };
    Ok(rank_from_singular_values(&s, tol))
}

fn rank_from_singular_values(s: &[f64], tol: f64) -> RankInfo {
    let sigma_max = s.first().copied().unwrap_or(0.0);
    let cut = tol * sigma_max;
    let rank = s.iter().take_while(|&&x| x > cut && x > 0.0).count();
    let sigma_kept = rank.checked_sub(1).map(|i| s[i]);
    let sigma_dropped = s.get(rank).copied();
    let gap = match (sigma_kept, sigma_dropped) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    let ambiguous = sigma_kept.is_some_and(|a| a < 10.0 * cut) || sigma_dropped.is_some_and(|b| b > cut / 10.0);
    RankInfo { rank, sigma_max, sigma_kept, sigma_dropped, gap, ambiguous }
}

/// Per-degree cohomology data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DegreeReport {
    pub k: usize,
    pub space_dim: usize,
    /// Rank of `D^k` (`0` for `k = n`).
    pub rank_out: usize,
    /// Rank of `D^{k−1}` (`0` for `k = 0`).
    pub rank_in: usize,
    pub cohomology_dim: i64,
    pub betti: Option<usize>,
    pub matches: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CohomologyReport {
    pub provenance: Provenance,
    pub tol: f64,
    pub degrees: Vec<DegreeReport>,
    /// Rank data of `D^0, …, D^{n−1}`.
    pub ranks: Vec<RankInfo>,
    pub complex_residual: f64,
    /// Smallest spectral gap over all differentials (`None` if no gap is finite).
    pub min_gap: Option<f64>,
    pub ambiguous: bool,
}

impl CohomologyReport {
    pub fn dims(&self) -> Vec<i64> {
        self.degrees.iter().map(|d| d.cohomology_dim).collect()
    }

    /// All degrees match the supplied Betti numbers and no rank is ambiguous.
    pub fn all_match(&self) -> bool {
        !self.ambiguous && self.degrees.iter().all(|d| d.matches == Some(true))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl fmt::Display for CohomologyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} cohomology (rank tol {:e}, complex residual {:.2e})", self.provenance, self.tol, self.complex_residual)?;
        writeln!(f, "{:>3} {:>8} {:>8} {:>8} {:>6} {:>6} {:>6}", "k", "dim", "rank D^k", "rank in", "H^k", "betti", "match")?;
        for d in &self.degrees {
            let b = d.betti.map_or("-".into(), |b| b.to_string());
            let m = d.matches.map_or("-", |m| if m { "yes" } else { "NO" });
            writeln!(f, "{:>3} {:>8} {:>8} {:>8} {:>6} {:>6} {:>6}", d.k, d.space_dim, d.rank_out, d.rank_in, d.cohomology_dim, b, m)?;
        }
        match self.min_gap {
            Some(g) => write!(f, "smallest spectral gap {g:.2e}")?,
            None => write!(f, "no finite spectral gap")?,
        }
        if self.ambiguous {
            write!(f, " (AMBIGUOUS rank)")?;
        }
        Ok(())
    }
}

/// Cohomology dimensions `N_k − rank D^k − rank D^{k−1}`, compared with
/// `betti` when given.
pub fn cohomology_dims(c: &ComplexMatrices, tol: f64, betti: Option<&[usize]>) -> Result<CohomologyReport> {
    let n = c.degree();
    let ranks: Vec<RankInfo> = c.d.par_iter().map(|m| numerical_rank(m, tol)).collect::<Result<_>>()?;
    let degrees = (0..=n)
        .map(|k| {
            let rank_out = if k < n { ranks[k].rank } else { 0 };
            let rank_in = if k > 0 { ranks[k - 1].rank } else { 0 };
            let h = c.dims[k] as i64 - rank_out as i64 - rank_in as i64;
            let b = betti.and_then(|b| b.get(k).copied());
            DegreeReport { k, space_dim: c.dims[k], rank_out, rank_in, cohomology_dim: h, betti: b, matches: b.map(|b| b as i64 == h) }
        })
        .collect();
    let min_gap = ranks.iter().filter_map(|r| r.gap).reduce(f64::min);
    let ambiguous = ranks.iter().any(|r| r.ambiguous);
    Ok(CohomologyReport { provenance: c.provenance, tol, degrees, ranks, complex_residual: verify_complex(c), min_gap, ambiguous })
}

/// Exact Betti numbers of the mesh cell complex.
///
/// Uses connectivity and the Euler characteristic: a complex embedded in
/// `R^n` has no top-degree homology, and in 3D the second Betti number is
/// the number of boundary surface components minus the number of
/// components. When the boundary is not a manifold surface (faces meeting
/// only at a vertex), falls back to [`betti_numbers_exact`].
pub fn betti_numbers(mesh: &PolytopalMesh) -> Vec<usize> {
    let n = mesh.ambient_dim();
    let b0 = components(mesh.num_cells(0), mesh.cells(1).iter().map(|e| e.boundary.iter().map(|&(v, _)| v)));
    let chi = mesh.euler_characteristic();
    let mut b = vec![0usize; n + 1];
    b[0] = b0;
    match n {
        0 | 1 => {}
        2 => b[1] = (b0 as i64 - chi) as usize,
        3 => {
            let faces: Vec<&Cell> = mesh.boundary_facets().into_iter().map(|i| &mesh.cells(2)[i]).collect();
            let via_edges = boundary_components(mesh, &faces, 1);
            if via_edges != boundary_components(mesh, &faces, 0) {
                return betti_numbers_exact(mesh);
            }
            b[2] = via_edges - b0;
            b[1] = (b0 as i64 + b[2] as i64 - chi) as usize;
        }
        _ => return betti_numbers_exact(mesh),
    }
    b
}

/// Number of connected components of `n` nodes joined along each group.
fn components(n: usize, groups: impl Iterator<Item = impl Iterator<Item = usize>>) -> usize {
    let mut uf = UnionFind::<usize>::new(n);
    for mut g in groups {
        if let Some(first) = g.next() {
            for other in g {
                uf.union(first, other);
            }
        }
    }
    (0..n).filter(|&i| uf.find(i) == i).count()
}

/// Components of the boundary faces glued along shared subcells of
/// dimension `dp`.
fn boundary_components(mesh: &PolytopalMesh, faces: &[&Cell], dp: usize) -> usize {
    let mut local = std::collections::HashMap::new();
    let groups: Vec<Vec<usize>> = faces
        .iter()
        .map(|f| {
            let subs = mesh.subcells(f.id, dp).expect("face subcells");
            subs.iter()
                .map(|&s| {
                    let next = local.len();
                    *local.entry(s).or_insert(next)
                })
                .collect()
        })
        .collect();
    components(local.len(), groups.into_iter().map(|g| g.into_iter()))
}

/// Betti numbers from exact ranks of the incidence matrices, by
/// fraction-free elimination. Cubic in the mesh size.
pub fn betti_numbers_exact(mesh: &PolytopalMesh) -> Vec<usize> {
    let n = mesh.ambient_dim();
    let ranks: Vec<usize> = (1..=n)
        .into_par_iter()
        .map(|k| {
            let mut m: Vec<Vec<BigInt>> = vec![vec![BigInt::zero(); mesh.num_cells(k - 1)]; mesh.num_cells(k)];
            for (i, c) in mesh.cells(k).iter().enumerate() {
                for &(f, e) in &c.boundary {
                    m[i][f] = BigInt::from(e);
                }
            }
            exact_rank_dense(&mut m)
        })
        .collect();
    (0..=n)
        .map(|k| {
            let out = if k < n { ranks[k] } else { 0 };
            let inc = if k > 0 { ranks[k - 1] } else { 0 };
            mesh.num_cells(k) - out - inc
        })
        .collect()
}

/// Residual of the de Rham map between the lowest-degree DDR complex and
/// the cell complex: with `Φ_k` sending a component to the integral of the
/// represented constant form over the cell, returns the largest normalized
/// `‖δ^k Φ_k − Φ_{k+1} D^k‖_max`.
pub fn de_rham_map_check(spaces: &Arc<LocalSpaces>) -> Result<f64> {
    let mesh = spaces.mesh();
    let n = mesh.ambient_dim();
    let cw = ComplexMatrices::cell_complex(mesh);
    let xs: Vec<DdrSpace> = (0..=n).map(|k| DdrSpace::new(spaces.clone(), k, 0)).collect::<Result<_>>()?;
    let phi: Vec<DMatrix<f64>> = xs
        .iter()
        .map(|x| {
            let k = x.k();
            if x.dim() != mesh.num_cells(k) {
                return Err(Error::InvalidArgument("lowest-degree space must have one unknown per k-cell".into()));
            }
            let mut m = DMatrix::zeros(x.dim(), x.dim());
            for f in mesh.cell_ids(k) {
                // the potential is the constant form itself; integrate its top coefficient
                let p = x.potential(f);
                let i = x.layout().range(f).start;
                m[(f.index, i)] = p.mat[(0, 0)] * mesh.cell(f).measure;
            }
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    for k in 0..n {
        let dk = to_dense(&xs[k].global_d()?);
        let lhs = to_dense(&cw.d[k]) * &phi[k];
        let rhs = &phi[k + 1] * dk;
        let scale = lhs.amax().max(rhs.amax()).max(f64::MIN_POSITIVE);
        worst = worst.max((lhs - rhs).amax() / scale);
    }
    Ok(worst)
}

/// Exact rank over the rationals by fraction-free elimination. The input is
/// overwritten.
pub fn exact_rank_dense(m: &mut [Vec<BigInt>]) -> usize {
    let rows = m.len();
    let cols = m.first().map_or(0, |r| r.len());
    let mut rank = 0;
    let mut prev = BigInt::from(1);
    for c in 0..cols {
        let Some(p) = (rank..rows).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(rank, p);
        let pivot = m[rank][c].clone();
        for i in rank + 1..rows {
            let f = m[i][c].clone();
            for j in c..cols {
                let v = (&pivot * &m[i][j] - &f * &m[rank][j]) / &prev;
                m[i][j] = v;
            }
        }
        prev = pivot;
        rank += 1;
        if rank == rows {
            break;
        }
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{annulus_2d, cartesian_grid, distort, simplicial_grid, tilted_grid};
    use num_rational::BigRational;

    fn spaces(m: PolytopalMesh) -> Arc<LocalSpaces> {
        Arc::new(LocalSpaces::new(Arc::new(m)))
    }

    /// Rank by Gaussian elimination over exact rationals.
    fn rational_rank(m: &[Vec<i64>]) -> usize {
        let mut a: Vec<Vec<BigRational>> = m.iter().map(|r| r.iter().map(|&v| BigRational::from_integer(v.into())).collect()).collect();
        let (rows, cols) = (a.len(), a.first().map_or(0, |r| r.len()));
        let mut rank = 0;
        for c in 0..cols {
            let Some(p) = (rank..rows).find(|&i| !a[i][c].is_zero()) else { continue };
            a.swap(rank, p);
            for i in 0..rows {
                if i != rank && !a[i][c].is_zero() {
                    let f = &a[i][c] / &a[rank][c];
                    for j in 0..cols {
                        let v = &a[rank][j] * &f;
                        a[i][j] -= v;
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn fraction_free_rank_matches_rational_elimination() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let (r, c) = (rng.random_range(1..7), rng.random_range(1..7));
            let mut m: Vec<Vec<i64>> = (0..r).map(|_| (0..c).map(|_| rng.random_range(-2..3)).collect()).collect();
            if rng.random_bool(0.5) && r > 1 {
                let (a, b) = m.split_at_mut(1);
                for (x, y) in b[0].iter_mut().zip(&a[0]) {
                    *x = 2 * y;
                }
            }
            let mut big: Vec<Vec<BigInt>> = m.iter().map(|r| r.iter().map(|&v| BigInt::from(v)).collect()).collect();
            assert_eq!(exact_rank_dense(&mut big), rational_rank(&m));
        }
    }

    #[test]
    fn topological_betti_numbers_match_exact_ranks() {
        use crate::mesh::cartesian_subgrid;
        let cases = [
            (cartesian_subgrid(3, &[3, 3, 3], |p| p != [1, 1, 1]).unwrap(), vec![1, 0, 1, 0]),
            (cartesian_subgrid(3, &[3, 3, 1], |p| p[..2] != [1, 1]).unwrap(), vec![1, 1, 0, 0]),
            (cartesian_subgrid(3, &[2, 2, 2], |p| p == [0, 0, 0] || p == [1, 1, 1]).unwrap(), vec![1, 0, 0, 0]),
            (cartesian_subgrid(3, &[3, 1, 1], |p| p[0] != 1).unwrap(), vec![2, 0, 0, 0]),
            (cartesian_subgrid(2, &[3, 3], |p| p != [1, 1]).unwrap(), vec![1, 1, 0]),
            (cartesian_subgrid(2, &[2, 2], |p| p[0] == p[1]).unwrap(), vec![1, 0, 0]),
            (annulus_2d(4, 2).unwrap(), vec![1, 1, 0]),
            (tilted_grid(3, &[2, 2, 1], 0.05, 2).unwrap(), vec![1, 0, 0, 0]),
            (simplicial_grid(3, &[2, 1, 1]).unwrap(), vec![1, 0, 0, 0]),
            (cartesian_grid(1, &[4]).unwrap(), vec![1, 0]),
        ];
        for (m, b) in &cases {
            assert_eq!(&betti_numbers(m), b);
            assert_eq!(&betti_numbers_exact(m), b);
        }
    }

    #[test]
    fn betti_numbers_of_shipped_meshes() {
        assert_eq!(betti_numbers(&cartesian_grid(3, &[1, 1, 1]).unwrap()), vec![1, 0, 0, 0]);
        assert_eq!(betti_numbers(&annulus_2d(3, 1).unwrap()), vec![1, 1, 0]);
        assert_eq!(betti_numbers(&cartesian_grid(2, &[3, 3]).unwrap()), vec![1, 0, 0]);
        assert_eq!(betti_numbers(&simplicial_grid(3, &[2, 1, 1]).unwrap()), vec![1, 0, 0, 0]);
    }

    #[test]
    fn cell_complex_cohomology_is_betti() {
        for m in [annulus_2d(4, 2).unwrap(), tilted_grid(3, &[2, 1, 1], 0.1, 1).unwrap()] {
            let b = betti_numbers(&m);
            let c = ComplexMatrices::cell_complex(&m);
            assert_eq!(verify_complex(&c), 0.0);
            let rep = cohomology_dims(&c, RANK_TOL, Some(&b)).unwrap();
            assert!(rep.all_match(), "{rep}");
        }
    }

    #[test]
    fn ddr_and_vem_cohomology() {
        let cases = [
            (spaces(cartesian_grid(3, &[1, 1, 1]).unwrap()), vec![1usize, 0, 0, 0]),
            (spaces(annulus_2d(3, 1).unwrap()), vec![1, 1, 0]),
            (spaces(distort(&cartesian_grid(2, &[2, 2]).unwrap(), 0.05, 3).unwrap()), vec![1, 0, 0]),
        ];
        for (sp, b) in &cases {
            for r in 0..=2 {
                for c in [ComplexMatrices::ddr(sp, r).unwrap(), ComplexMatrices::vem(sp, r).unwrap()] {
                    let rep = cohomology_dims(&c, RANK_TOL, Some(b)).unwrap();
                    assert!(rep.all_match(), "{rep}");
                    assert!(rep.complex_residual < 1e-10);
                    assert!(rep.min_gap.is_none_or(|g| g >= 1e3), "{rep}");
                }
            }
        }
    }

    #[test]
    fn de_rham_map_intertwines() {
        for m in [cartesian_grid(3, &[1, 1, 1]).unwrap(), annulus_2d(3, 1).unwrap(), distort(&cartesian_grid(2, &[3, 2]).unwrap(), 0.05, 2).unwrap()] {
            let res = de_rham_map_check(&spaces(m)).unwrap();
            assert!(res < 1e-10, "{res}");
        }
    }

    #[test]
    fn rank_gap_reporting() {
        let info = rank_from_singular_values(&[3.0, 1.0, 1e-12], 1e-8);
        assert_eq!(info.rank, 2);
        assert!((info.gap.unwrap() - 1e12).abs() < 1.0);
        assert!(!info.ambiguous);
        let info = rank_from_singular_values(&[1.0, 5e-8, 0.0], 1e-8);
        assert!(info.ambiguous);
        let info = rank_from_singular_values(&[2.0, 1.0], 1e-8);
        assert_eq!((info.rank, info.gap), (2, None));
        let json = serde_json::to_string(&info).unwrap();
        assert!(json.contains("\"rank\":2"));
    }
}
