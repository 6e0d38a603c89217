//! Property suites run against a single mesh: orientation and Stokes,
//! polynomial consistency, commutation, complex property, potential link
//! and L² product for DDR, and consistency plus complex property for VEM.
//!
//! Each check reports a residual and the threshold it was held to. Library
//! errors inside a check (an ill-conditioned local problem, say) are turned
//! into a failed check rather than aborting the suite.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohomology::{verify_complex, ComplexMatrices, RANK_TOL};
use crate::ddr::{DdrSpace, Stabilization};
use crate::error::Result;
use crate::fields::{cell_polynomial, global_polynomial, TrigForm};
use crate::mesh::{CellId, PolytopalMesh};
use crate::poly::{full_dim, PolyForm};
use crate::quadrature::integrate_wedge;
use crate::sparse::{mat_vec, max_abs};
use crate::spaces::LocalSpaces;
use crate::vem::VemSpace;

/// Which discrete complexes a suite covers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexes {
    Ddr,
    Vem,
    #[default]
    Both,
}

impl Complexes {
    pub fn ddr(self) -> bool {
        self != Complexes::Vem
    }

    pub fn vem(self) -> bool {
        self != Complexes::Ddr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Algebraic identities that hold up to roundoff.
    pub identity: f64,
    /// Commutation with interpolation, limited by quadrature of smooth fields.
    pub commutation: f64,
    /// Relative singular-value cutoff for numerical ranks.
    pub rank: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { identity: 1e-10, commutation: 1e-8, rank: RANK_TOL }
    }
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub r: usize,
    pub tol: Tolerances,
    /// Quadrature degree for smooth fields; 18 when unset, which keeps the
    /// commutation residual at roundoff on tetrahedra.
    pub quad_degree: Option<usize>,
    pub seed: u64,
    pub complexes: Complexes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub residual: f64,
    pub threshold: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckResult {
    fn new(name: &str, outcome: Result<f64>, threshold: f64) -> Self {
        match outcome {
            Ok(residual) => CheckResult { name: name.into(), residual, threshold, passed: residual <= threshold, detail: None },
            Err(e) => CheckResult { name: name.into(), residual: f64::NAN, threshold, passed: false, detail: Some(e.to_string()) },
        }
    }
}

/// Runs every suite selected by `opts` on the mesh behind `spaces`.
pub fn run_checks(spaces: &Arc<LocalSpaces>, opts: &CheckOptions) -> Vec<CheckResult> {
    let mesh = spaces.mesh();
    let tol = opts.tol;
    let quad = opts.quad_degree.unwrap_or(18);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = vec![
        CheckResult::new("orientation", mesh.check_boundary_of_boundary().map(|_| 0.0), 0.0),
        CheckResult::new("stokes", stokes_residual(mesh, opts.r + 1, &mut rng), tol.identity),
    ];
    if opts.complexes.ddr() {
        out.push(CheckResult::new("ddr.consistency", ddr_consistency(spaces, opts.r, &mut rng), tol.identity));
        out.push(CheckResult::new("ddr.commutation", ddr_commutation(spaces, opts.r, quad), tol.commutation));
        out.push(CheckResult::new("ddr.complex", ComplexMatrices::ddr(spaces, opts.r).map(|c| verify_complex(&c)), tol.identity));
        out.push(CheckResult::new("ddr.potential_link", potential_link(spaces, opts.r, &mut rng), tol.identity));
        out.push(CheckResult::new("ddr.l2_product", l2_product(spaces, opts.r, &mut rng), tol.identity));
    }
    if opts.complexes.vem() {
        out.push(CheckResult::new("vem.consistency", vem_consistency(spaces, opts.r, &mut rng), tol.identity));
        out.push(CheckResult::new("vem.commutation", vem_commutation(spaces, opts.r, quad), tol.commutation));
        out.push(CheckResult::new("vem.complex", ComplexMatrices::vem(spaces, opts.r).map(|c| verify_complex(&c)), tol.identity));
    }
    out
}

fn random_poly(rng: &mut ChaCha8Rng, d: usize, l: usize, r: usize, h: f64) -> PolyForm {
    let c = DVector::from_fn(full_dim(d, r as i64, l), |_, _| rng.random_range(-1.0..1.0));
    PolyForm::from_coeffs(d, l, r, h, c)
}

/// Largest relative residual of the integration-by-parts formula over
/// random polynomial pairs of degree `≤ max_degree` on every cell.
pub fn stokes_residual(mesh: &PolytopalMesh, max_degree: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst = 0.0f64;
    for d in 1..=mesh.ambient_dim() {
        for f in mesh.cell_ids(d) {
            let h = mesh.cell(f).scale();
            for _ in 0..4 {
                let l = rng.random_range(0..d);
                let (ra, rb) = (rng.random_range(0..=max_degree), rng.random_range(0..=max_degree));
                let w = random_poly(rng, d, l, ra, h);
                let a = random_poly(rng, d, d - l - 1, rb, h);
                let lhs = integrate_wedge(mesh, f, &w.exterior_derivative(), &a)?;
                let sign = if l % 2 == 0 { -1.0 } else { 1.0 };
                let vol = sign * integrate_wedge(mesh, f, &w, &a.exterior_derivative())?;
                let mut scale = lhs.abs() + vol.abs();
                let mut bnd = 0.0;
                for &(g, eps) in &mesh.cell(f).boundary {
                    let gid = CellId::new(d - 1, g);
                    let map = mesh.chart_map(f, gid)?;
                    let hg = mesh.cell(gid).scale();
                    let tw = w.pullback_affine(&map.a, &map.b, &map.jac, hg);
                    let ta = a.pullback_affine(&map.a, &map.b, &map.jac, hg);
                    let t = f64::from(eps) * integrate_wedge(mesh, gid, &tw, &ta)?;
                    scale += t.abs();
                    bnd += t;
                }
                worst = worst.max((lhs - vol - bnd).abs() / scale.max(f64::MIN_POSITIVE));
            }
        }
    }
    Ok(worst)
}

/// Coefficient-wise distance between `got` and `exact`, the latter possibly
/// stored at a higher polynomial degree with vanishing top coefficients.
fn coeff_distance(got: &DVector<f64>, exact: &DVector<f64>) -> f64 {
    let head = (0..got.len()).map(|i| (got[i] - exact.get(i).copied().unwrap_or(0.0)).abs()).fold(0.0, f64::max);
    let tail = exact.iter().skip(got.len()).fold(0.0f64, |m, v| m.max(v.abs()));
    head.max(tail)
}

/// Potentials reproduce degree-`r` polynomials and local derivatives are
/// exact on trimmed degree-`r+1` polynomials, on every cell.
fn ddr_consistency(sp: &Arc<LocalSpaces>, r: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mesh = sp.mesh();
    let n = mesh.ambient_dim();
    let mut worst = 0.0f64;
    for k in 0..=n {
        let x = DdrSpace::new(sp.clone(), k, r)?;
        for d in k..=n {
            for f in mesh.cell_ids(d) {
                let h = mesh.cell(f).scale();
                let p = random_poly(rng, d, k, r, h);
                let w = x.interpolate_closure(&cell_polynomial(mesh, f, &p), f)?;
                worst = worst.max((x.potential(f).apply(&w) - p.coeffs()).amax());
                if d > k {
                    let t = sp.trimmed_space(f, r + 1, k)?;
                    let c = &t.columns * DVector::from_fn(t.dim(), |_, _| rng.random_range(-1.0..1.0));
                    let p = PolyForm::from_coeffs(d, k, r + 1, h, c.clone());
                    let w = x.interpolate_closure(&cell_polynomial(mesh, f, &p), f)?;
                    let dw = x.local_derivative(f).expect("derivative on cells above degree").apply(&w);
                    worst = worst.max(coeff_distance(&dw, p.exterior_derivative().coeffs()) / (1.0 + c.amax()));
                }
            }
        }
    }
    Ok(worst)
}

fn ddr_commutation(sp: &Arc<LocalSpaces>, r: usize, quad: usize) -> Result<f64> {
    let n = sp.mesh().ambient_dim();
    let mut worst = 0.0f64;
    for k in 0..n {
        let t = TrigForm::new(n, k, 1).field();
        let x = DdrSpace::new(sp.clone(), k, r)?.with_quad_degree(quad)?;
        let y = DdrSpace::new(sp.clone(), k + 1, r)?.with_quad_degree(quad)?;
        let lhs = x.apply_d(&x.interpolate(&t)?)?;
        let rhs = y.interpolate(t.derivative().expect("trigonometric fields carry d"))?;
        worst = worst.max((lhs - &rhs).amax() / (1.0 + rhs.amax()));
    }
    Ok(worst)
}

fn vem_commutation(sp: &Arc<LocalSpaces>, r: usize, quad: usize) -> Result<f64> {
    let n = sp.mesh().ambient_dim();
    let mut worst = 0.0f64;
    for k in 0..n {
        let t = TrigForm::new(n, k, 1).field();
        let x = VemSpace::new(sp.clone(), k, r)?.with_quad_degree(quad)?;
        let y = VemSpace::new(sp.clone(), k + 1, r)?.with_quad_degree(quad)?;
        let lhs = x.apply_d(&x.interpolate(&t)?)?;
        let rhs = y.interpolate(t.derivative().expect("trigonometric fields carry d"))?;
        worst = worst.max((lhs - &rhs).amax() / (1.0 + rhs.amax()));
    }
    Ok(worst)
}

/// The local derivative on a cell equals the potential of the global
/// derivative, for random discrete forms.
fn potential_link(sp: &Arc<LocalSpaces>, r: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mesh = sp.mesh();
    let n = mesh.ambient_dim();
    let mut worst = 0.0f64;
    for k in 0..n {
        let x = DdrSpace::new(sp.clone(), k, r)?;
        let y = DdrSpace::new(sp.clone(), k + 1, r)?;
        let w = DVector::from_fn(x.dim(), |_, _| rng.random_range(-1.0..1.0));
        let dw = x.apply_d(&w)?;
        for d in k + 1..=n {
            for f in mesh.cell_ids(d) {
                let a = y.potential(f).apply(&dw);
                let b = x.local_derivative(f).expect("derivative on cells above degree").apply(&w);
                worst = worst.max((a - &b).amax() / (1.0 + b.amax()));
            }
        }
    }
    Ok(worst)
}

/// The discrete L² product is symmetric and its stabilization vanishes on
/// interpolants of global polynomials of degree `r`.
fn l2_product(sp: &Arc<LocalSpaces>, r: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = sp.mesh().ambient_dim();
    let mut worst = 0.0f64;
    for k in 0..=n {
        let x = DdrSpace::new(sp.clone(), k, r)?;
        let m = x.mass_matrix(Stabilization::TraceJump)?;
        let mt = m.transpose();
        let asym = m.triplet_iter().map(|(i, j, v)| (v - mt.get_entry(i, j).map_or(0.0, |e| e.into_value())).abs()).fold(0.0, f64::max);
        worst = worst.max(asym / max_abs(&m).max(f64::MIN_POSITIVE));
        let p = global_polynomial(&random_poly(rng, n, k, r, 1.0));
        let w = x.interpolate(&p)?;
        worst = worst.max(x.stab_seminorm(&w, Stabilization::TraceJump)? / (1.0 + w.amax()));
        // the product reads the assembled matrix consistently
        let mu = DVector::from_fn(x.dim(), |_, _| rng.random_range(-1.0..1.0));
        let a = x.l2_product(&w, &mu, Stabilization::TraceJump)?;
        let b = w.dot(&mat_vec(&m, &mu));
        worst = worst.max((a - b).abs() / (1.0 + a.abs()));
    }
    Ok(worst)
}

/// VEM potentials reproduce trimmed degree-`r+1` polynomials, and the
/// discrete derivative reproduces their exterior derivative.
fn vem_consistency(sp: &Arc<LocalSpaces>, r: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mesh = sp.mesh();
    let n = mesh.ambient_dim();
    let vs: Vec<VemSpace> = (0..=n).map(|k| VemSpace::new(sp.clone(), k, r)).collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    for k in 0..=n {
        for d in k..=n {
            for f in mesh.cell_ids(d) {
                let h = mesh.cell(f).scale();
                let t = sp.trimmed_space(f, r + 1, k)?;
                let c = &t.columns * DVector::from_fn(t.dim(), |_, _| rng.random_range(-1.0..1.0));
                let p = PolyForm::from_coeffs(d, k, r + 1, h, c.clone());
                let w = vs[k].interpolate_closure(&cell_polynomial(mesh, f, &p), f)?;
                worst = worst.max((vs[k].potential(f).apply(&w) - &c).amax() / (1.0 + c.amax()));
                if d == k {
                    continue;
                }
                let got = if d == k + 1 {
                    vs[k].local_derivative(f).expect("derivative on cells one dimension up").apply(&w)
                } else {
                    let dw = vs[k].apply_d(&w)?;
                    vs[k].derivative_potential(&vs[k + 1], &dw, f)?
                };
                worst = worst.max(coeff_distance(&got, p.exterior_derivative().coeffs()) / (1.0 + c.amax()));
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{cartesian_grid, simplicial_grid};

    fn opts(r: usize) -> CheckOptions {
        CheckOptions { r, tol: Tolerances::default(), quad_degree: None, seed: 5, complexes: Complexes::Both }
    }

    #[test]
    fn suites_pass_on_generated_meshes() {
        for m in [cartesian_grid(3, &[1, 1, 1]).unwrap(), simplicial_grid(2, &[2, 1]).unwrap()] {
            let sp = Arc::new(LocalSpaces::new(Arc::new(m)));
            let res = run_checks(&sp, &opts(1));
            assert_eq!(res.len(), 10);
            for c in &res {
                assert!(c.passed, "{c:?}");
            }
        }
    }

    #[test]
    fn complex_selection_and_failure_reporting() {
        let sp = Arc::new(LocalSpaces::new(Arc::new(cartesian_grid(2, &[1, 1]).unwrap())));
        let mut o = opts(0);
        o.complexes = Complexes::Vem;
        let names: Vec<String> = run_checks(&sp, &o).into_iter().map(|c| c.name).collect();
        assert!(names.iter().all(|n| !n.starts_with("ddr.")));
        let bad = CheckResult::new("x", Err(crate::Error::Solver("boom".into())), 1.0);
        assert!(!bad.passed && bad.residual.is_nan() && bad.detail.as_deref() == Some("linear solver failure: boom"));
    }
}
