use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::CellRecord;
use super::*;
use crate::poly::{full_dim, PolyForm};
use crate::quadrature::integrate_wedge;

fn v(c: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(c)
}

fn unit_cube() -> PolytopalMesh {
    cartesian_grid(3, &[1, 1, 1]).unwrap()
}

fn sample_meshes() -> Vec<(&'static str, PolytopalMesh)> {
    vec![
        ("segment grid", cartesian_grid(1, &[3]).unwrap()),
        ("square grid", cartesian_grid(2, &[3, 2]).unwrap()),
        ("distorted quads", distort(&cartesian_grid(2, &[4, 4]).unwrap(), 0.05, 3).unwrap()),
        ("triangles", simplicial_grid(2, &[2, 3]).unwrap()),
        ("annulus", annulus_2d(4, 2).unwrap()),
        ("cube grid", cartesian_grid(3, &[2, 1, 2]).unwrap()),
        ("tilted hexes", tilted_grid(3, &[2, 2, 2], 0.08, 7).unwrap()),
        ("tetrahedra", simplicial_grid(3, &[1, 2, 1]).unwrap()),
        ("distorted tetrahedra", distort(&simplicial_grid(3, &[2, 2, 2]).unwrap(), 0.04, 1).unwrap()),
    ]
}

#[test]
fn single_cube_counts() {
    let m = unit_cube();
    assert_eq!([m.num_cells(0), m.num_cells(1), m.num_cells(2), m.num_cells(3)], [8, 12, 6, 1]);
    assert_eq!(m.euler_characteristic(), 1);
    assert!((m.cells(3)[0].measure - 1.0).abs() < 1e-14);
}

#[test]
fn triangle_counts() {
    let verts = vec![v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])];
    let m = PolytopalMesh::from_topology(2, verts, vec![vec![vec![0, 1], vec![1, 2], vec![2, 0]], vec![vec![0, 1, 2]]]).unwrap();
    assert_eq!(m.num_cells(1), 3);
    assert!((m.cells(2)[0].measure - 0.5).abs() < 1e-15);
    assert_eq!(m.cells(2)[0].chunks.len(), 3);
    // counterclockwise loop: all edges positively oriented
    assert!(m.cells(2)[0].boundary.iter().all(|b| b.1 == 1));
}

#[test]
fn square_grid_counts_and_euler_characteristics() {
    let m = cartesian_grid(2, &[2, 2]).unwrap();
    assert_eq!([m.num_cells(0), m.num_cells(1), m.num_cells(2)], [9, 12, 4]);
    assert_eq!(m.euler_characteristic(), 1);
    assert_eq!(cartesian_grid(1, &[5]).unwrap().euler_characteristic(), 1);
    assert_eq!(cartesian_grid(3, &[2, 3, 1]).unwrap().euler_characteristic(), 1);
    assert_eq!(simplicial_grid(3, &[2, 2, 2]).unwrap().euler_characteristic(), 1);
    let a = annulus_2d(3, 1).unwrap();
    assert_eq!(a.euler_characteristic(), 0);
    assert_eq!(a.num_cells(2), 8);
}

#[test]
fn segment_orientation() {
    let m = cartesian_grid(2, &[1, 1]).unwrap();
    for e in m.cells(1) {
        let tail = e.boundary.iter().find(|b| b.1 < 0).unwrap().0;
        let head = e.boundary.iter().find(|b| b.1 > 0).unwrap().0;
        let dir = &m.vertices()[head] - &m.vertices()[tail];
        assert!((dir.normalize() - e.frame.column(0)).norm() < 1e-15);
        assert_eq!(m.relative_orientation(e.id, CellId::new(0, head)).unwrap(), 1);
    }
    assert!(matches!(m.relative_orientation(CellId::new(2, 0), CellId::new(0, 0)), Err(Error::NotASubcell { .. })));
}

#[test]
fn chunk_counts() {
    let tri = simplicial_grid(2, &[1, 1]).unwrap();
    assert!(tri.cells(2).iter().all(|c| c.chunks.len() == 3));
    let quad = cartesian_grid(2, &[1, 1]).unwrap();
    assert_eq!(quad.cells(2)[0].chunks.len(), 4);
    assert_eq!(unit_cube().cells(3)[0].chunks.len(), 24);
    let tet = simplicial_grid(3, &[1, 1, 1]).unwrap();
    assert!(tet.cells(3).iter().all(|c| c.chunks.len() == 4));
}

/// Signed area of a 2-cell from its oriented edges (shoelace form of the
/// divergence theorem). Works for faces in 3D too, as a vector area.
fn vector_area(m: &PolytopalMesh, f: &Cell) -> DVector<f64> {
    let n = m.ambient_dim();
    let mut s = DVector::zeros(3);
    for &(e, eps) in &f.boundary {
        let b = &m.cells(1)[e].boundary;
        let t = b.iter().find(|x| x.1 < 0).unwrap().0;
        let h = b.iter().find(|x| x.1 > 0).unwrap().0;
        let lift = |p: &DVector<f64>| nalgebra::Vector3::from_fn(|i, _| if i < n { p[i] } else { 0.0 });
        let c = lift(&m.vertices()[t]).cross(&lift(&m.vertices()[h]));
        s += DVector::from_column_slice(c.as_slice()) * (0.5 * eps as f64);
    }
    s
}

#[test]
fn measures_match_divergence_theorem_oracles() {
    for (name, m) in sample_meshes() {
        let n = m.ambient_dim();
        for e in m.cells(1) {
            let (a, b) = (e.vertices[0], e.vertices[1]);
            assert!(((&m.vertices()[a] - &m.vertices()[b]).norm() - e.measure).abs() < 1e-14, "{name}");
        }
        if n >= 2 {
            for f in m.cells(2) {
                let s = vector_area(&m, f);
                // the vector area points along the frame normal with length |f|
                let normal = if n == 2 {
                    DVector::from_column_slice(&[0.0, 0.0, 1.0])
                } else {
                    let (q1, q2) = (f.frame.column(0), f.frame.column(1));
                    let c = nalgebra::Vector3::new(q1[0], q1[1], q1[2]).cross(&nalgebra::Vector3::new(q2[0], q2[1], q2[2]));
                    DVector::from_column_slice(c.as_slice())
                };
                assert!((s.dot(&normal) - f.measure).abs() < 1e-13, "{name}: {} area {} vs {}", f.id, s.dot(&normal), f.measure);
            }
        }
        if n == 3 {
            for c in m.cells(3) {
                let mut vol = 0.0;
                for &(g, eps) in &c.boundary {
                    let f = &m.cells(2)[g];
                    let s = vector_area(&m, f);
                    let x = &m.vertices()[f.vertices[0]];
                    vol += eps as f64 * s.dot(x) / 3.0;
                }
                // `s` is oriented by the face frame and `eps` converts to the outward normal
                assert!((vol - c.measure).abs() < 1e-13, "{name}: {} volume {vol} vs {}", c.id, c.measure);
            }
        }
        let total: f64 = m.cells(n).iter().map(|c| c.measure).sum();
        let expected = if name == "annulus" { 0.75 } else { 1.0 };
        assert!((total - expected).abs() < 1e-12, "{name}: total measure {total}");
    }
}

#[test]
fn boundary_of_boundary_and_orientation_consistency() {
    for (name, m) in sample_meshes() {
        m.check_boundary_of_boundary().unwrap_or_else(|e| panic!("{name}: {e}"));
        // each interior facet is seen with opposite signs from its two cofaces
        let n = m.ambient_dim();
        for g in m.cell_ids(n - 1) {
            let co = m.cofaces(g);
            assert!(co.len() == 1 || co.len() == 2, "{name}");
            if co.len() == 2 {
                let s0 = m.relative_orientation(CellId::new(n, co[0]), g).unwrap();
                let s1 = m.relative_orientation(CellId::new(n, co[1]), g).unwrap();
                assert_eq!(s0, -s1, "{name}: {g}");
            }
        }
    }
}

/// `∫_f dω = Σ_{f′} ε_{ff′} ∫_{f′} tr ω` on every cell of every sample mesh.
#[test]
fn stokes_formula_on_every_cell() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (name, m) in sample_meshes() {
        for d in 1..=m.ambient_dim() {
            for f in m.cell_ids(d) {
                let r = 3;
                let c = DVector::from_fn(full_dim(d, r, d - 1), |_, _| rng.random_range(-1.0..1.0));
                let w = PolyForm::from_coeffs(d, d - 1, r as usize, m.cell(f).scale(), c);
                let one = PolyForm::from_coeffs(d, 0, 0, m.cell(f).scale(), DVector::from_element(1, 1.0));
                let lhs = integrate_wedge(&m, f, &w.exterior_derivative(), &one).unwrap();
                let mut rhs = 0.0;
                for &(g, eps) in &m.cell(f).boundary {
                    let gid = CellId::new(d - 1, g);
                    let map = m.chart_map(f, gid).unwrap();
                    let tr = w.pullback_affine(&map.a, &map.b, &map.jac, m.cell(gid).scale());
                    let one_g = PolyForm::from_coeffs(d - 1, 0, 0, m.cell(gid).scale(), DVector::from_element(1, 1.0));
                    rhs += eps as f64 * integrate_wedge(&m, gid, &tr, &one_g).unwrap();
                }
                let scale = m.cell(f).measure / m.cell(f).scale();
                assert!((lhs - rhs).abs() < 1e-12 * scale.max(1.0), "{name}: {f}: {lhs} vs {rhs}");
            }
        }
    }
}

#[test]
fn save_load_round_trip() {
    let dir = std::env::temp_dir().join(format!("ddr-mesh-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    for (name, m) in sample_meshes() {
        let path = dir.join("mesh.json");
        save_mesh(&m, &path).unwrap();
        let back = load_mesh(&path).unwrap();
        for d in 0..=m.ambient_dim() {
            assert_eq!(m.num_cells(d), back.num_cells(d), "{name}");
            for (a, b) in m.cells(d).iter().zip(back.cells(d)) {
                assert_eq!(a.boundary, b.boundary, "{name}");
                assert!((&a.frame - &b.frame).amax() < 1e-15, "{name}: {}", a.id);
                assert!((a.measure - b.measure).abs() < 1e-15);
            }
        }
    }
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn broken_sign_is_reported() {
    let m = cartesian_grid(2, &[2, 1]).unwrap();
    let mut file = mesh_to_json(&m);
    let rec = file.cells.iter_mut().find(|c| c.dim == 2).unwrap();
    rec.boundary[1].1 = -rec.boundary[1].1;
    match mesh_from_json(&file) {
        Err(Error::Orientation { cell, sub, .. }) => {
            assert_eq!(cell, CellId::new(2, 0));
            assert_eq!(sub.dim, 1);
        }
        other => panic!("expected an orientation error, got {other:?}"),
    }
    // flipping every sign of a cell is a consistent reorientation
    let mut file = mesh_to_json(&m);
    let rec = file.cells.iter_mut().find(|c| c.dim == 2).unwrap();
    for b in rec.boundary.iter_mut() {
        b.1 = -b.1;
    }
    let flipped = mesh_from_json(&file).unwrap();
    flipped.check_boundary_of_boundary().unwrap();
}

#[test]
fn dangling_and_malformed_input() {
    let m = cartesian_grid(2, &[1, 1]).unwrap();
    let mut file = mesh_to_json(&m);
    file.vertices.push(vec![2.0, 2.0]);
    file.cells.insert(4, CellRecord { dim: 1, boundary: vec![(0, -1), (4, 1)] });
    assert!(matches!(mesh_from_json(&file), Err(Error::DanglingCell(id)) if id == CellId::new(1, 4)));
    let mut file = mesh_to_json(&m);
    file.version = "other".into();
    assert!(matches!(mesh_from_json(&file), Err(Error::Schema(_))));
    let mut file = mesh_to_json(&m);
    file.cells[0].boundary[0].1 = 2;
    assert!(matches!(mesh_from_json(&file), Err(Error::Schema(_))));
    let mut file = mesh_to_json(&m);
    file.cells.last_mut().unwrap().boundary.push((17, 1));
    assert!(matches!(mesh_from_json(&file), Err(Error::Schema(_))));
}

#[test]
fn nonconvex_star_shaped_cell() {
    // notched square, star-shaped with respect to its vertex average
    let pts = [[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [2.0, 3.0], [0.0, 4.0]];
    let verts = pts.iter().map(|p| v(p)).collect();
    let edges = (0..5).map(|i| vec![i, (i + 1) % 5]).collect();
    let m = PolytopalMesh::from_topology(2, verts, vec![edges, vec![(0..5).collect()]]).unwrap();
    assert!((m.cells(2)[0].measure - 14.0).abs() < 1e-13);
    // the classic L with the average on the reentrant corner is rejected
    let pts = [[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0], [1.0, 2.0], [0.0, 2.0]];
    let verts = pts.iter().map(|p| v(p)).collect();
    let edges = (0..6).map(|i| vec![i, (i + 1) % 6]).collect();
    assert!(matches!(PolytopalMesh::from_topology(2, verts, vec![edges, vec![(0..6).collect()]]), Err(Error::Degenerate { .. })));
}

#[test]
fn nonplanar_face_is_rejected() {
    let mut m = unit_cube().vertices().to_vec();
    let top = m.iter().position(|p| p[0] == 1.0 && p[1] == 1.0 && p[2] == 1.0).unwrap();
    m[top][2] = 1.2;
    assert!(matches!(unit_cube().with_vertices(m), Err(Error::Degenerate { .. })));
    assert!(distort(&unit_cube(), 0.01, 0).is_err());
}

fn rotation(seed: u64, n: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    if q.determinant() < 0.0 {
        let mut q = q;
        q.column_mut(0).neg_mut();
        q
    } else {
        q
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn rigid_motions_preserve_orientation_and_scale_measures(seed in any::<u64>(), s in 0.2f64..5.0, n in 2usize..4) {
        let m = if n == 2 { distort(&cartesian_grid(2, &[3, 2]).unwrap(), 0.05, seed).unwrap() } else { tilted_grid(3, &[2, 1, 2], 0.05, seed).unwrap() };
        let q = rotation(seed, n);
        let shift = DVector::from_element(n, 0.3);
        let moved = m.vertices().iter().map(|x| &q * x * s + &shift).collect();
        let m2 = m.with_vertices(moved).unwrap();
        for d in 1..=n {
            for (a, b) in m.cells(d).iter().zip(m2.cells(d)) {
                prop_assert_eq!(&a.boundary, &b.boundary);
                prop_assert!((b.measure - a.measure * s.powi(d as i32)).abs() < 1e-11 * b.measure.max(1.0));
                prop_assert!((b.diameter - a.diameter * s).abs() < 1e-12 * b.diameter.max(1.0));
            }
        }
    }
}
