use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ddr_cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddr-cli")).args(args).current_dir(dir).output().expect("spawn ddr-cli")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit status")
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn check_passes_on_the_default_cube() {
    let dir = tempfile::tempdir().unwrap();
    let o = ddr_cli(&["check", "--gen", "cartesian:1x1x1", "--r", "1", "--out", "out"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let rep = report(&dir.path().join("out/report.json"));
    assert_eq!(rep["passed"], true);
    assert_eq!(rep["checks"].as_array().unwrap().len(), 10);
    assert_eq!(rep["config"]["r"], 1);
    assert_eq!(rep["library_version"], "0.1.0");
}

#[test]
fn flipped_orientation_sign_fails_the_check() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&ddr_cli(&["mesh", "--gen", "cartesian:2x2", "--out", "m"], dir.path())), 0);
    let path = dir.path().join("m/mesh.json");
    let mut mesh: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let face = mesh["cells"].as_array_mut().unwrap().iter_mut().find(|c| c["dim"] == 2).unwrap();
    let sign = &mut face["boundary"][0][1];
    *sign = Value::from(-sign.as_i64().unwrap());
    fs::write(&path, mesh.to_string()).unwrap();

    let o = ddr_cli(&["check", "--mesh", "m/mesh.json", "--out", "out"], dir.path());
    assert_eq!(code(&o), 2);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL") && stdout.contains("orientation"), "{stdout}");
    let rep = report(&dir.path().join("out/report.json"));
    assert_eq!(rep["passed"], false);
    assert_eq!(rep["checks"][0]["name"], "orientation");
}

#[test]
fn configuration_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["check", "--r", "6"][..],
        &["check", "--tol", "0"],
        &["check", "--gen", "sphere:2"],
        &["check", "--unknown-flag"],
        &["check", "--mesh", "missing.json"],
        &["hodge", "--gen", "annulus:3:1", "--refinements", "1"],
        &["hodge", "--gen", "cartesian:2x2", "--k", "3"],
    ] {
        assert_eq!(code(&ddr_cli(args, dir.path())), 3, "{args:?}");
    }
}

#[test]
fn mesh_file_round_trips_and_cohomology_matches_on_the_annulus() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&ddr_cli(&["mesh", "--gen", "annulus:3:1", "--out", "m"], dir.path())), 0);
    let mesh = ddr::mesh::load_mesh(dir.path().join("m/mesh.json")).unwrap();
    let again = ddr::mesh::annulus_2d(3, 1).unwrap();
    assert_eq!(ddr::mesh::mesh_to_json(&mesh), ddr::mesh::mesh_to_json(&again));

    let o = ddr_cli(&["cohomology", "--mesh", "m/mesh.json", "--r", "1", "--complex", "both", "--out", "c"], dir.path());
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.matches("dims (1,1,0)").count(), 2, "{stdout}");
    assert_eq!(stdout.matches("match=true").count(), 2, "{stdout}");
    assert_eq!(report(&dir.path().join("c/report.json"))["all_match"], true);
}

#[test]
fn hodge_study_writes_csv_and_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let o = ddr_cli(&["hodge", "--gen", "cartesian:4x4", "--k", "1", "--r", "0", "--refinements", "3", "--out", "h"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv::Reader::from_path(dir.path().join("h/errors.csv")).unwrap();
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header.first().map(String::as_str), Some("mesh_h"));
    assert_eq!(header.last().map(String::as_str), Some("solve_time_s"));
    assert_eq!(header.len(), 11);
    assert_eq!(rd.records().count(), 3);
    let rep = report(&dir.path().join("h/report.json"));
    let slope = rep["studies"][0]["total_slope"].as_f64().unwrap();
    assert!((0.75..=1.25).contains(&slope), "{slope}");
    assert!(String::from_utf8_lossy(&o.stdout).contains("target 1"));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["check", "--gen", "distorted:cartesian:3x3:0.05", "--seed", "11", "--r", "1"][..],
        &["hodge", "--gen", "cartesian:2x2", "--k", "0,1", "--refinements", "2"],
    ] {
        let mut texts = Vec::new();
        for out in ["a", "b"] {
            let mut full = args.to_vec();
            full.extend(["--out", out]);
            assert_eq!(code(&ddr_cli(&full, dir.path())), 0);
            let text = fs::read_to_string(dir.path().join(out).join("report.json")).unwrap();
            texts.push(text.replace(&format!("\"out\": \"{out}\""), "\"out\": \"\""));
        }
        assert_eq!(texts[0], texts[1], "{args:?}");
    }
    assert!(dir.path().join("a/errors_k0.csv").exists() && dir.path().join("a/errors_k1.csv").exists());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.json"),
        r#"{"command": "check", "gen": "simplicial:1x1", "r": 0, "seed": 4, "complex": "vem", "tol": {"identity": 1e-9}}"#,
    )
    .unwrap();
    assert_eq!(code(&ddr_cli(&["check", "--config", "run.json", "--r", "1", "--out", "o"], dir.path())), 0);
    let rep = report(&dir.path().join("o/report.json"));
    let cfg = &rep["config"];
    assert_eq!((cfg["r"].as_u64(), cfg["seed"].as_u64(), cfg["gen"].as_str()), (Some(1), Some(4), Some("simplicial:1x1")));
    assert_eq!(cfg["tol"]["identity"], 1e-9);
    assert!(rep["checks"].as_array().unwrap().iter().all(|c| !c["name"].as_str().unwrap().starts_with("ddr.")));

    // a report's config section is itself a valid config file
    fs::write(dir.path().join("again.json"), cfg.to_string()).unwrap();
    assert_eq!(code(&ddr_cli(&["check", "--config", "again.json"], dir.path())), 0);
    assert_eq!(code(&ddr_cli(&["hodge", "--config", "run.json"], dir.path())), 3);
}
