use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use ddr::checks::{run_checks, CheckOptions, CheckResult};
use ddr::cohomology::{betti_numbers, cohomology_dims, ComplexMatrices};
use ddr::ddr::Stabilization;
use ddr::hodge::{convergence_study, ConvergenceReport, ErrorRecord, Manufactured, StudyOptions};
use ddr::mesh::{load_mesh, save_mesh, PolytopalMesh};
use ddr::spaces::LocalSpaces;
use ddr::Error;
use serde::Serialize;

use crate::config::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;

/// Why a command stopped early; each maps to an exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or unusable input, exit 3.
    Config(anyhow::Error),
    /// The mesh itself violates a structural property, exit 2.
    InvalidMesh(Error),
    /// Anything else, exit 1.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::InvalidMesh(_) => EXIT_CHECK_FAILED,
            Failure::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e:#}"),
            Failure::InvalidMesh(e) => write!(f, "invalid mesh: {e}"),
            Failure::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

type Outcome = Result<u8, Failure>;

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn is_structural(e: &Error) -> bool {
    matches!(
        e,
        Error::Orientation { .. }
            | Error::InvalidMesh(_)
            | Error::DanglingCell(_)
            | Error::Degenerate { .. }
            | Error::NotASubcell { .. }
            | Error::NonOrthonormalFrame(_)
    )
}

/// Meshes of the run: the file, or the generator refined `refinements − 1` times.
fn meshes(cfg: &RunConfig) -> Result<Vec<Arc<PolytopalMesh>>, Failure> {
    let classify = |e: Error| if is_structural(&e) { Failure::InvalidMesh(e) } else { Failure::Config(e.into()) };
    if let Some(path) = &cfg.mesh {
        let m = load_mesh(path).map_err(|e| match e {
            Error::Io(io) => Failure::Config(anyhow::Error::new(io).context(format!("reading {}", path.display()))),
            e => classify(e),
        })?;
        return Ok(vec![Arc::new(m)]);
    }
    let spec = cfg.gen_spec().expect("resolved configs name a mesh source");
    (0..cfg.refinements as u32).map(|l| spec.refined(l).build(cfg.seed).map(Arc::new).map_err(classify)).collect()
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    tool: &'static str,
    tool_version: &'static str,
    library_version: &'static str,
    config: &'a RunConfig,
    #[serde(flatten)]
    result: T,
}

#[derive(Serialize)]
struct MeshSummary {
    ambient_dim: usize,
    cells: Vec<usize>,
    h: f64,
    betti: Vec<usize>,
}

impl MeshSummary {
    fn of(m: &PolytopalMesh) -> Self {
        MeshSummary {
            ambient_dim: m.ambient_dim(),
            cells: (0..=m.ambient_dim()).map(|d| m.num_cells(d)).collect(),
            h: m.h(),
            betti: betti_numbers(m),
        }
    }
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(Failure::Config)
}

fn write_report<T: Serialize>(cfg: &RunConfig, result: T) -> Result<PathBuf, Failure> {
    let report = Report { tool: "ddr-cli", tool_version: env!("CARGO_PKG_VERSION"), library_version: ddr::VERSION, config: cfg, result };
    let path = cfg.out.join("report.json");
    let mut text = serde_json::to_string_pretty(&report).map_err(runtime)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display())).map_err(runtime)?;
    Ok(path)
}

pub fn mesh(cfg: &RunConfig) -> Outcome {
    let m = meshes(cfg)?.pop().expect("at least one mesh");
    prepare_out(&cfg.out)?;
    let file = cfg.out.join("mesh.json");
    save_mesh(&m, &file).map_err(runtime)?;
    #[derive(Serialize)]
    struct MeshResult {
        mesh: MeshSummary,
        file: PathBuf,
    }
    let summary = MeshSummary::of(&m);
    println!("wrote {} ({} cells by dimension, h = {:.4})", file.display(), fmt_list(&summary.cells), summary.h);
    write_report(cfg, MeshResult { mesh: summary, file })?;
    Ok(EXIT_OK)
}

pub fn check(cfg: &RunConfig) -> Outcome {
    #[derive(Serialize)]
    struct CheckReport {
        #[serde(skip_serializing_if = "Option::is_none")]
        mesh: Option<MeshSummary>,
        passed: bool,
        checks: Vec<CheckResult>,
    }
    prepare_out(&cfg.out)?;
    let m = match meshes(cfg) {
        Ok(mut m) => m.pop().expect("at least one mesh"),
        Err(Failure::InvalidMesh(e)) => {
            // still leave a report naming the failed structural check
            let res = CheckResult { name: "orientation".into(), residual: f64::NAN, threshold: 0.0, passed: false, detail: Some(e.to_string()) };
            print_check(&res);
            write_report(cfg, CheckReport { mesh: None, passed: false, checks: vec![res] })?;
            return Ok(EXIT_CHECK_FAILED);
        }
        Err(e) => return Err(e),
    };
    let sp = Arc::new(LocalSpaces::new(m.clone()));
    let opts = CheckOptions { r: cfg.r, tol: cfg.tol, quad_degree: cfg.quad_degree, seed: cfg.seed, complexes: cfg.complex };
    let checks = run_checks(&sp, &opts);
    checks.iter().for_each(print_check);
    let passed = checks.iter().all(|c| c.passed);
    println!("{} of {} checks passed", checks.iter().filter(|c| c.passed).count(), checks.len());
    write_report(cfg, CheckReport { mesh: Some(MeshSummary::of(&m)), passed, checks })?;
    Ok(if passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn print_check(c: &CheckResult) {
    let status = if c.passed { "PASS" } else { "FAIL" };
    match &c.detail {
        Some(d) => println!("{status}  {:<20} {d}", c.name),
        None => println!("{status}  {:<20} residual {:.2e} (threshold {:.0e})", c.name, c.residual, c.threshold),
    }
}

fn fmt_list<T: std::fmt::Display>(v: &[T]) -> String {
    format!("({})", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","))
}

pub fn cohomology(cfg: &RunConfig) -> Outcome {
    let m = meshes(cfg)?.pop().expect("at least one mesh");
    prepare_out(&cfg.out)?;
    let betti = betti_numbers(&m);
    let sp = Arc::new(LocalSpaces::new(m.clone()));
    let mut reports = Vec::new();
    let mut complexes = Vec::new();
    if cfg.complex.ddr() {
        complexes.push(ComplexMatrices::ddr(&sp, cfg.r).map_err(runtime)?);
    }
    if cfg.complex.vem() {
        complexes.push(ComplexMatrices::vem(&sp, cfg.r).map_err(runtime)?);
    }
    for c in &complexes {
        let rep = cohomology_dims(c, cfg.tol.rank, Some(&betti)).map_err(runtime)?;
        let gap = rep.min_gap.map_or("none".to_string(), |g| format!("{g:.1e}"));
        println!(
            "{} r={}: dims {}, Betti numbers {}, match={}, smallest gap {gap}{}",
            rep.provenance,
            cfg.r,
            fmt_list(&rep.dims()),
            fmt_list(&betti),
            rep.all_match(),
            if rep.ambiguous { " (ambiguous rank)" } else { "" }
        );
        reports.push(rep);
    }
    let all_match = reports.iter().all(|r| r.all_match());
    #[derive(Serialize)]
    struct CohomologyResult {
        mesh: MeshSummary,
        all_match: bool,
        complexes: Vec<ddr::cohomology::CohomologyReport>,
    }
    write_report(cfg, CohomologyResult { mesh: MeshSummary::of(&m), all_match, complexes: reports })?;
    Ok(if all_match { EXIT_OK } else { EXIT_CHECK_FAILED })
}

pub fn hodge(cfg: &RunConfig) -> Outcome {
    let meshes = meshes(cfg)?;
    let n = meshes[0].ambient_dim();
    if let Some(&k) = cfg.k.iter().find(|&&k| k > n) {
        return Err(Failure::Config(anyhow::anyhow!("form degree k = {k} exceeds the dimension {n}")));
    }
    prepare_out(&cfg.out)?;
    let mut studies = Vec::new();
    for &k in &cfg.k {
        let sol = Manufactured::trigonometric(n, k, 1);
        let opts = StudyOptions { k, r: cfg.r, stab: Stabilization::TraceJump, source: cfg.source, quad_degree: cfg.quad_degree };
        let rep = convergence_study(&meshes, &sol, opts).map_err(|e| match e {
            Error::NontrivialTopology(_) => Failure::Config(e.into()),
            e => runtime(e),
        })?;
        let csv = if cfg.k.len() == 1 { cfg.out.join("errors.csv") } else { cfg.out.join(format!("errors_k{k}.csv")) };
        write_errors_csv(&csv, &rep).map_err(runtime)?;
        print_study(&rep, &csv);
        studies.push(rep);
    }
    #[derive(Serialize)]
    struct HodgeResult {
        meshes: Vec<MeshSummary>,
        studies: Vec<ConvergenceReport>,
    }
    write_report(cfg, HodgeResult { meshes: meshes.iter().map(|m| MeshSummary::of(m)).collect(), studies })?;
    Ok(EXIT_OK)
}

fn write_errors_csv(path: &Path, rep: &ConvergenceReport) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["mesh_h", "dofs"];
    header.extend(ErrorRecord::COLUMNS);
    header.push("solve_time_s");
    w.write_record(&header)?;
    for run in &rep.runs {
        let mut row = vec![run.mesh_h.to_string(), run.dofs.to_string()];
        row.extend(run.errors.values().iter().map(|v| v.to_string()));
        row.push(run.solve_time_s.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn print_study(rep: &ConvergenceReport, csv: &Path) {
    let slope = |s: Option<f64>| s.map_or("-".to_string(), |v| format!("{v:.2}"));
    println!("Hodge Laplacian n={} k={} r={} ({}, {} source)", rep.n, rep.k, rep.r, rep.solution, format!("{:?}", rep.source).to_lowercase());
    println!("  {:>10} {:>8} {:>12} {:>10}", "h", "dofs", "total error", "solve s");
    for run in &rep.runs {
        println!("  {:>10.5} {:>8} {:>12.4e} {:>10.3}", run.mesh_h, run.dofs, run.total, run.solve_time_s);
    }
    let cols: Vec<String> = rep.slopes.iter().map(|(c, s)| format!("{c} {}", slope(*s))).collect();
    println!("  slopes: {}", cols.join(", "));
    println!("  total slope {} (target {})", slope(rep.total_slope), rep.target_slope);
    println!("  wrote {}", csv.display());
}
