//! Run configuration: an optional JSON file mirroring [`RunConfig`], with
//! command-line flags taking precedence.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use clap::{Args, ValueEnum};
use ddr::checks::{Complexes, Tolerances};
use ddr::hodge::SourceTerm;
use ddr::quadrature::MAX_DEGREE;
use serde::{Deserialize, Serialize};

use crate::gen::{GenSpec, GEN_HELP};

pub const MAX_R: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Mesh,
    Check,
    Cohomology,
    Hodge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ComplexArg {
    Ddr,
    Vem,
    Both,
}

impl From<ComplexArg> for Complexes {
    fn from(c: ComplexArg) -> Self {
        match c {
            ComplexArg::Ddr => Complexes::Ddr,
            ComplexArg::Vem => Complexes::Vem,
            ComplexArg::Both => Complexes::Both,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Interpolated,
    Potential,
}

impl From<SourceArg> for SourceTerm {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Interpolated => SourceTerm::Interpolated,
            SourceArg::Potential => SourceTerm::Potential,
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Args, Clone, Debug, Default)]
pub struct Flags {
    /// JSON config file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Mesh file in ddrmesh-v1 JSON.
    #[arg(long, conflicts_with = "gen")]
    pub mesh: Option<PathBuf>,
    /// Mesh generator.
    #[arg(long, long_help = GEN_HELP)]
    pub gen: Option<String>,
    /// Polynomial degree, 0 to 5.
    #[arg(long)]
    pub r: Option<usize>,
    /// Form degrees for the Hodge Laplacian, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Main tolerance of the command: identity residuals for `check`, the
    /// relative rank cutoff for `cohomology`.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Quadrature degree for smooth fields.
    #[arg(long)]
    pub quad_degree: Option<usize>,
    /// Number of meshes in a convergence study, each twice as fine as the last.
    #[arg(long)]
    pub refinements: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; all cores when unset.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_enum)]
    pub complex: Option<ComplexArg>,
    /// Right-hand side of the Hodge Laplacian scheme.
    #[arg(long, value_enum)]
    pub source: Option<SourceArg>,
}

/// Config file contents; every entry optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub command: Option<Command>,
    pub mesh: Option<PathBuf>,
    pub gen: Option<String>,
    pub r: Option<usize>,
    pub k: Option<Vec<usize>>,
    pub tol: Option<Tolerances>,
    pub quad_degree: Option<usize>,
    pub refinements: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub complex: Option<Complexes>,
    pub source: Option<SourceTerm>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Fully resolved configuration, embedded in every report. It serializes to
/// a valid config file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gen: Option<String>,
    pub r: usize,
    pub k: Vec<usize>,
    pub tol: Tolerances,
    pub quad_degree: Option<usize>,
    pub refinements: usize,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    pub complex: Complexes,
    pub source: SourceTerm,
}

impl RunConfig {
    pub fn resolve(command: Command, flags: &Flags) -> anyhow::Result<Self> {
        let file = match &flags.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        if let Some(c) = file.command {
            ensure!(c == command, "config file is for command {c:?}, not {command:?}");
        }
        let (mesh, gen) = match (&flags.mesh, &flags.gen) {
            (Some(m), _) => (Some(m.clone()), None),
            (None, Some(g)) => (None, Some(g.clone())),
            (None, None) => (file.mesh.clone(), file.gen.clone()),
        };
        ensure!(!(mesh.is_some() && gen.is_some()), "give either a mesh file or a generator, not both");
        let gen = match (&mesh, gen) {
            (Some(_), _) => None,
            (None, Some(g)) => Some(g.parse::<GenSpec>()?.to_string()),
            (None, None) => Some(default_gen(command).to_string()),
        };
        let mut tol = file.tol.unwrap_or_default();
        if let Some(t) = flags.tol {
            match command {
                Command::Cohomology => tol.rank = t,
                _ => tol.identity = t,
            }
        }
        let cfg = RunConfig {
            command,
            mesh,
            gen,
            r: flags.r.or(file.r).unwrap_or(if command == Command::Hodge { 0 } else { 1 }),
            k: flags.k.clone().or(file.k).unwrap_or_else(|| vec![1]),
            tol,
            quad_degree: flags.quad_degree.or(file.quad_degree),
            refinements: flags.refinements.or(file.refinements).unwrap_or(if command == Command::Hodge { 3 } else { 1 }),
            out: flags.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("ddr-out")),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            threads: flags.threads.or(file.threads),
            complex: flags.complex.map(Complexes::from).or(file.complex).unwrap_or_default(),
            source: flags.source.map(SourceTerm::from).or(file.source).unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> anyhow::Result<()> {
        ensure!(self.r <= MAX_R, "polynomial degree r = {} is outside the supported range [0, {MAX_R}]", self.r);
        for (name, t) in [("identity", self.tol.identity), ("commutation", self.tol.commutation), ("rank", self.tol.rank)] {
            ensure!(t.is_finite() && t > 0.0, "tolerance {name} = {t} must be positive");
        }
        if let Some(q) = self.quad_degree {
            ensure!(q <= MAX_DEGREE, "quadrature degree {q} exceeds the maximum {MAX_DEGREE}");
        }
        ensure!(self.refinements >= 1, "need at least one refinement level");
        ensure!(self.threads != Some(0), "thread count must be positive");
        ensure!(!self.k.is_empty(), "empty list of form degrees");
        if self.mesh.is_some() && self.command == Command::Hodge && self.refinements > 1 {
            bail!("a mesh file cannot be refined; use a generator or --refinements 1");
        }
        Ok(())
    }

    pub fn gen_spec(&self) -> Option<GenSpec> {
        self.gen.as_ref().map(|g| g.parse().expect("validated on resolve"))
    }
}

fn default_gen(command: Command) -> &'static str {
    match command {
        Command::Hodge => "cartesian:4x4",
        _ => "cartesian:2x2x2",
    }
}
