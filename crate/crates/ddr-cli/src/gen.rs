//! Mesh generator specifications such as `cartesian:4x4` or
//! `tilted:2x2x2:0.05`, and their refinement families.

use std::fmt;
use std::str::FromStr;

use anyhow::{bail, Context};
use ddr::mesh::{annulus_2d, cartesian_grid, distort, simplicial_grid, tilted_grid, PolytopalMesh};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Base {
    Cartesian,
    Simplicial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenSpec {
    Grid { base: Base, divisions: Vec<usize> },
    Tilted { divisions: Vec<usize>, magnitude: f64 },
    Distorted { base: Base, divisions: Vec<usize>, magnitude: f64 },
    Annulus { outer: usize, hole: usize },
}

pub const GEN_HELP: &str = "cartesian:AxB[xC] | simplicial:AxB[xC] | tilted:AxB[xC]:MAG | \
distorted:{cartesian,simplicial}:AxB[xC]:MAG | annulus:OUTER:HOLE";

fn divisions(s: &str) -> anyhow::Result<Vec<usize>> {
    let d: Vec<usize> = s.split('x').map(|p| p.parse::<usize>().with_context(|| format!("bad division count {p:?}"))).collect::<Result<_, _>>()?;
    if !(1..=3).contains(&d.len()) {
        bail!("need 1 to 3 division counts, got {}", d.len());
    }
    Ok(d)
}

fn base(s: &str) -> anyhow::Result<Base> {
    match s {
        "cartesian" => Ok(Base::Cartesian),
        "simplicial" => Ok(Base::Simplicial),
        _ => bail!("unknown base grid {s:?}"),
    }
}

fn magnitude(s: &str) -> anyhow::Result<f64> {
    s.parse::<f64>().with_context(|| format!("bad magnitude {s:?}"))
}

impl FromStr for GenSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let spec = match parts.as_slice() {
            ["cartesian", d] => GenSpec::Grid { base: Base::Cartesian, divisions: divisions(d)? },
            ["simplicial", d] => GenSpec::Grid { base: Base::Simplicial, divisions: divisions(d)? },
            ["tilted", d, m] => GenSpec::Tilted { divisions: divisions(d)?, magnitude: magnitude(m)? },
            ["distorted", b, d, m] => GenSpec::Distorted { base: base(b)?, divisions: divisions(d)?, magnitude: magnitude(m)? },
            ["annulus", o, h] => GenSpec::Annulus {
                outer: o.parse().with_context(|| format!("bad outer count {o:?}"))?,
                hole: h.parse().with_context(|| format!("bad hole count {h:?}"))?,
            },
            _ => bail!("unrecognized generator {s:?}; expected {GEN_HELP}"),
        };
        Ok(spec)
    }
}

impl fmt::Display for GenSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let divs = |d: &[usize]| d.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("x");
        let base = |b: &Base| match b {
            Base::Cartesian => "cartesian",
            Base::Simplicial => "simplicial",
        };
        match self {
            GenSpec::Grid { base: b, divisions } => write!(f, "{}:{}", base(b), divs(divisions)),
            GenSpec::Tilted { divisions, magnitude } => write!(f, "tilted:{}:{magnitude}", divs(divisions)),
            GenSpec::Distorted { base: b, divisions, magnitude } => write!(f, "distorted:{}:{}:{magnitude}", base(b), divs(divisions)),
            GenSpec::Annulus { outer, hole } => write!(f, "annulus:{outer}:{hole}"),
        }
    }
}

impl GenSpec {
    /// The same family refined `level` times: division counts double and
    /// perturbation magnitudes halve, so the geometry stays comparable.
    pub fn refined(&self, level: u32) -> GenSpec {
        let f = 1usize << level;
        let scale = |d: &[usize]| d.iter().map(|m| m * f).collect();
        let mag = |m: f64| m / f as f64;
        match self {
            GenSpec::Grid { base, divisions } => GenSpec::Grid { base: *base, divisions: scale(divisions) },
            GenSpec::Tilted { divisions, magnitude } => GenSpec::Tilted { divisions: scale(divisions), magnitude: mag(*magnitude) },
            GenSpec::Distorted { base, divisions, magnitude } => {
                GenSpec::Distorted { base: *base, divisions: scale(divisions), magnitude: mag(*magnitude) }
            }
            GenSpec::Annulus { outer, hole } => GenSpec::Annulus { outer: outer * f, hole: hole * f },
        }
    }

    pub fn build(&self, seed: u64) -> ddr::Result<PolytopalMesh> {
        let grid = |b: Base, d: &[usize]| match b {
            Base::Cartesian => cartesian_grid(d.len(), d),
            Base::Simplicial => simplicial_grid(d.len(), d),
        };
        match self {
            GenSpec::Grid { base, divisions } => grid(*base, divisions),
            GenSpec::Tilted { divisions, magnitude } => tilted_grid(divisions.len(), divisions, *magnitude, seed),
            GenSpec::Distorted { base, divisions, magnitude } => distort(&grid(*base, divisions)?, *magnitude, seed),
            GenSpec::Annulus { outer, hole } => annulus_2d(*outer, *hole),
        }
    }
}
