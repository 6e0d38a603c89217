//! JSON mesh files.
//!
//! ```json
//! {
//!   "version": "ddrmesh-v1",
//!   "ambient_dim": 2,
//!   "vertices": [[0.0, 0.0], [1.0, 0.0], …],
//!   "cells": [ {"dim": 1, "boundary": [[0, -1], [1, 1]]}, … ]
//! }
//! ```
//!
//! Vertices are the 0-cells. `cells` lists the cells of dimension ≥ 1; ids
//! are 0-based and dense per dimension, in order of appearance.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{PolytopalMesh, SignedTopology};
use crate::error::{Error, Result};

pub const MESH_FORMAT_VERSION: &str = "ddrmesh-v1";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MeshFile {
    pub version: String,
    pub ambient_dim: usize,
    pub vertices: Vec<Vec<f64>>,
    pub cells: Vec<CellRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CellRecord {
    pub dim: usize,
    pub boundary: Vec<(usize, i64)>,
}

pub fn mesh_to_json(mesh: &PolytopalMesh) -> MeshFile {
    let cells = (1..=mesh.ambient_dim())
        .flat_map(|d| {
            mesh.cells(d).iter().map(move |c| CellRecord {
                dim: d,
                boundary: c.boundary.iter().map(|&(f, s)| (f, s as i64)).collect(),
            })
        })
        .collect();
    MeshFile {
        version: MESH_FORMAT_VERSION.to_string(),
        ambient_dim: mesh.ambient_dim(),
        vertices: mesh.vertices().iter().map(|v| v.iter().copied().collect()).collect(),
        cells,
    }
}

pub fn mesh_from_json(file: &MeshFile) -> Result<PolytopalMesh> {
    if file.version != MESH_FORMAT_VERSION {
        return Err(Error::Schema(format!("unsupported version {:?}, expected {MESH_FORMAT_VERSION:?}", file.version)));
    }
    let n = file.ambient_dim;
    if n == 0 || n > super::MAX_AMBIENT_DIM {
        return Err(Error::Schema(format!("ambient_dim {n} not in [1, {}]", super::MAX_AMBIENT_DIM)));
    }
    for (i, v) in file.vertices.iter().enumerate() {
        if v.len() != n {
            return Err(Error::Schema(format!("vertex {i} has {} coordinates, expected {n}", v.len())));
        }
    }
    let mut topo: SignedTopology = vec![Vec::new(); n];
    for (i, c) in file.cells.iter().enumerate() {
        if c.dim == 0 || c.dim > n {
            return Err(Error::Schema(format!("cell record {i} has dim {} outside [1, {n}]", c.dim)));
        }
        let mut b = Vec::with_capacity(c.boundary.len());
        for &(f, s) in &c.boundary {
            if s != 1 && s != -1 {
                return Err(Error::Schema(format!("cell record {i}: sign {s} is not ±1")));
            }
            b.push((f, s as i8));
        }
        topo[c.dim - 1].push(b);
    }
    let vertices = file.vertices.iter().map(|v| DVector::from_vec(v.clone())).collect();
    PolytopalMesh::from_signed(n, vertices, topo)
}

pub fn save_mesh(mesh: &PolytopalMesh, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&mesh_to_json(mesh))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<PolytopalMesh> {
    let text = std::fs::read_to_string(path)?;
    let file: MeshFile = serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
    mesh_from_json(&file)
}
