use thiserror::Error;

use crate::mesh::CellId;

/// Errors reported by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("frame is not orthonormal (Gram deviation {0:.3e})")]
    NonOrthonormalFrame(f64),

    #[error("no vector proxy for {degree}-forms in dimension {dim}")]
    UnsupportedProxy { dim: usize, degree: usize },

    #[error("{sub} is not a subcell of {cell}")]
    NotASubcell { cell: CellId, sub: CellId },

    #[error("orientation inconsistency between {cell} and {sub}: {detail}")]
    Orientation { cell: CellId, sub: CellId, detail: String },

    #[error("dangling cell {0}: not on the boundary of any higher-dimensional cell")]
    DanglingCell(CellId),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("mesh file schema violation: {0}")]
    Schema(String),

    #[error("degenerate geometry in {cell}: {detail}")]
    Degenerate { cell: CellId, detail: String },

    #[error("no quadrature rule of degree {0} (maximum is {max})", max = crate::quadrature::MAX_DEGREE)]
    QuadratureUnavailable(usize),

    #[error("ill-conditioned local problem on {cell} ({context}): condition estimate {cond:.3e}")]
    IllConditioned { cell: CellId, context: &'static str, cond: f64 },

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("input is not in the flat subspace (largest k-cell average {0:.3e})")]
    NotFlat(f64),

    #[error("input is not in the kernel of the discrete derivative (residual {0:.3e})")]
    NotInKernel(f64),

    #[error("preimage check failed (residual {0:.3e})")]
    PreimageResidual(f64),

    #[error("mesh has nontrivial topology (Betti numbers {0:?}); harmonic-form constraints are not supported")]
    NontrivialTopology(Vec<usize>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
