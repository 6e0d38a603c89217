//! Arbitrary-order discrete de Rham (DDR) and VEM-type complexes of
//! differential forms on polytopal meshes in one to three dimensions.
//!
//! Forms are handled in any degree through their coefficients on the
//! basis of alternating forms, not through vector proxies. The main entry
//! points are [`ddr::DdrSpace`] and [`vem::VemSpace`], built over a shared
//! [`spaces::LocalSpaces`] cache for a [`mesh::PolytopalMesh`].
//! [`cohomology`] compares discrete cohomology with Betti numbers,
//! [`hodge`] solves the mixed Hodge Laplacian, and [`checks`] bundles the
//! property suites used by the command-line driver.

pub mod checks;
pub mod cohomology;
pub mod ddr;
pub mod error;
pub mod exterior;
pub mod fields;
pub mod hodge;
pub mod linalg;
pub mod mesh;
pub mod poly;
pub mod quadrature;
pub mod spaces;
pub mod sparse;
pub mod vem;

pub use error::{Error, Result};

/// Library version, embedded in machine-readable reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
