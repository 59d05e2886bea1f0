//! Unfitted hybridizable discontinuous Galerkin (HDG) solvers on a fixed
//! background triangulation, coupled to curved boundaries through transfer
//! paths, driving a volume-constrained shape-optimization loop.
//!
//! The crate is organized bottom-up:
//!
//! * [`quadrature`]: Gauss-Legendre rules on intervals and triangles.
//! * [`basis`]: orthonormal polynomial bases on the reference triangle and on
//!   edges, expanded in monomial form so element polynomials can be evaluated
//!   anywhere in the plane.
//! * [`shape`]: explicit curved-boundary domains (circle arcs + polylines)
//!   with inside queries, exact areas, and boundary parameterization.
//! * [`mesh`]: the uniform background triangulation and the computational
//!   mesh extracted from it (elements fully inside the domain).
//! * [`transfer`]: transfer paths from the computational boundary to the true
//!   boundary, extension patches tiling the gap, and admissibility
//!   diagnostics.
//! * [`hdg`]: local assembly, static condensation with monolithic transfer
//!   coupling, the state/adjoint/deformation solvers, and error norms.
//! * [`shapeopt`]: the tracking energy, shape gradient, Lagrange-multiplier
//!   update, Armijo line search, and the gradient-descent driver.

pub mod basis;
pub mod hdg;
pub mod mesh;
pub mod quadrature;
pub mod shape;
pub mod shapeopt;
pub mod transfer;

pub use hdg::{HdgConfig, ProblemData, ScalarSolution, TensorSolution};
pub use mesh::{BackgroundMesh, ComputationalMesh};
pub use shape::DomainShape;
pub use shapeopt::{OptConfig, ShapeIterState};
pub use transfer::{AdmissibilityReport, TransferMap};

/// 2D point in physical coordinates.
pub type Point2 = nalgebra::Point2<f64>;
/// 2D vector in physical coordinates.
pub type Vector2 = nalgebra::Vector2<f64>;

/// Errors produced while building geometry or solving the discrete systems.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("mesh extraction failed: {0}")]
    Extraction(String),
    #[error("transfer path construction failed: {0}")]
    Transfer(String),
    #[error("linear solver failed: {0}")]
    Solver(String),
    #[error("line search failed: {0}")]
    LineSearch(String),
    #[error("optimization failed at iteration {iter}: {cause}")]
    Optimization { iter: usize, cause: String },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Installs the global rayon thread pool, honoring `HDG_SHAPEOPT_THREADS`.
///
/// Called lazily by the assembly routines; calling it more than once is
/// harmless (later calls keep the first configuration).
pub fn init_thread_pool() {
    use std::sync::OnceLock;
    static INIT: OnceLock<()> = OnceLock::new();
    INIT.get_or_init(|| {
        if let Ok(v) = std::env::var("HDG_SHAPEOPT_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    });
}
