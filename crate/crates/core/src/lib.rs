//! Solver library for 2D semilinear parabolic equations
//! `u_t - c Δu = f(u) + g` on a rectangle, with Dirichlet or periodic
//! boundary conditions.
//!
//! Space is discretized by a fourth-order compact difference scheme on a
//! uniform grid, time by the variable-step two-level backward
//! differentiation formula (BDF2, backward Euler for the first step).
//! Three time-stepping drivers are provided:
//!
//! * a fully nonlinear scheme solved with Newton iterations,
//! * a two-grid scheme (nonlinear solve on a coarse grid, one Newton-
//!   linearized solve on the fine grid, coupled by piecewise bi-cubic
//!   Lagrange prolongation),
//! * an implicit-explicit scheme with extrapolated nonlinearity, kept as
//!   a stability comparison baseline.
//!
//! The `timegrid` module also exposes the discrete orthogonal convolution
//! (DOC) kernels of the BDF2 convolution kernels, used by the diagnostic
//! and property-test suites, together with random nonuniform mesh
//! generation and an adaptive step-size controller.
//!
//! All data-parallel kernels run on rayon when the `parallel` feature
//! (default) is enabled. Reductions use a fixed chunked summation order,
//! so results are bit-identical between the parallel and sequential
//! builds and independent of the thread count.

pub mod compact_ops;
pub mod grid;
pub mod interp;
pub mod linsolve;
pub mod par;
pub mod problems;
pub mod schemes;
pub mod timegrid;

pub use grid::{BoundaryKind, Grid2D, GridFunction, TwoGridPair};
pub use problems::ProblemSpec;
pub use schemes::{RunConfig, RunReport, SchemeKind};
pub use timegrid::TimeMesh;

/// Configure the global rayon thread pool. A no-op without the
/// `parallel` feature. Returns an error if the pool was already built.
pub fn init_threads(n: usize) -> Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        Ok(())
    }
}
