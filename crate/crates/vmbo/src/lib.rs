//! Volume-constrained MBO clustering on graphs.
//!
//! The scheme alternates a diffusion step `u = A(h) chi` with a
//! volume-constrained thresholding step that assigns every point to a
//! cluster maximizing `u_i(x) - m_i`, where the vector `m` (a vectorial
//! order statistic, or equilibrium price) is chosen so the resulting
//! cluster sizes meet exact or interval volume constraints. The
//! thresholding step is solved exactly by the order-statistic solvers in
//! [`osstat`]; diffusion kernels live in [`kernels`] on top of the
//! similarity graphs built in [`graph`].
//!
//! Module map:
//!
//! * [`graph`]: k-NN similarity graphs, random-walk Laplacian, partial
//!   spectrum.
//! * [`kernels`]: diffusion operators `A(h)` with structural flags and an
//!   incremental application path.
//! * [`osstat`]: the exact equality- and interval-constrained
//!   thresholding solvers with hyperplane priority queues.
//! * [`mbo`]: the outer iteration, energy bookkeeping, stopping rule,
//!   temperature, and scaling diagnostics.
//! * [`init`]: Laguerre/Voronoi/diffusion initializations from labeled
//!   fidelity points.
//! * [`data`]: dataset generation and loading, accuracy scoring.
//! * [`oracle`]: independent reference solvers used by tests.

// Indexed loops stay: the numeric kernels walk several arrays in lockstep
// and the index is part of the meaning. `!(x > 0.0)`-style comparisons are
// deliberate NaN rejections, not misspelled `x <= 0.0`.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod graph;
mod heap;
pub mod init;
pub mod kernels;
pub mod matrix;
pub mod mbo;
pub mod oracle;
pub mod osstat;

pub use error::{Error, Result};
