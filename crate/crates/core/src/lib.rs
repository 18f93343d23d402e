//! Reconstruction of optimal trajectories and controls from truncated
//! moment sequences of occupation measures.
//!
//! The pipeline fits a nonnegative atomic measure on a grid to given
//! moments by minimizing the ∞-norm moment mismatch with a linear program,
//! reads way-points off the atoms coordinate by coordinate, and refines them
//! with a local direct method whose cost can certify global optimality
//! against a relaxation lower bound.
//!
//! Modules, bottom-up:
//! - [`moments`]: multi-indices, monomials, boxes, affine rescaling.
//! - [`oracle`]: moments from sampled processes and long simulations,
//!   moment files, linear-constraint diagnostics.
//! - [`lp`]: dense interior-point and reference simplex solvers.
//! - [`reconstruct`]: grids, atomic fits, support extraction, way-points.
//! - [`refine`]: single shooting and optimality certification.
//! - [`pipeline`]: the stages wired together, as used by the CLI.

pub mod error;
pub mod exec;
pub mod io;
pub mod lp;
pub mod momentfile;
pub mod moments;
pub mod oracle;
pub mod pipeline;
pub mod poly;
pub mod problem_file;
pub mod problems;
pub mod quadrature;
pub mod reconstruct;
pub mod refine;

pub use error::{Error, Result};
pub use exec::Execution;
