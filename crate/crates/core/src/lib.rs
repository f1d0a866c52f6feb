//! Mean-variance portfolio selection under buy-in threshold constraints.
//!
//! The classical mean-variance portfolio problem becomes nonconvex once each
//! asset's weight must be either exactly zero or at least a minimum buy-in
//! level. This crate models that problem as a mixed 0-1 quadratic program,
//! and solves it three ways:
//!
//! * [`dca`] — an exact-penalty reformulation of the 0-1 constraints into a
//!   difference-of-convex program, solved by successive convex subproblems;
//! * [`bnb`] — a classical branch-and-bound global baseline over the same
//!   model;
//! * [`oracle`] — brute-force support enumeration for small instances,
//!   used as ground truth in tests and comparisons.
//!
//! Supporting layers: [`ingest`] estimates mean returns and covariances from
//! market data, [`model`] houses the problem datum and its feasible polytope,
//! [`qp`] is a self-contained primal-dual interior-point solver for the
//! convex quadratic subproblems, and [`frontier`] sweeps target returns to
//! trace efficient frontiers and emit result tables.

pub mod bnb;
pub mod dca;
pub mod error;
pub mod frontier;
pub mod ingest;
pub mod model;
pub mod oracle;
pub mod qp;

pub use error::{Error, Result};
