//! Exact simulation of multi-commodity dynamic network flows.
//!
//! The crate models fluid traffic on a directed graph over a bounded time
//! horizon. Edge dynamics follow the Vickrey point-queue model (plus constant
//! delays and a decreasing-ramp model), all arithmetic is exact rational, and
//! every time-varying quantity is a piecewise-constant rate or a piecewise-
//! linear cumulative. On top of the loader sit cost evaluation, tolled
//! equilibrium checks, implementability checks with witnesses, and the
//! constructive flow transformations (waiting removal, destination-cycle
//! removal) that strictly improve cyclic single-sink flows.
//!
//! Modules:
//! - [`timefn`]: rationals, step functions, piecewise-linear functions and
//!   the measure-theoretic primitives (integration, pushforward, inverses).
//! - [`network`]: instances (graph, edge models, commodities), walk
//!   enumeration and the text document format.
//! - [`vickrey`]: per-edge dynamics and the exact network loading.
//! - [`param`]: propagation under frozen travel times, node balances and
//!   temporal flow decomposition.
//! - [`analysis`]: costs, tolled user-equilibrium checks, implementability.
//! - [`transforms`]: waiting removal and cycle removal, composed into an
//!   improvement pipeline.
//! - [`scenarios`]: built-in instances and reference flows used by the CLI
//!   and the test suites.


pub mod analysis;
pub mod error;
pub mod network;
pub mod param;
pub mod scenarios;
pub mod transforms;
pub mod vickrey;


pub mod timefn;



pub use error::Error;
pub use timefn::{Horizon, PLin, Rat, StepFn};

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
