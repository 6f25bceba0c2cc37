//! Error type shared by all modules.

use thiserror::Error;

/// Errors raised by construction, loading, checking and transformation.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum Error {
    /// Interval bounds given in the wrong order.
    #[error("reversed interval: [{a}, {b}]")]
    ReversedInterval { a: String, b: String },

    /// A value fell outside the domain of a piecewise function.
    #[error("argument {value} outside domain [{lo}, {hi}]")]
    Domain {
        value: String,
        lo: String,
        hi: String,
    },

    /// An image measure has an atom: a time map is constant on a set that
    /// carries positive mass, so no outflow rate exists.
    #[error("image measure has an atom at t = {at} (mass {mass}): no density exists")]
    Atom { at: String, mass: String },

    /// An exit time function is decreasing somewhere, violating FIFO.
    #[error("FIFO violation on edge `{edge}`: exit times decrease near t = {at}")]
    FifoViolation { edge: String, at: String },

    /// Arrival times leave the technical horizon; the instance's `t_end` is
    /// too small for the flow under consideration.
    #[error("horizon too short: {detail}")]
    Horizon { detail: String },

    /// Instance or flow document violates the schema.
    #[error("document error: {0}")]
    Document(String),

    /// Instance-level validation failure.
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    /// Walk validation failure (disconnected edges, wrong endpoints, ...).
    #[error("invalid walk: {0}")]
    InvalidWalk(String),

    /// Walk inflows of a commodity do not sum to its demand rate.
    #[error("demand mismatch for commodity `{commodity}`")]
    DemandMismatch { commodity: String },

    /// Flow is not fully delivered within the active horizon.
    #[error("flow not delivered within the active horizon: {detail}")]
    NotDelivered { detail: String },

    /// Operation requires a single-sink (or shared source/sink) instance.
    #[error("operation requires {required}, instance has {found}")]
    WrongTopology { required: String, found: String },

    /// No flow-carrying destination cycle was found.
    #[error("no flow-carrying cycle through the sink")]
    NoDCycle,

    /// A flow could not be decomposed into walk inflows.
    #[error("flow not decomposable: {0}")]
    NotDecomposable(String),

    /// The walk enumeration budget excludes a flow-carrying walk.
    #[error("cost budget {budget} too small: flow-carrying walk {walk} not enumerated")]
    BudgetTooSmall { budget: String, walk: String },

    /// An edge model parameter is invalid.
    #[error("invalid edge model on `{edge}`: {detail}")]
    InvalidModel { edge: String, detail: String },

    /// An internal invariant failed; indicates a bug or an inadmissible input
    /// that slipped past validation.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// I/O error (CLI file handling).
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
