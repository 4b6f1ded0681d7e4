//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by instance validation, the analytic core, and the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Arrival or service rates violate their bounds or ordering.
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    /// A strategy profile row is not a probability distribution.
    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    /// Profile and instance dimensions disagree.
    #[error("dimension mismatch: profile is {profile_queues}x{profile_servers}, instance is {queues}x{servers}")]
    DimensionMismatch {
        profile_queues: usize,
        profile_servers: usize,
        queues: usize,
        servers: usize,
    },

    /// A subset argument was empty where a nonempty set is required.
    #[error("empty subset not allowed here")]
    EmptySubset,

    /// A subset overlaps the priority set.
    #[error("subset overlaps the priority set")]
    OverlappingSets,

    /// Queue or server index out of range.
    #[error("index {index} out of range ({len} available)")]
    IndexOutOfRange { index: usize, len: usize },

    /// Exhaustive subset enumeration refused: the ground set is too large.
    #[error("ground set of {size} queues exceeds the enumeration cap of {cap}")]
    EnumerationCap { size: usize, cap: usize },

    /// An argument fell outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An iterative solver failed to converge within its iteration cap.
    #[error("no convergence: {0}")]
    NonConvergence(String),

    /// A stated precondition does not hold for the given inputs.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The deformation stalled with an oversaturated server it cannot drain.
    /// This should be impossible for a certified equilibrium and indicates a
    /// genuine inconsistency in the inputs.
    #[error("deformation stalled: server {server} stays oversaturated by {excess}")]
    DeformationStall { server: usize, excess: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
