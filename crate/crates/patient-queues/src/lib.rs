//! Exact long-run behavior of strategic queuing systems.
//!
//! Queues receive packets at fixed rates and repeatedly pick servers from
//! fixed randomized strategies; servers serve the oldest packet they
//! receive. This crate computes the exact asymptotic aging rate of every
//! queue under any strategy profile, finds and certifies Nash equilibria of
//! the induced game, evaluates the water-filling lower bound that pins the
//! price of anarchy at `e/(e-1)`, and cross-validates the analytic rates
//! against a seeded Monte Carlo simulator of the underlying process.
//!
//! Start with the runnable examples in `examples/`, one per capability;
//! the `pq` binary wraps the same entry points for scripting.

pub mod acceptance;
pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod fixtures;
pub mod instance;
pub mod mask;
pub mod poa;
pub mod rates;
pub mod sim;

pub use error::{Error, Result};
pub use instance::{Instance, StrategyProfile};
pub use mask::SubsetMask;
pub use rates::{compute_rates, RatePartition};
