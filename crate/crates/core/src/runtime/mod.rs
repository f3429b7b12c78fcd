//! Simulated message-passing ranks and the weighted element partitioner.
//!
//! Every rank runs on its own thread, but only one rank executes at a time:
//! control passes to another runnable rank whenever the current one blocks in
//! a receive or finishes. The pick is round-robin or drawn from a seeded RNG,
//! which lets tests replay many interleavings of the same program.

mod comm;
mod partition;

pub use comm::{run, run_with_stats, Comm, RunConfig, RunStats, SchedulingPolicy};
pub use partition::{partition, PartitionPlan};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("deadlock: every live rank is blocked\n{0}")]
    Deadlock(String),
    #[error("rank {rank} panicked: {message}")]
    RankPanicked { rank: usize, message: String },
    #[error("undelivered messages at teardown: {0}")]
    Undelivered(String),
    #[error("rank count must be at least 1")]
    NoRanks,
    #[error("cannot split {elements} elements over {ranks} ranks")]
    TooManyRanks { ranks: usize, elements: usize },
}
