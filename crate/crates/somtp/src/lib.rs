//! Self-supervised learning-to-optimize for CBF-constrained MPC trajectory
//! planning.
//!
//! The crate covers the full pipeline: the planning problem itself (bicycle
//! kinematics, control-barrier-function obstacle constraints, a tracking
//! objective over a single-shooting horizon), a differentiable safe-set
//! projected-gradient correction (SLPG), a policy network trained with an
//! augmented-Lagrangian loss against its own corrected outputs, a reference
//! ALM solver used as oracle and baseline planner, dataset generation,
//! closed-loop simulation, and batch evaluation.

pub mod cbf;
pub mod dataset;
pub mod diff;
pub mod error;
pub mod eval;
pub mod files;
pub mod objective;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod slpg;
pub mod solver;
pub mod training;
pub mod vehicle;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
