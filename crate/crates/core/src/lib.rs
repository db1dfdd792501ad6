//! Group-relative policy optimization for goal-directed navigation on
//! synthetic graphs.
//!
//! The crate is organized bottom-up:
//!
//! - [`envgraph`]: random geometric navigation graphs, episodes, candidate
//!   actions and the shortest-path expert.
//! - [`policy`]: the softmax-linear policy with exact gradients and KL.
//! - [`reward`]: trajectory rewards and the step progress coefficient.
//! - [`optim`]: group advantages and the Dr.GRPO / GRPO / GSPO / GMPO /
//!   REINFORCE objectives.
//! - [`train`]: supervised warm-up, group rollouts and hard-case replay.
//! - [`eval`]: navigation metrics and perturbation robustness sweeps.

pub mod bundle;
pub mod envgraph;
pub mod error;
pub mod eval;
pub mod optim;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod rollout;
pub mod train;

pub use error::{Error, Result};

/// Version string embedded in every output document.
pub const VERSION: &str = concat!("graphnav ", env!("CARGO_PKG_VERSION"));
