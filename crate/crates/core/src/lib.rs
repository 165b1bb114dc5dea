//! State-augmented constrained reinforcement learning.
//!
//! The crate is organized around the two halves of the augmented MDP:
//!
//! - [`env`] hosts the environments (the three-state monitoring MDP and the
//!   continuous four-region monitoring task) behind the [`env::Environment`]
//!   trait.
//! - [`dual`] implements the multiplier side: Lagrangian rewards, epoch
//!   accumulation, the projected dual update and its diagnostics.
//! - [`policy`] holds policies over the augmented state `(s, λ)`: exact
//!   tabular Lagrangian maximizers and the RBF-Gaussian parametric policy.
//! - [`trainer`] learns `π_θ(s, λ)` by sampling the augmented space and running
//!   REINFORCE on the Lagrangian reward.
//! - [`executor`] couples a trained policy with the dual dynamics online.
//! - [`baselines`] implements primal-dual and primal averaging.
//! - [`oracle`] solves tabular CMDPs exactly (occupation-measure LP) and
//!   certifies duality properties numerically.
//! - [`report`] writes the CSV, SVG and summary artifacts.

pub mod baselines;
pub mod dual;
pub mod env;
mod error;
pub mod eval;
pub mod executor;
pub mod oracle;
pub mod policy;
pub mod report;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
