//! Two-stage driving-policy training: controllable imitation learning, then
//! imitative DDPG, with the benchmark protocol used to compare them.

pub mod bench;
pub mod config;
pub mod demo;
mod error;
pub mod expert;
pub mod il;
pub mod pipeline;
pub mod policy;
pub mod regimes;
pub mod reward;
pub mod rl;
pub mod seeding;

pub use error::{CirlError, Result};
