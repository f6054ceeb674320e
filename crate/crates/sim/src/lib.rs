//! Deterministic 2D town driving simulator.
//!
//! SI units throughout (meters, seconds, m/s); only [`Measurements`] exposes
//! speed in km/h. Positive steer turns right. Traffic keeps right.

pub mod agents;
pub mod config;
pub mod env;
mod error;
pub mod geometry;
pub mod infractions;
pub mod map;
pub mod perception;
pub mod route;
pub mod tasks;
pub mod vehicle;

pub use agents::{Agents, DynamicObstacle};
pub use config::SimConfig;
pub use env::{Env, EpisodeSpec, StepOutcome};
pub use error::{Result, SimError};
pub use infractions::{detect_infractions, CollisionKind, Measurements};
pub use map::{bundled_map, LanePos, TownMap};
pub use perception::{Observation, PerturbationRegime};
pub use route::{plan_route, Route};
pub use tasks::{sample_episode, TaskKind};
pub use vehicle::{step_dynamics, ActionTriple, Command, VehicleState, STEER_RIGHT_SIGN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EpisodeStatus {
    Running,
    GoalReached,
    Collision,
    TimeBudgetExhausted,
}

impl EpisodeStatus {
    pub fn is_terminal(self) -> bool {
        self != EpisodeStatus::Running
    }
}
