//! Stage two: imitative DDPG.

pub mod ddpg;
pub mod ou;
pub mod replay;
pub mod trainer;

pub use ddpg::{Ddpg, TransitionBatch};
pub use ou::{explore, BrakeNoise, OUConfig, OUProcess};
pub use replay::{ReplayBuffer, Transition};
pub use trainer::{demo_transitions, train_rl, write_metrics, EpisodeMetrics, RLConfig, RLOutcome};
