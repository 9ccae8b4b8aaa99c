//! Soft actor-critic with twin Q critics, target networks and an
//! auto-tuned temperature.

mod agent;
pub mod losses;
mod replay;
mod train;

pub use agent::{AgentSnapshot, SacAgent, SacConfig, UpdateStats, SNAPSHOT_FORMAT};
pub use replay::ReplayBuffer;
pub use train::{snapshot_schedule, train_online, LogRow, TrainingLog, LOG_COLUMNS};
