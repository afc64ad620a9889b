//! Double-DQN routing agent built on a small hand-written MLP.

mod adam;
mod agent;
mod mlp;
mod replay;
mod train;

pub use adam::Adam;
pub use agent::{argmax, Agent, AgentConfig};
pub use mlp::{huber, kink_pattern, Layer, Mlp, Sample, HUBER_DELTA};
pub use replay::{ReplayBuffer, Transition};
pub use train::{evaluate_agent, run_training_episode, train, EpisodeStats};
