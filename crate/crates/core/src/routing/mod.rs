//! The routing environment, its reward and the heuristic routers.

mod env;
mod policy;
mod reward;
mod state;

pub use env::{
    read_trajectory_csv, write_trajectory_csv, CompletedRequest, EnvConfig, RoutingEnv, StepOutcome, TickSample,
    TrajectoryRecord,
};
pub use policy::{HeuristicPolicy, HeuristicRouter, CAPACITY_REFRESH_S};
pub use reward::{pending_penalty, RewardConfig, ShapingMode};
pub use state::{encode_state, HEAD_PROMPT_SCALE, QUEUE_CLAMP};
