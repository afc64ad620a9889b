pub mod error;
pub mod harness;
pub mod impact;
pub mod instance;
pub mod latency;
pub mod predictor;
pub mod rl;
pub mod routing;
pub mod workload;
