//! Experiment driver: configs, runs, metrics, reports and the small
//! standalone studies (exhaustive partitioning, mixing interference,
//! profile calibration).

mod calibrate;
mod config;
mod experiment;
mod metrics;
mod mixing;
mod partition;
mod report;

pub use calibrate::*;
pub use config::*;
pub use experiment::*;
pub use metrics::*;
pub use mixing::*;
pub use partition::*;
pub use report::*;
