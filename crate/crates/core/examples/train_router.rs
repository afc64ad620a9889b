//! Trains a DQN router with heuristic-guided shaping on a small cluster and
//! saves a checkpoint.
//!
//! `cargo run --release --example train_router -- [episodes] [checkpoint]`

use llm_routing::harness::{train_agent, ExperimentConfig};
use llm_routing::workload::ArrivalProcess;

fn main() -> llm_routing::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let path = args.next().unwrap_or_else(|| "target/example-agent".into());
    let cfg = ExperimentConfig {
        n_requests: 200,
        instances: 2,
        arrival: ArrivalProcess::Poisson { rate: 10.0 },
        episodes,
        ..Default::default()
    };
    let (agent, stats) = train_agent(&cfg, 0)?;
    for s in &stats {
        println!(
            "episode {:>3}: reward {:>10.1}, shaping {:>8.2}, mean E2E {:.3} s, eps {:.2}, {} updates",
            s.episode, s.total_reward, s.total_shaping, s.mean_e2e, s.epsilon, s.updates
        );
    }
    agent.save(path.as_ref())?;
    println!("saved {path}.bin and {path}.json");
    Ok(())
}
