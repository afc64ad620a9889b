//! Compares a trained agent with every heuristic router on held-out seeds.
//! Loads a checkpoint when given one, otherwise trains a short one first.
//!
//! `cargo run --release --example evaluate_router -- [checkpoint]`

use llm_routing::harness::{evaluate, train_agent, ExperimentConfig, RoutingChoice};
use llm_routing::rl::Agent;
use llm_routing::routing::HeuristicPolicy;
use llm_routing::workload::ArrivalProcess;

fn main() -> llm_routing::error::Result<()> {
    let cfg = ExperimentConfig {
        n_requests: 200,
        instances: 2,
        arrival: ArrivalProcess::Poisson { rate: 10.0 },
        episodes: 5,
        seeds: (1000..1003).collect(),
        ..Default::default()
    };
    let agent = match std::env::args().nth(1) {
        Some(p) => Agent::load(p.as_ref())?,
        None => train_agent(&cfg, 0)?.0,
    };
    let baselines: Vec<_> = HeuristicPolicy::ALL.into_iter().map(RoutingChoice::Heuristic).collect();
    let rows = evaluate(&cfg, &agent, "rl", &baselines)?;
    let mut names: Vec<&str> = Vec::new();
    for r in &rows {
        if !names.contains(&r.policy.as_str()) {
            names.push(&r.policy);
        }
    }
    for name in names {
        let mine: Vec<_> = rows.iter().filter(|r| r.policy == name).collect();
        let mean = mine.iter().map(|r| r.summary.e2e.mean).sum::<f64>() / mine.len() as f64;
        let ttft = mine.iter().map(|r| r.summary.ttft.mean).sum::<f64>() / mine.len() as f64;
        println!("{name:<22} mean E2E {mean:>7.3} s  mean TTFT {ttft:>7.3} s");
    }
    Ok(())
}
