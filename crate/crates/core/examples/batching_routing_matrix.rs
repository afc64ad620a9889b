//! Every batching policy against several routers in the four class-ordered
//! arrival scenarios, two instances.
//!
//! `cargo run --release --example batching_routing_matrix -- [n_requests] [rate]`

use llm_routing::harness::{run_matrix, ExperimentConfig, MatrixSpec, RoutingChoice};
use llm_routing::instance::BatchingPolicy;
use llm_routing::routing::HeuristicPolicy;
use llm_routing::workload::{ArrivalProcess, ScenarioKind};

fn main() -> llm_routing::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3000);
    let rate: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let cfg = ExperimentConfig {
        n_requests: n,
        instances: 2,
        arrival: ArrivalProcess::Poisson { rate },
        matrix: Some(MatrixSpec {
            scenarios: ScenarioKind::ALL.to_vec(),
            batching: BatchingPolicy::ALL.to_vec(),
            routing: [
                HeuristicPolicy::RoundRobin,
                HeuristicPolicy::DecodeBalancer,
                HeuristicPolicy::DedicatedSmallLarge,
            ]
            .map(RoutingChoice::Heuristic)
            .to_vec(),
        }),
        ..Default::default()
    };
    let cells = run_matrix(&cfg)?;
    println!("makespan in seconds, {n} requests at {rate}/s");
    for s in ScenarioKind::ALL {
        println!("\n{}", s.name());
        for b in BatchingPolicy::ALL {
            let row: Vec<String> = cells
                .iter()
                .filter(|c| c.scenario == s.name() && c.batching == b)
                .map(|c| format!("{}={:.1}", c.routing, c.summary.total_e2e_s))
                .collect();
            println!("  {:<16} {}", b.name(), row.join("  "));
        }
    }
    Ok(())
}
