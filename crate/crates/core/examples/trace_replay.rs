//! Replays a recorded trace through each heuristic router and writes the
//! round-robin report.
//!
//! `cargo run --release --example trace_replay -- trace.csv [out_dir]`
//! The trace needs columns arrival_time_s, task, prompt_tokens, decode_tokens.

use llm_routing::harness::{emit_report, run_experiment, ExperimentConfig, RoutingChoice, WorkloadSource};
use llm_routing::routing::HeuristicPolicy;

fn main() -> llm_routing::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(path) = args.next() else {
        eprintln!("usage: trace_replay <trace.csv> [out_dir]");
        std::process::exit(2);
    };
    let out = args.next().unwrap_or_else(|| "target/trace-replay".into());
    let mut cfg = ExperimentConfig {
        workload: WorkloadSource::Trace { path: path.into() },
        instances: 2,
        ..Default::default()
    };
    for p in HeuristicPolicy::ALL {
        cfg.routing = RoutingChoice::Heuristic(p);
        let r = run_experiment(&cfg, 0)?;
        println!("{p:<22} mean E2E {:>8.3} s  p99 {:>8.3} s", r.report.summary.e2e.mean, r.report.summary.e2e.p99);
        if p == HeuristicPolicy::RoundRobin {
            emit_report(&r.report, &r.samples, out.as_ref())?;
        }
    }
    println!("round robin report in {out}");
    Ok(())
}
