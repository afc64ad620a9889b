//! Draws the five-task mixture and prints per-task statistics.
//!
//! `cargo run --example workload_stats -- [n] [trace.csv]`

use llm_routing::latency::{HardwareProfile, Thresholds};
use llm_routing::workload::{generate_mixture, task_stats, ArrivalProcess, TaskSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> llm_routing::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(31_329);
    let (profile, thresholds) = (HardwareProfile::default(), Thresholds::default());
    let specs = TaskSpec::reference_mix(&profile, &thresholds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let trace = generate_mixture(&specs, n, ArrivalProcess::Poisson { rate: 20.0 }, &mut rng)?;
    let stats = task_stats(&trace, &thresholds, &profile)?;
    println!("{:<20} {:>7} {:>8} {:>8} {:>7}", "task", "count", "prompt", "decode", "heavy%");
    for (task, s) in stats.per_task.iter().map(|(k, v)| (k.as_str(), v)).chain([("overall", &stats.overall)]) {
        println!(
            "{task:<20} {:>7} {:>8.2} {:>8.2} {:>7.2}",
            s.count,
            s.mean_prompt,
            s.mean_decode,
            100.0 * s.heavy_decode_fraction
        );
    }
    if let Some(path) = args.next() {
        trace.write_csv(path.as_ref())?;
        println!("wrote {path}");
    }
    Ok(())
}
