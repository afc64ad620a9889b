//! Scores all 256 ways of splitting eight short requests over two
//! instances and compares the optimum with a random split.

use llm_routing::harness::{brute_force_partition, uniform_requests};
use llm_routing::instance::InstanceConfig;
use llm_routing::latency::HardwareProfile;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> llm_routing::error::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reqs = uniform_requests(8, 1.0, 10, 100, &mut rng);
    for r in &reqs {
        println!("request {} at {:.0} s: prompt {}, decode {}", r.id, r.arrival_time, r.prompt_tokens, r.true_decode_tokens);
    }
    let res = brute_force_partition(&reqs, InstanceConfig::default(), HardwareProfile::default())?;
    println!(
        "summed E2E: best {:.3} s, mean {:.3} s, worst {:.3} s ({} optimal assignments)",
        res.best, res.mean, res.worst, res.best_count
    );
    println!("best assignment {:?}", res.best_assignment().assignment);
    println!("random assignment costs {:.2}% more than the best", 100.0 * res.mean_over_best());
    Ok(())
}
