//! Iteration costs and request classes under the default hardware profile.

use llm_routing::latency::{classify_request, HardwareProfile, Thresholds};

fn main() {
    let p = HardwareProfile::default();
    let t = Thresholds::default();
    println!("solo (1000, 1000): {:.2} s", p.estimate_request_time(1000, 1000));
    println!(
        "heavy prompt from {} tokens, heavy decode from {} tokens",
        t.min_heavy_prompt_tokens(&p),
        t.min_heavy_decode_tokens(&p)
    );
    println!("{:>8} {:>10} {:>14}", "tokens", "prefill s", "decode iter s");
    for n in [128, 512, 1024, 2048, 4096, 8192, 16384] {
        println!("{n:>8} {:>10.4} {:>14.5}", p.prompt_batch_time(n, 0), p.decode_batch_time(n));
    }
    for (prompt, decode) in [(50, 50), (50, 800), (2000, 50), (2000, 800)] {
        println!("({prompt:>4}, {decode:>3}) -> {}", classify_request(&p, &t, prompt, decode));
    }
}
