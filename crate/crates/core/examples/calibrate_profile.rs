//! Recovers a hardware profile from noisy iteration timings.

use llm_routing::harness::{calibrate, LatencySample, Phase};
use llm_routing::latency::HardwareProfile;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> llm_routing::error::Result<()> {
    let truth = HardwareProfile {
        prompt_time_per_token: 2.5e-4,
        prompt_time_intercept: 0.02,
        decode_time_per_token: 2.0e-6,
        decode_time_base: 0.012,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(1.0, 0.02).expect("valid");
    let mut samples = Vec::new();
    for _ in 0..400 {
        let kv = rng.random_range(0..16_000);
        if rng.random::<bool>() {
            let bt = rng.random_range(16..4096);
            samples.push(LatencySample {
                phase: Phase::Prefill,
                batch_tokens: bt,
                kv_tokens: kv,
                latency_s: truth.prompt_batch_time(bt, kv) * noise.sample(&mut rng),
            });
        } else {
            samples.push(LatencySample {
                phase: Phase::Decode,
                batch_tokens: 0,
                kv_tokens: kv,
                latency_s: truth.decode_batch_time(kv) * noise.sample(&mut rng),
            });
        }
    }
    let fit = calibrate(&samples)?;
    println!("true   {truth:?}");
    println!("fitted {:?}", fit.profile);
    println!("rmse {:.2e} s over {} samples", fit.rmse_s, fit.samples);
    Ok(())
}
