//! Interference of late-joining requests on a long-running one.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::instance::{Instance, InstanceConfig, IterationKind};
use crate::latency::HardwareProfile;
use crate::workload::{Request, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingProtocol {
    pub prompt_tokens: usize,
    pub decode_tokens: usize,
    pub injected_prompt_tokens: usize,
    pub injected_decode_tokens: usize,
    /// A new request joins every this many iterations.
    pub every: usize,
}

impl Default for MixingProtocol {
    fn default() -> Self {
        Self {
            prompt_tokens: 1000,
            decode_tokens: 1000,
            injected_prompt_tokens: 500,
            injected_decode_tokens: 500,
            every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub start_s: f64,
    pub elapsed_s: f64,
    pub kind: IterationKind,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingResult {
    /// E2E of the first request with injections.
    pub mixed_e2e_s: f64,
    /// E2E of the first request served alone.
    pub solo_e2e_s: f64,
    pub estimate_s: f64,
    pub injected: usize,
    pub iterations: Vec<IterationTrace>,
}

fn run(p: &MixingProtocol, inject: bool, instance: InstanceConfig, profile: HardwareProfile) -> Result<(f64, usize, Vec<IterationTrace>)> {
    let mut inst = Instance::new(instance, profile);
    inst.enqueue(Request::new(0, TaskKind::QnA, p.prompt_tokens, p.decode_tokens, 0.0), 0.0)?;
    let mut next_id = 1;
    let mut trace = Vec::new();
    let mut iteration = 0;
    let mut first_done = None;
    while first_done.is_none() {
        if inject && iteration > 0 && iteration % p.every == 0 {
            let now = inst.clock();
            inst.enqueue(
                Request::new(next_id, TaskKind::QnA, p.injected_prompt_tokens, p.injected_decode_tokens, now),
                now,
            )?;
            next_id += 1;
        }
        let start_s = inst.clock();
        let batch = inst.running().len();
        let out = inst.step();
        trace.push(IterationTrace {
            iteration,
            start_s,
            elapsed_s: out.elapsed,
            kind: out.kind,
            batch: batch.max(out.admitted.len()),
        });
        if out.completed.contains(&0) {
            first_done = Some(inst.clock());
        }
        iteration += 1;
    }
    Ok((first_done.expect("loop exit"), next_id as usize - 1, trace))
}

/// Runs the protocol once with injections and once alone.
pub fn mixing_protocol(p: &MixingProtocol, instance: InstanceConfig, profile: HardwareProfile) -> Result<MixingResult> {
    let (mixed, injected, iterations) = run(p, true, instance, profile)?;
    let (solo, _, _) = run(p, false, instance, profile)?;
    Ok(MixingResult {
        mixed_e2e_s: mixed,
        solo_e2e_s: solo,
        estimate_s: profile.estimate_request_time(p.prompt_tokens, p.decode_tokens),
        injected,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn injections_slow_the_first_request() {
        let r = mixing_protocol(&MixingProtocol::default(), InstanceConfig::default(), HardwareProfile::default()).unwrap();
        assert!(r.mixed_e2e_s > 1.4 * r.solo_e2e_s, "{} vs {}", r.mixed_e2e_s, r.solo_e2e_s);
        assert!((r.solo_e2e_s - r.estimate_s).abs() < 0.1 * r.estimate_s);
        assert!(r.injected >= 19);
        // Every injection shows up as a prefill spike.
        let spikes = r.iterations.iter().filter(|t| t.kind == IterationKind::Prefill).count();
        assert_eq!(spikes, r.injected + 1);
    }

    #[test]
    fn chunking_keeps_decodes_moving() {
        let chunked = InstanceConfig {
            chunk_size: Some(256),
            ..Default::default()
        };
        let p = MixingProtocol::default();
        let plain = mixing_protocol(&p, InstanceConfig::default(), HardwareProfile::default()).unwrap();
        let r = mixing_protocol(&p, chunked, HardwareProfile::default()).unwrap();
        let max_gap = |r: &MixingResult| r.iterations.iter().skip(1).map(|t| t.elapsed_s).fold(0.0, f64::max);
        assert!(max_gap(&r) < max_gap(&plain));
    }
}
