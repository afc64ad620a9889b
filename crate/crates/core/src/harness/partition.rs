//! Exhaustive search over request-to-instance assignments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Instance, InstanceConfig};
use crate::latency::HardwareProfile;
use crate::workload::{Request, TaskKind};

/// Largest request set accepted; 2^14 simulations stays under a second.
pub const MAX_PARTITION_REQUESTS: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentScore {
    /// Instance of each request, in input order.
    pub assignment: Vec<usize>,
    /// Sum of per-request E2E latencies.
    pub total_e2e_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub best: f64,
    pub worst: f64,
    pub mean: f64,
    pub best_count: usize,
    pub log: Vec<AssignmentScore>,
}

impl PartitionResult {
    /// How much a uniformly random assignment loses against the optimum.
    pub fn mean_over_best(&self) -> f64 {
        self.mean / self.best - 1.0
    }

    pub fn best_assignment(&self) -> &AssignmentScore {
        self.log
            .iter()
            .find(|a| a.total_e2e_s == self.best)
            .expect("best is taken from the log")
    }
}

/// Simulates one fixed assignment. Each instance sees its requests in
/// arrival order and runs independently.
pub fn score_assignment(
    requests: &[Request],
    assignment: &[usize],
    m: usize,
    instance: InstanceConfig,
    profile: HardwareProfile,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..requests.len()).collect();
    order.sort_by(|&a, &b| requests[a].arrival_time.total_cmp(&requests[b].arrival_time).then(a.cmp(&b)));
    let mut total = 0.0;
    for k in 0..m {
        let mut inst = Instance::new(instance, profile);
        for &i in order.iter().filter(|&&i| assignment[i] == k) {
            let r = &requests[i];
            inst.run_until(r.arrival_time);
            inst.enqueue(r.clone(), r.arrival_time)?;
        }
        inst.run_until(f64::INFINITY);
        total += inst
            .finished()
            .iter()
            .map(|r| r.completion_time.expect("finished") - r.arrival_time)
            .sum::<f64>();
    }
    Ok(total)
}

/// Scores all 2^n assignments of `requests` to two instances.
pub fn brute_force_partition(requests: &[Request], instance: InstanceConfig, profile: HardwareProfile) -> Result<PartitionResult> {
    let n = requests.len();
    if n == 0 {
        return Err(Error::Empty("partition request set"));
    }
    if n > MAX_PARTITION_REQUESTS {
        return Err(Error::TooManyRequests {
            n,
            max: MAX_PARTITION_REQUESTS,
        });
    }
    instance.validate()?;
    profile.validate()?;
    let mut log = Vec::with_capacity(1 << n);
    for mask in 0u32..(1 << n) {
        let assignment: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
        let total_e2e_s = score_assignment(requests, &assignment, 2, instance, profile)?;
        log.push(AssignmentScore { assignment, total_e2e_s });
    }
    let best = log.iter().map(|a| a.total_e2e_s).fold(f64::INFINITY, f64::min);
    let worst = log.iter().map(|a| a.total_e2e_s).fold(f64::NEG_INFINITY, f64::max);
    let mean = log.iter().map(|a| a.total_e2e_s).sum::<f64>() / log.len() as f64;
    let best_count = log.iter().filter(|a| a.total_e2e_s == best).count();
    Ok(PartitionResult {
        best,
        worst,
        mean,
        best_count,
        log,
    })
}

/// `n` requests arriving every `interval` seconds with prompt and decode
/// lengths uniform in `lo..=hi`.
pub fn uniform_requests<R: Rng + ?Sized>(n: usize, interval: f64, lo: usize, hi: usize, rng: &mut R) -> Vec<Request> {
    (0..n)
        .map(|i| {
            let p = rng.random_range(lo..=hi);
            let d = rng.random_range(lo..=hi);
            Request::new(i as u64, TaskKind::QnA, p, d, i as f64 * interval)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(reqs: &[Request]) -> PartitionResult {
        brute_force_partition(reqs, InstanceConfig::default(), HardwareProfile::default()).unwrap()
    }

    #[test]
    fn single_request_is_flat() {
        let r = run(&[Request::new(0, TaskKind::QnA, 50, 50, 0.0)]);
        assert_eq!(r.best, r.worst);
        assert_eq!(r.best, r.mean);
        assert_eq!(r.log.len(), 2);
    }

    #[test]
    fn mirror_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = uniform_requests(3, 0.5, 10, 100, &mut rng);
        let mut reqs = base.clone();
        reqs.extend(base.iter().enumerate().map(|(i, r)| {
            let mut r = r.clone();
            r.id = 10 + i as u64;
            r
        }));
        let res = run(&reqs);
        assert_eq!(res.best_count % 2, 0);
        assert!(res.best <= res.mean && res.mean <= res.worst);
    }

    #[test]
    fn refuses_large_sets() {
        let reqs: Vec<_> = (0..15).map(|i| Request::new(i, TaskKind::QnA, 10, 10, i as f64)).collect();
        let e = brute_force_partition(&reqs, InstanceConfig::default(), HardwareProfile::default()).unwrap_err();
        assert!(e.to_string().contains("14"), "{e}");
    }

    #[test]
    fn splitting_overlap_beats_stacking() {
        // Two long requests arriving together: spreading them avoids the
        // second one's prefill stalling the first.
        let reqs = vec![
            Request::new(0, TaskKind::QnA, 800, 200, 0.0),
            Request::new(1, TaskKind::QnA, 800, 200, 0.01),
        ];
        let res = run(&reqs);
        let split = res.log.iter().find(|a| a.assignment == [0, 1]).unwrap().total_e2e_s;
        let stacked = res.log.iter().find(|a| a.assignment == [0, 0]).unwrap().total_e2e_s;
        assert!(split < stacked);
        assert_eq!(res.best, split);
    }
}
