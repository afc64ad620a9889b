use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::env::RoutingEnv;
use crate::impact::best_instance;
use crate::instance::Instance;

/// How often the capacity-based router refreshes its view of free memory.
pub const CAPACITY_REFRESH_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicPolicy {
    RoundRobin,
    /// Last instance takes heavy-decode requests, the rest share the others.
    DedicatedSmallLarge,
    /// Least outstanding true decode tokens.
    DecodeBalancer,
    /// Least estimated prompt plus decode tokens outstanding.
    Jsq,
    /// Most free KV memory, from a snapshot refreshed once a second.
    MaxCapacity,
    /// Earliest estimated completion for the head request.
    MinMin,
    /// First instance with room for the head request.
    EarliestAvailable,
    /// Highest mixing score from the impact estimator.
    ImpactGreedy,
}

impl HeuristicPolicy {
    pub const ALL: [HeuristicPolicy; 8] = [
        Self::RoundRobin,
        Self::DedicatedSmallLarge,
        Self::DecodeBalancer,
        Self::Jsq,
        Self::MaxCapacity,
        Self::MinMin,
        Self::EarliestAvailable,
        Self::ImpactGreedy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::RoundRobin => "round_robin",
            Self::DedicatedSmallLarge => "dedicated_small_large",
            Self::DecodeBalancer => "decode_balancer",
            Self::Jsq => "jsq",
            Self::MaxCapacity => "max_capacity",
            Self::MinMin => "min_min",
            Self::EarliestAvailable => "earliest_available",
            Self::ImpactGreedy => "impact_greedy",
        }
    }
}

impl fmt::Display for HeuristicPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeuristicPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown routing policy `{s}`"))
    }
}

/// Lowest index minimising `key`.
fn argmin_by<F: Fn(usize) -> f64>(n: usize, key: F) -> usize {
    let mut best = 0;
    let mut best_v = key(0);
    for i in 1..n {
        let v = key(i);
        if v < best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

fn outstanding_true_decode(inst: &Instance) -> usize {
    inst.slots().map(|s| s.request.remaining_decode()).sum()
}

fn outstanding_estimated_tokens(inst: &Instance) -> usize {
    inst.slots().map(|s| s.prompt_remaining + s.expected_remaining()).sum()
}

/// Seconds until the instance has worked off its resident requests, by the
/// latency estimates: pending prefill plus the longest expected decode.
fn estimated_ready(inst: &Instance) -> f64 {
    let p = inst.profile();
    let prefill: usize = inst.slots().map(|s| s.prompt_remaining).sum();
    let longest = inst.slots().map(|s| s.expected_remaining()).max().unwrap_or(0);
    prefill as f64 * p.prompt_time_per_token + p.estimate_instance_available(longest)
}

/// A stateful heuristic router. Always routes the head of the queue.
#[derive(Debug, Clone)]
pub struct HeuristicRouter {
    policy: HeuristicPolicy,
    next: usize,
    capacity_view: Vec<f64>,
    refreshed_at: Option<f64>,
}

impl HeuristicRouter {
    pub fn new(policy: HeuristicPolicy) -> Self {
        Self {
            policy,
            next: 0,
            capacity_view: Vec::new(),
            refreshed_at: None,
        }
    }

    pub fn policy(&self) -> HeuristicPolicy {
        self.policy
    }

    fn round_robin(&mut self, n: usize) -> usize {
        let a = self.next % n;
        self.next = (a + 1) % n;
        a
    }

    /// Action for the current tick; `instances` (defer) when the queue is
    /// empty or the policy holds the request back.
    pub fn route(&mut self, env: &RoutingEnv) -> usize {
        let insts = env.instances();
        let m = insts.len();
        let Some(head) = env.head() else { return m };
        let d_hat = env.expected_decode(head);
        match self.policy {
            HeuristicPolicy::RoundRobin => self.round_robin(m),
            HeuristicPolicy::DedicatedSmallLarge => {
                let cfg = env.config();
                if m == 1 {
                    0
                } else if cfg.thresholds.is_heavy_decode(&cfg.profile, head.true_decode_tokens) {
                    m - 1
                } else {
                    self.round_robin(m - 1)
                }
            }
            HeuristicPolicy::DecodeBalancer => argmin_by(m, |i| outstanding_true_decode(&insts[i]) as f64),
            HeuristicPolicy::Jsq => argmin_by(m, |i| outstanding_estimated_tokens(&insts[i]) as f64),
            HeuristicPolicy::MaxCapacity => {
                let stale = self.refreshed_at.is_none_or(|t| env.clock() - t >= CAPACITY_REFRESH_S - 1e-9);
                if stale || self.capacity_view.len() != m {
                    self.capacity_view = insts
                        .iter()
                        .map(|i| {
                            let queued: usize = i.waiting().map(|s| s.footprint()).sum();
                            i.free_kv() as f64 - queued as f64
                        })
                        .collect();
                    self.refreshed_at = Some(env.clock());
                }
                let need = (head.prompt_tokens + d_hat) as f64;
                let best = argmin_by(m, |i| -self.capacity_view[i]);
                if self.capacity_view[best] >= need {
                    self.capacity_view[best] -= need;
                    best
                } else {
                    m
                }
            }
            HeuristicPolicy::MinMin => argmin_by(m, |i| estimated_ready(&insts[i])),
            HeuristicPolicy::EarliestAvailable => {
                let need = head.prompt_tokens + d_hat;
                let queued = |i: &Instance| i.waiting().map(|s| s.footprint()).sum::<usize>();
                insts
                    .iter()
                    .position(|i| i.free_kv().saturating_sub(queued(i)) >= need)
                    .unwrap_or(m)
            }
            HeuristicPolicy::ImpactGreedy => {
                best_instance(&env.config().impact, head.prompt_tokens, d_hat, &env.loads()).unwrap_or(m)
            }
        }
    }
}
