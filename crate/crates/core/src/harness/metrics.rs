use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

use crate::error::{Error, Result};
use crate::latency::{HardwareProfile, RequestClass, Thresholds};
use crate::routing::{CompletedRequest, TickSample};
use crate::workload::{RequestId, TaskKind};

/// Latency breakdown of one completed request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestMetrics {
    pub id: RequestId,
    pub task: TaskKind,
    pub class: RequestClass,
    pub prompt_tokens: usize,
    pub decode_tokens: usize,
    pub arrival_s: f64,
    pub ttft_s: f64,
    /// Mean gap between output tokens; absent for one-token responses.
    pub tbt_s: Option<f64>,
    pub e2e_s: f64,
    pub preemptions: usize,
    pub instance: usize,
    pub router_wait_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let mut data = Data::new(values.to_vec());
        Some(Self {
            mean,
            p50: data.percentile(50),
            p90: data.percentile(90),
            p99: data.percentile(99),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub completed: usize,
    pub incomplete: usize,
    pub e2e: Distribution,
    pub ttft: Distribution,
    pub tbt: Option<Distribution>,
    pub router_wait: Distribution,
    /// First arrival to last completion.
    pub total_e2e_s: f64,
    pub sum_e2e_s: f64,
    pub total_tokens: usize,
    pub mean_throughput_tokens_per_s: f64,
    pub peak_throughput_tokens_per_s: f64,
    pub mean_router_queue: f64,
    pub mean_instance_queue: Vec<f64>,
    pub preemptions: usize,
    pub prefill_stalls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub summary: Summary,
    pub requests: Vec<RequestMetrics>,
    /// Tokens emitted in each one-second window, from t = 0.
    pub throughput: Vec<usize>,
}

/// Per-instance counters that are not visible from completed requests.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct InstanceTotals {
    pub preemptions: usize,
    pub prefill_stalls: usize,
}

pub fn request_metrics(c: &CompletedRequest, profile: &HardwareProfile, thresholds: &Thresholds) -> RequestMetrics {
    let r = &c.request;
    let first = r.first_token_time.expect("completed request has a first token");
    let done = r.completion_time.expect("completed request has a completion time");
    RequestMetrics {
        id: r.id,
        task: r.task,
        class: r.class(profile, thresholds),
        prompt_tokens: r.prompt_tokens,
        decode_tokens: r.tokens_emitted,
        arrival_s: r.arrival_time,
        ttft_s: first - r.arrival_time,
        tbt_s: (r.tokens_emitted > 1).then(|| (done - first) / (r.tokens_emitted - 1) as f64),
        e2e_s: done - r.arrival_time,
        preemptions: r.preemption_count,
        instance: c.instance,
        router_wait_s: c.routed_at - r.arrival_time,
    }
}

/// Aggregates completed requests and per-tick samples into a report.
/// Requests are listed in id order.
pub fn compute_metrics(
    completed: &[CompletedRequest],
    samples: &[TickSample],
    totals: InstanceTotals,
    incomplete: usize,
    profile: &HardwareProfile,
    thresholds: &Thresholds,
) -> Result<MetricsReport> {
    if completed.is_empty() {
        return Err(Error::Empty("completed request set"));
    }
    let mut requests: Vec<RequestMetrics> = completed.iter().map(|c| request_metrics(c, profile, thresholds)).collect();
    requests.sort_by_key(|r| r.id);

    let e2e: Vec<f64> = requests.iter().map(|r| r.e2e_s).collect();
    let ttft: Vec<f64> = requests.iter().map(|r| r.ttft_s).collect();
    let tbt: Vec<f64> = requests.iter().filter_map(|r| r.tbt_s).collect();
    let wait: Vec<f64> = requests.iter().map(|r| r.router_wait_s).collect();
    let first_arrival = requests.iter().map(|r| r.arrival_s).fold(f64::INFINITY, f64::min);
    let last_done = requests.iter().map(|r| r.arrival_s + r.e2e_s).fold(f64::NEG_INFINITY, f64::max);

    let mut throughput: Vec<usize> = Vec::new();
    let mut prev_time: f64 = 0.0;
    for s in samples {
        // Tokens of a tick are credited to the window its start falls in.
        let w = prev_time.max(0.0).floor() as usize;
        if throughput.len() <= w {
            throughput.resize(w + 1, 0);
        }
        throughput[w] += s.tokens_emitted;
        prev_time = s.time;
    }
    let total_tokens: usize = requests.iter().map(|r| r.decode_tokens).sum();
    let n_ticks = samples.len().max(1) as f64;
    let m = samples.first().map_or(0, |s| s.instance_waiting.len());
    let mean_instance_queue = (0..m)
        .map(|i| samples.iter().map(|s| s.instance_waiting[i] as f64).sum::<f64>() / n_ticks)
        .collect();

    Ok(MetricsReport {
        summary: Summary {
            completed: requests.len(),
            incomplete,
            e2e: Distribution::of(&e2e).expect("non-empty"),
            ttft: Distribution::of(&ttft).expect("non-empty"),
            tbt: Distribution::of(&tbt),
            router_wait: Distribution::of(&wait).expect("non-empty"),
            total_e2e_s: last_done - first_arrival,
            sum_e2e_s: e2e.iter().sum(),
            total_tokens,
            mean_throughput_tokens_per_s: if throughput.is_empty() {
                0.0
            } else {
                throughput.iter().sum::<usize>() as f64 / throughput.len() as f64
            },
            peak_throughput_tokens_per_s: throughput.iter().copied().max().unwrap_or(0) as f64,
            mean_router_queue: samples.iter().map(|s| s.router_queue as f64).sum::<f64>() / n_ticks,
            mean_instance_queue,
            preemptions: totals.preemptions,
            prefill_stalls: totals.prefill_stalls,
        },
        requests,
        throughput,
    })
}
