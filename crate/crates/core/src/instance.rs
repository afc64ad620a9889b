//! One simulated model replica with iteration-level batching.
//!
//! Every call to [`Instance::step`] runs one forward pass. A pass that has
//! any request still in its prompt phase is a prefill pass; without chunking
//! the co-running decodes stall for it. KV memory is counted in tokens and
//! the most recently admitted request is evicted (and later recomputed) when
//! decode growth overflows it.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::HardwareProfile;
use crate::workload::{Request, RequestId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchingPolicy {
    #[default]
    Fcfs,
    BinPacking,
    LeastWorkLeft,
}

impl BatchingPolicy {
    pub const ALL: [BatchingPolicy; 3] = [Self::Fcfs, Self::BinPacking, Self::LeastWorkLeft];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fcfs => "fcfs",
            Self::BinPacking => "bin_packing",
            Self::LeastWorkLeft => "least_work_left",
        }
    }
}

impl fmt::Display for BatchingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BatchingPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown batching policy `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceConfig {
    pub kv_capacity_tokens: usize,
    pub max_batch_size: usize,
    pub batching_policy: BatchingPolicy,
    /// Per-iteration prompt-token budget; `None` disables chunked prefill.
    pub chunk_size: Option<usize>,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            kv_capacity_tokens: 16384,
            max_batch_size: 128,
            batching_policy: BatchingPolicy::Fcfs,
            chunk_size: None,
        }
    }
}

impl InstanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kv_capacity_tokens == 0 {
            return Err(Error::config("kv_capacity_tokens", "must be positive"));
        }
        if self.max_batch_size == 0 {
            return Err(Error::config("max_batch_size", "must be positive"));
        }
        if self.chunk_size == Some(0) {
            return Err(Error::config("chunk_size", "must be positive when set"));
        }
        Ok(())
    }
}

/// A request resident on an instance, with its per-instance progress.
#[derive(Debug, Clone)]
pub struct Slot {
    pub request: Request,
    pub prompt_remaining: usize,
    /// Decode length the scheduler plans with (a prediction, or the truth
    /// when none was supplied).
    pub expected_decode: usize,
    admitted_seq: u64,
}

impl Slot {
    /// KV tokens materialised right now.
    pub fn kv_tokens(&self) -> usize {
        self.request.prompt_tokens - self.prompt_remaining + self.request.tokens_emitted
    }

    /// KV tokens the slot needs once its pending prefill has run.
    pub fn footprint(&self) -> usize {
        self.request.prompt_tokens + self.request.tokens_emitted
    }

    pub fn in_prompt_phase(&self) -> bool {
        self.prompt_remaining > 0
    }

    /// Decode tokens still expected, by the scheduler's estimate.
    pub fn expected_remaining(&self) -> usize {
        self.expected_decode.saturating_sub(self.request.tokens_emitted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IterationKind {
    Idle,
    Prefill,
    Decode,
    /// Chunked prefill with decodes riding along.
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub kind: IterationKind,
    pub elapsed: f64,
    pub admitted: Vec<RequestId>,
    pub completed: Vec<RequestId>,
    pub preempted: Vec<RequestId>,
    pub first_tokens: Vec<RequestId>,
    pub tokens_emitted: usize,
    pub prompt_tokens_processed: usize,
    /// Decode requests that waited out this iteration.
    pub stalled: usize,
}

/// Per-bucket view of an instance, as seen by a router.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFeatures {
    pub prompt_counts: Vec<usize>,
    pub decode_counts: Vec<usize>,
    pub capacity: f64,
    /// Estimated seconds until the earliest running request finishes.
    pub earliest_completion: f64,
    pub pending_prompt_tokens: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceCounters {
    pub iterations: usize,
    pub prefill_iterations: usize,
    /// Prefill iterations during which at least one decode was held back.
    pub stall_iterations: usize,
    pub preemptions: usize,
    pub tokens_emitted: usize,
    pub busy_time: f64,
}

#[derive(Debug, Clone)]
pub struct Instance {
    config: InstanceConfig,
    profile: HardwareProfile,
    running: Vec<Slot>,
    waiting: VecDeque<Slot>,
    present: HashSet<RequestId>,
    clock: f64,
    admit_seq: u64,
    preemption_log: Vec<(f64, RequestId)>,
    /// (iteration end time, tokens emitted in that iteration)
    emission_log: Vec<(f64, usize)>,
    finished: Vec<Request>,
    counters: InstanceCounters,
}

/// Index of the half-open bucket `[edges[i-1], edges[i])` holding `value`.
pub fn bucket_index(edges: &[usize], value: usize) -> usize {
    edges.partition_point(|&e| e <= value)
}

impl Instance {
    pub fn new(config: InstanceConfig, profile: HardwareProfile) -> Self {
        Self {
            config,
            profile,
            running: Vec::new(),
            waiting: VecDeque::new(),
            present: HashSet::new(),
            clock: 0.0,
            admit_seq: 0,
            preemption_log: Vec::new(),
            emission_log: Vec::new(),
            finished: Vec::new(),
            counters: InstanceCounters::default(),
        }
    }

    pub fn config(&self) -> &InstanceConfig {
        &self.config
    }

    pub fn profile(&self) -> &HardwareProfile {
        &self.profile
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn running(&self) -> &[Slot] {
        &self.running
    }

    pub fn waiting(&self) -> impl ExactSizeIterator<Item = &Slot> {
        self.waiting.iter()
    }

    pub fn slots(&self) -> impl Iterator<Item = &Slot> {
        self.running.iter().chain(self.waiting.iter())
    }

    pub fn waiting_len(&self) -> usize {
        self.waiting.len()
    }

    pub fn len(&self) -> usize {
        self.running.len() + self.waiting.len()
    }

    pub fn is_idle(&self) -> bool {
        self.running.is_empty() && self.waiting.is_empty()
    }

    pub fn preemption_log(&self) -> &[(f64, RequestId)] {
        &self.preemption_log
    }

    pub fn emission_log(&self) -> &[(f64, usize)] {
        &self.emission_log
    }

    pub fn counters(&self) -> InstanceCounters {
        self.counters
    }

    /// Requests that finished since the last call.
    pub fn take_finished(&mut self) -> Vec<Request> {
        std::mem::take(&mut self.finished)
    }

    pub fn finished(&self) -> &[Request] {
        &self.finished
    }

    /// Whether the request could run here with nothing else resident.
    pub fn can_ever_fit(&self, request: &Request) -> bool {
        request.prompt_tokens + request.true_decode_tokens <= self.config.kv_capacity_tokens
    }

    pub fn enqueue(&mut self, request: Request, now: f64) -> Result<()> {
        let expected = request.true_decode_tokens;
        self.enqueue_with_estimate(request, now, expected)
    }

    /// Appends to the waiting queue; an idle instance's clock jumps to `now`.
    pub fn enqueue_with_estimate(&mut self, request: Request, now: f64, expected_decode: usize) -> Result<()> {
        if self.present.contains(&request.id) {
            return Err(Error::DuplicateRequest(request.id));
        }
        if !self.can_ever_fit(&request) {
            return Err(Error::Unschedulable {
                id: request.id,
                needed: request.prompt_tokens + request.true_decode_tokens,
                capacity: self.config.kv_capacity_tokens,
            });
        }
        if self.is_idle() && self.clock < now {
            self.clock = now;
        }
        self.present.insert(request.id);
        let prompt_remaining = request.prompt_tokens;
        self.waiting.push_back(Slot {
            request,
            prompt_remaining,
            expected_decode: expected_decode.max(1),
            admitted_seq: 0,
        });
        Ok(())
    }

    /// KV tokens currently materialised by running requests.
    pub fn occupied_kv(&self) -> usize {
        self.running.iter().map(Slot::kv_tokens).sum()
    }

    fn reserved_kv(&self) -> usize {
        self.running.iter().map(Slot::footprint).sum()
    }

    /// Free fraction of KV memory.
    pub fn capacity(&self) -> f64 {
        let used = self.occupied_kv() as f64 / self.config.kv_capacity_tokens as f64;
        (1.0 - used).clamp(0.0, 1.0)
    }

    /// KV tokens not yet promised to a running request.
    pub fn free_kv(&self) -> usize {
        self.config.kv_capacity_tokens.saturating_sub(self.reserved_kv())
    }

    /// Moves waiting requests into the running batch. Requests that were
    /// preempted sit at the front of the queue and are always considered
    /// first; fresh requests are then picked by the batching policy.
    pub fn select_batch(&mut self) -> Vec<RequestId> {
        let mut admitted = Vec::new();
        let mut free = self.free_kv();
        while let Some(front) = self.waiting.front() {
            if front.request.preemption_count == 0 {
                break;
            }
            if self.running.len() >= self.config.max_batch_size || front.footprint() > free {
                return admitted;
            }
            let slot = self.waiting.pop_front().expect("front exists");
            free -= slot.footprint();
            admitted.push(self.admit(slot));
        }
        loop {
            if self.running.len() >= self.config.max_batch_size || self.waiting.is_empty() {
                break;
            }
            let pick = match self.config.batching_policy {
                BatchingPolicy::Fcfs => {
                    let front = self.waiting.front().expect("non-empty");
                    (front.footprint() <= free).then_some(0)
                }
                // Ties keep the earliest arrival because the scan only
                // replaces on a strict improvement.
                BatchingPolicy::BinPacking => {
                    let mut best: Option<(usize, usize)> = None;
                    for (i, s) in self.waiting.iter().enumerate() {
                        let size = s.footprint();
                        if size <= free && best.is_none_or(|(_, b)| size > b) {
                            best = Some((i, size));
                        }
                    }
                    best.map(|(i, _)| i)
                }
                BatchingPolicy::LeastWorkLeft => {
                    let mut best: Option<(usize, usize)> = None;
                    for (i, s) in self.waiting.iter().enumerate() {
                        let work = s.expected_remaining();
                        if s.footprint() <= free && best.is_none_or(|(_, b)| work < b) {
                            best = Some((i, work));
                        }
                    }
                    best.map(|(i, _)| i)
                }
            };
            let Some(i) = pick else { break };
            let slot = self.waiting.remove(i).expect("index in range");
            free -= slot.footprint();
            admitted.push(self.admit(slot));
        }
        admitted
    }

    fn admit(&mut self, mut slot: Slot) -> RequestId {
        self.admit_seq += 1;
        slot.admitted_seq = self.admit_seq;
        let id = slot.request.id;
        self.running.push(slot);
        id
    }

    /// Runs one iteration. With nothing resident it returns an idle outcome
    /// with zero elapsed time.
    pub fn step(&mut self) -> IterationOutcome {
        let admitted = self.select_batch();
        let mut out = IterationOutcome {
            kind: IterationKind::Idle,
            elapsed: 0.0,
            admitted,
            completed: Vec::new(),
            preempted: Vec::new(),
            first_tokens: Vec::new(),
            tokens_emitted: 0,
            prompt_tokens_processed: 0,
            stalled: 0,
        };
        if self.running.is_empty() {
            return out;
        }
        let kv = self.occupied_kv();
        let chunked = self.config.chunk_size.is_some();
        let any_prefill = self.running.iter().any(Slot::in_prompt_phase);
        let mut emits = vec![false; self.running.len()];

        if any_prefill {
            let mut budget = self.config.chunk_size.unwrap_or(usize::MAX);
            for (i, slot) in self.running.iter_mut().enumerate() {
                if !slot.in_prompt_phase() {
                    if chunked {
                        emits[i] = true;
                    } else {
                        out.stalled += 1;
                    }
                    continue;
                }
                let take = slot.prompt_remaining.min(budget);
                if take == 0 {
                    continue;
                }
                slot.prompt_remaining -= take;
                budget -= take;
                out.prompt_tokens_processed += take;
                // The pass that finishes a prompt yields the next token.
                emits[i] = slot.prompt_remaining == 0;
            }
            out.elapsed = self.profile.prompt_batch_time(out.prompt_tokens_processed, kv);
            out.kind = if chunked && emits.iter().zip(&self.running).any(|(e, s)| *e && s.request.tokens_emitted > 0 && s.prompt_remaining == 0) {
                IterationKind::Mixed
            } else {
                IterationKind::Prefill
            };
            self.counters.prefill_iterations += 1;
            if out.stalled > 0 {
                self.counters.stall_iterations += 1;
            }
        } else {
            emits.iter_mut().for_each(|e| *e = true);
            out.elapsed = self.profile.decode_batch_time(kv);
            out.kind = IterationKind::Decode;
        }

        self.clock += out.elapsed;
        self.counters.iterations += 1;
        self.counters.busy_time += out.elapsed;
        let now = self.clock;
        for (slot, _) in self.running.iter_mut().zip(&emits).filter(|(_, e)| **e) {
            let r = &mut slot.request;
            r.tokens_emitted += 1;
            out.tokens_emitted += 1;
            if r.first_token_time.is_none() {
                r.first_token_time = Some(now);
                out.first_tokens.push(r.id);
            }
        }
        self.counters.tokens_emitted += out.tokens_emitted;
        if out.tokens_emitted > 0 {
            self.emission_log.push((now, out.tokens_emitted));
        }

        let mut i = 0;
        while i < self.running.len() {
            if self.running[i].request.is_complete() {
                let mut slot = self.running.remove(i);
                slot.request.completion_time = Some(now);
                self.present.remove(&slot.request.id);
                out.completed.push(slot.request.id);
                self.finished.push(slot.request);
            } else {
                i += 1;
            }
        }
        out.preempted = self.preempt_if_needed();
        out
    }

    /// Evicts the most recently admitted requests until the materialised KV
    /// fits. Evicted requests go back to the front of the queue and will
    /// recompute their prompt.
    pub fn preempt_if_needed(&mut self) -> Vec<RequestId> {
        let mut evicted = Vec::new();
        while self.occupied_kv() > self.config.kv_capacity_tokens && self.running.len() > 1 {
            let newest = self
                .running
                .iter()
                .enumerate()
                .max_by_key(|(_, s)| s.admitted_seq)
                .map(|(i, _)| i)
                .expect("non-empty");
            let mut slot = self.running.remove(newest);
            slot.prompt_remaining = slot.request.prompt_tokens;
            slot.request.preemption_count += 1;
            self.preemption_log.push((self.clock, slot.request.id));
            self.counters.preemptions += 1;
            evicted.push(slot.request.id);
            self.waiting.push_front(slot);
        }
        evicted
    }

    /// Steps until the clock reaches `until` or the instance runs dry. An
    /// iteration that starts before `until` always runs to completion. Idle
    /// time is skipped by moving the clock forward.
    pub fn run_until(&mut self, until: f64) -> Vec<IterationOutcome> {
        let mut outcomes = Vec::new();
        while self.clock < until && !self.is_idle() {
            outcomes.push(self.step());
        }
        if self.is_idle() && self.clock < until {
            self.clock = until;
        }
        outcomes
    }

    /// Per-bucket counts for prompt-phase requests (by prompt length) and
    /// decode-phase requests (by expected remaining decode tokens).
    pub fn snapshot(&self, prompt_edges: &[usize], decode_edges: &[usize]) -> InstanceFeatures {
        let mut prompt_counts = vec![0; prompt_edges.len() + 1];
        let mut decode_counts = vec![0; decode_edges.len() + 1];
        let mut pending_prompt_tokens = 0;
        for s in self.slots() {
            if s.in_prompt_phase() {
                prompt_counts[bucket_index(prompt_edges, s.request.prompt_tokens)] += 1;
                pending_prompt_tokens += s.prompt_remaining;
            } else {
                decode_counts[bucket_index(decode_edges, s.expected_remaining())] += 1;
            }
        }
        let min_left = self.running.iter().map(Slot::expected_remaining).min().unwrap_or(0);
        InstanceFeatures {
            prompt_counts,
            decode_counts,
            capacity: self.capacity(),
            earliest_completion: self.profile.estimate_instance_available(min_left),
            pending_prompt_tokens,
        }
    }

    /// `(prompt tokens, decode tokens emitted)` for every resident request.
    pub fn load(&self) -> Vec<(usize, usize)> {
        self.slots()
            .map(|s| (s.request.prompt_tokens, s.request.tokens_emitted))
            .collect()
    }
}
