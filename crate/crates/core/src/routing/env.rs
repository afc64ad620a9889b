use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::reward::{pending_penalty, RewardConfig};
use super::state::encode_state;
use crate::error::{Error, Result};
use crate::impact::{heuristic_h, ImpactConfig};
use crate::instance::{Instance, InstanceConfig};
use crate::latency::{HardwareProfile, Thresholds};
use crate::predictor::{BucketScheme, Predictor};
use crate::workload::{ArrivalTrace, Request, RequestId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub instances: usize,
    pub instance: InstanceConfig,
    pub profile: HardwareProfile,
    pub thresholds: Thresholds,
    /// Simulated seconds between routing decisions.
    pub dt: f64,
    pub prediction_scheme: BucketScheme,
    pub state_scheme: BucketScheme,
    pub impact: ImpactConfig,
    pub reward: RewardConfig,
    /// Episode is cut off once the clock passes this many seconds.
    pub max_time: f64,
    /// Keep one row per tick for the time-series report.
    pub record_ticks: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            instances: 4,
            instance: InstanceConfig::default(),
            profile: HardwareProfile::default(),
            thresholds: Thresholds::default(),
            dt: 0.02,
            prediction_scheme: BucketScheme::prediction_default(),
            state_scheme: BucketScheme::state_default(),
            impact: ImpactConfig::default(),
            reward: RewardConfig::default(),
            max_time: 1.0e5,
            record_ticks: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 {
            return Err(Error::config("instances", "at least one instance is required"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt", "must be positive"));
        }
        if !(self.max_time > 0.0) {
            return Err(Error::config("max_time", "must be positive"));
        }
        self.instance.validate()?;
        self.profile.validate()?;
        self.thresholds.validate()?;
        self.impact.validate()?;
        self.reward.validate()
    }

    pub fn state_dim(&self) -> usize {
        6 * self.instances + 3
    }

    pub fn num_actions(&self) -> usize {
        self.instances + 1
    }
}

/// Everything that happened in one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    /// Reward without the heuristic term.
    pub base_reward: f64,
    pub h: f64,
    pub shaping_coefficient: f64,
    pub completions: usize,
    pub routed: Option<(RequestId, usize)>,
    /// The action named an instance that can never hold the head request.
    pub rejected: bool,
    pub done: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub tick: u64,
    pub action: usize,
    pub reward: f64,
    pub base_reward: f64,
    pub h: f64,
    pub shaping_coefficient: f64,
    pub queue_len: usize,
    pub occupancy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickSample {
    pub tick: u64,
    pub time: f64,
    pub router_queue: usize,
    pub instance_waiting: Vec<usize>,
    pub instance_running: Vec<usize>,
    pub tokens_emitted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletedRequest {
    pub request: Request,
    pub instance: usize,
    pub routed_at: f64,
}

/// The routing environment: a router queue in front of `m` instances,
/// advanced in fixed ticks with one routing decision per tick.
#[derive(Debug, Clone)]
pub struct RoutingEnv {
    config: EnvConfig,
    instances: Vec<Instance>,
    queue: VecDeque<Request>,
    arrivals: VecDeque<Request>,
    routed_at: BTreeMap<RequestId, (usize, f64)>,
    completed: Vec<CompletedRequest>,
    total: usize,
    clock: f64,
    tick: u64,
    episode: usize,
    rejected_actions: usize,
    trajectory: Option<Vec<TrajectoryRecord>>,
    samples: Vec<TickSample>,
    truncated: bool,
}

impl RoutingEnv {
    /// Builds a fresh episode over `trace`. Predicted buckets are drawn up
    /// front from a generator seeded with `seed`.
    pub fn new(config: EnvConfig, trace: &ArrivalTrace, predictor: &Predictor, seed: u64, episode: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arrivals: VecDeque<Request> = trace
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.predicted_bucket = Some(predictor.predict(&config.prediction_scheme, &r, &mut rng));
                r
            })
            .collect();
        let instances = (0..config.instances)
            .map(|_| Instance::new(config.instance, config.profile))
            .collect();
        let mut env = Self {
            total: arrivals.len(),
            config,
            instances,
            queue: VecDeque::new(),
            arrivals,
            routed_at: BTreeMap::new(),
            completed: Vec::new(),
            clock: 0.0,
            tick: 0,
            episode,
            rejected_actions: 0,
            trajectory: None,
            samples: Vec::new(),
            truncated: false,
        };
        env.admit_arrivals();
        Ok(env)
    }

    pub fn with_trajectory_log(mut self) -> Self {
        self.trajectory = Some(Vec::new());
        self
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn queue(&self) -> &VecDeque<Request> {
        &self.queue
    }

    pub fn head(&self) -> Option<&Request> {
        self.queue.front()
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn completed(&self) -> &[CompletedRequest] {
        &self.completed
    }

    pub fn total_requests(&self) -> usize {
        self.total
    }

    pub fn rejected_actions(&self) -> usize {
        self.rejected_actions
    }

    pub fn trajectory(&self) -> Option<&[TrajectoryRecord]> {
        self.trajectory.as_deref()
    }

    pub fn samples(&self) -> &[TickSample] {
        &self.samples
    }

    pub fn is_done(&self) -> bool {
        self.completed.len() == self.total || self.truncated
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    /// Decode length the router plans with: the upper bound of the
    /// predicted bucket.
    pub fn expected_decode(&self, request: &Request) -> usize {
        match request.predicted_bucket {
            Some(b) => self.config.prediction_scheme.upper_bound(b),
            None => request.true_decode_tokens,
        }
    }

    pub fn state(&self) -> Vec<f64> {
        encode_state(self)
    }

    /// `(p_j, d_j)` pairs resident on every instance.
    pub fn loads(&self) -> Vec<Vec<(usize, usize)>> {
        self.instances.iter().map(Instance::load).collect()
    }

    /// Heuristic term for sending the head request to `action`.
    pub fn heuristic(&self, action: usize) -> f64 {
        match self.queue.front() {
            Some(head) if action < self.instances.len() => heuristic_h(
                &self.config.impact,
                head.prompt_tokens,
                self.expected_decode(head),
                &self.loads(),
                action,
            ),
            _ => 0.0,
        }
    }

    /// Latency term of the reward summed over every request that has
    /// arrived and not yet completed.
    pub fn pending_term(&self) -> f64 {
        let p = &self.config.profile;
        let queued: f64 = self
            .queue
            .iter()
            .map(|r| {
                let d = self.expected_decode(r);
                pending_penalty(p.estimate_request_time(r.prompt_tokens, d), 0, d)
            })
            .sum();
        let resident: f64 = self
            .instances
            .iter()
            .flat_map(Instance::slots)
            .map(|s| {
                let d = s.expected_decode;
                pending_penalty(p.estimate_request_time(s.request.prompt_tokens, d), s.request.tokens_emitted, d)
            })
            .sum();
        queued + resident
    }

    fn admit_arrivals(&mut self) {
        while self.arrivals.front().is_some_and(|r| r.arrival_time <= self.clock) {
            let r = self.arrivals.pop_front().expect("front exists");
            self.queue.push_back(r);
        }
    }

    /// Applies `action` (an instance index, or `instances` to defer),
    /// advances the cluster by one tick and scores the transition.
    pub fn step(&mut self, action: usize) -> StepOutcome {
        let m = self.instances.len();
        assert!(action <= m, "action {action} out of range 0..={m}");
        let h = self.heuristic(action);
        let mut routed = None;
        let mut rejected = false;
        if action < m {
            if let Some(head) = self.queue.front() {
                if self.instances[action].can_ever_fit(head) {
                    let r = self.queue.pop_front().expect("head exists");
                    let id = r.id;
                    let d = self.expected_decode(&r);
                    self.instances[action]
                        .enqueue_with_estimate(r, self.clock, d)
                        .expect("id unique and request fits");
                    self.routed_at.insert(id, (action, self.clock));
                    routed = Some((id, action));
                } else {
                    warn!("request {} cannot fit on instance {action}; deferring", head.id);
                    self.rejected_actions += 1;
                    rejected = true;
                }
            }
        }

        let target = self.clock + self.config.dt;
        let mut tokens = 0;
        let mut completions = 0;
        for (i, inst) in self.instances.iter_mut().enumerate() {
            tokens += inst.run_until(target).iter().map(|o| o.tokens_emitted).sum::<usize>();
            for request in inst.take_finished() {
                completions += 1;
                let routed_at = self.routed_at.remove(&request.id).map_or(request.arrival_time, |(_, t)| t);
                self.completed.push(CompletedRequest {
                    request,
                    instance: i,
                    routed_at,
                });
            }
        }
        self.clock = target;
        self.tick += 1;
        self.admit_arrivals();

        let c_k = self.config.reward.shaping_coefficient(self.episode);
        let base_reward = -self.pending_term() + self.config.reward.r_w * completions as f64;
        let reward = base_reward - c_k * h;
        if self.completed.len() < self.total && self.clock >= self.config.max_time {
            self.truncated = true;
        }
        if self.config.record_ticks {
            self.samples.push(TickSample {
                tick: self.tick,
                time: self.clock,
                router_queue: self.queue.len(),
                instance_waiting: self.instances.iter().map(Instance::waiting_len).collect(),
                instance_running: self.instances.iter().map(|i| i.running().len()).collect(),
                tokens_emitted: tokens,
            });
        }
        if let Some(log) = self.trajectory.as_mut() {
            log.push(TrajectoryRecord {
                tick: self.tick,
                action,
                reward,
                base_reward,
                h,
                shaping_coefficient: c_k,
                queue_len: self.queue.len(),
                occupancy: self.instances.iter().map(|i| 1.0 - i.capacity()).collect(),
            });
        }
        StepOutcome {
            reward,
            base_reward,
            h,
            shaping_coefficient: c_k,
            completions,
            routed,
            rejected,
            done: self.is_done(),
            truncated: self.truncated,
        }
    }

    /// Instance a request was sent to, if it has been routed.
    pub fn assignment(&self, id: RequestId) -> Option<usize> {
        self.routed_at
            .get(&id)
            .map(|&(i, _)| i)
            .or_else(|| self.completed.iter().find(|c| c.request.id == id).map(|c| c.instance))
    }
}

/// Writes a trajectory log as CSV: tick, action, reward, base reward, h,
/// shaping coefficient, queue length and one occupancy column per instance.
pub fn write_trajectory_csv(records: &[TrajectoryRecord], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let m = records.first().map_or(0, |r| r.occupancy.len());
    write!(out, "tick,action,reward,base_reward,h,shaping_coefficient,queue_len")?;
    for i in 0..m {
        write!(out, ",occupancy_{i}")?;
    }
    writeln!(out)?;
    for r in records {
        write!(
            out,
            "{},{},{},{},{},{},{}",
            r.tick, r.action, r.reward, r.base_reward, r.h, r.shaping_coefficient, r.queue_len
        )?;
        for o in &r.occupancy {
            write!(out, ",{o}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a log written by [`write_trajectory_csv`].
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let f = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Trace {
                    path: path.to_path_buf(),
                    line: out.len() + 2,
                    reason: format!("bad field {i}"),
                })
        };
        out.push(TrajectoryRecord {
            tick: f(0)? as u64,
            action: f(1)? as usize,
            reward: f(2)?,
            base_reward: f(3)?,
            h: f(4)?,
            shaping_coefficient: f(5)?,
            queue_len: f(6)? as usize,
            occupancy: (7..row.len()).map(f).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}
