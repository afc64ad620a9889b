use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{scenario_label, ExperimentConfig, PredictorChoice, RoutingChoice, WorkloadSource};
use super::metrics::{compute_metrics, InstanceTotals, MetricsReport, Summary};
use crate::error::{Error, Result};
use crate::instance::BatchingPolicy;
use crate::predictor::{fit_empirical, Predictor, DEFAULT_PROMPT_BANDS};
use crate::rl::{train, Agent, EpisodeStats};
use crate::routing::{HeuristicRouter, RoutingEnv, TickSample};
use crate::workload::{generate_mixture, generate_scenario, load_trace, ArrivalTrace, TaskSpec};

/// Offsets that keep the random streams of one seed independent.
const PREDICTOR_STREAM: u64 = 0x5052_4544;
const TRAINING_STREAM: u64 = 0x5452_4149;
const EXPLORE_STREAM: u64 = 0x4558_504c;

pub fn build_trace(cfg: &ExperimentConfig, seed: u64) -> Result<ArrivalTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match &cfg.workload {
        WorkloadSource::Mixture => {
            let specs = TaskSpec::reference_mix(&cfg.profile, &cfg.thresholds)?;
            generate_mixture(&specs, cfg.n_requests, cfg.arrival, &mut rng)
        }
        WorkloadSource::Scenario { scenario, ranges } => generate_scenario(
            *scenario,
            cfg.n_requests,
            cfg.arrival,
            &cfg.profile,
            &cfg.thresholds,
            ranges,
            &mut rng,
        ),
        WorkloadSource::Trace { path } => load_trace(path),
    }
}

pub fn build_predictor(cfg: &ExperimentConfig, seed: u64) -> Result<Predictor> {
    Ok(match cfg.predictor {
        PredictorChoice::Oracle => Predictor::Oracle,
        PredictorChoice::Simulated => Predictor::Simulated(cfg.accuracy.clone()),
        PredictorChoice::Empirical => {
            let specs = TaskSpec::reference_mix(&cfg.profile, &cfg.thresholds)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PREDICTOR_STREAM);
            let train = generate_mixture(&specs, cfg.n_requests.max(1000) * 4, cfg.arrival, &mut rng)?;
            let reqs: Vec<_> = train.iter().cloned().collect();
            Predictor::Empirical(fit_empirical(&reqs, &cfg.prediction_scheme, &DEFAULT_PROMPT_BANDS)?)
        }
    })
}

/// Fresh environment for `seed`, as used by every routing policy.
pub fn build_env(cfg: &ExperimentConfig, seed: u64, episode: usize) -> Result<RoutingEnv> {
    let trace = build_trace(cfg, seed)?;
    let predictor = build_predictor(cfg, seed)?;
    RoutingEnv::new(cfg.env_config(), &trace, &predictor, seed ^ PREDICTOR_STREAM, episode)
}

/// Anything that picks one action per tick.
pub trait Router {
    fn route(&mut self, env: &RoutingEnv) -> Result<usize>;
}

impl Router for HeuristicRouter {
    fn route(&mut self, env: &RoutingEnv) -> Result<usize> {
        Ok(HeuristicRouter::route(self, env))
    }
}

/// Greedy policy of a trained agent.
pub struct AgentRouter<'a>(pub &'a Agent);

impl Router for AgentRouter<'_> {
    fn route(&mut self, env: &RoutingEnv) -> Result<usize> {
        self.0.greedy(&env.state())
    }
}

pub fn play<R: Router + ?Sized>(mut env: RoutingEnv, router: &mut R) -> Result<RoutingEnv> {
    while !env.is_done() {
        let a = router.route(&env)?;
        env.step(a);
    }
    Ok(env)
}

/// Turns a finished episode into a report.
pub fn report_from_env(env: &RoutingEnv) -> Result<MetricsReport> {
    let mut totals = InstanceTotals::default();
    for i in env.instances() {
        let c = i.counters();
        totals.preemptions += c.preemptions;
        totals.prefill_stalls += c.stall_iterations;
    }
    let cfg = env.config();
    compute_metrics(
        env.completed(),
        env.samples(),
        totals,
        env.total_requests() - env.completed().len(),
        &cfg.profile,
        &cfg.thresholds,
    )
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub samples: Vec<TickSample>,
}

fn finish(env: RoutingEnv) -> Result<RunOutput> {
    Ok(RunOutput {
        report: report_from_env(&env)?,
        samples: env.samples().to_vec(),
    })
}

/// Runs the configured router for one seed. `rl` routing loads the agent
/// from `checkpoint`.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let env = build_env(cfg, seed, usize::MAX)?;
    match cfg.routing {
        RoutingChoice::Heuristic(p) => finish(play(env, &mut HeuristicRouter::new(p))?),
        RoutingChoice::Rl => {
            let path = cfg
                .checkpoint
                .as_ref()
                .ok_or_else(|| Error::config("checkpoint", "required for rl routing"))?;
            let agent = Agent::load(path)?;
            run_with_agent(cfg, seed, &agent)
        }
    }
}

pub fn run_with_agent(cfg: &ExperimentConfig, seed: u64, agent: &Agent) -> Result<RunOutput> {
    let env = build_env(cfg, seed, usize::MAX)?;
    if agent.online().input_dim() != cfg.env_config().state_dim() {
        return Err(Error::Dimension {
            expected: cfg.env_config().state_dim(),
            got: agent.online().input_dim(),
        });
    }
    finish(play(env, &mut AgentRouter(agent))?)
}

/// Trains a fresh agent for `cfg.episodes` episodes, each on a newly drawn
/// workload.
pub fn train_agent(cfg: &ExperimentConfig, seed: u64) -> Result<(Agent, Vec<EpisodeStats>)> {
    cfg.validate()?;
    let env_cfg = cfg.env_config();
    let mut agent_cfg = cfg.agent.clone();
    agent_cfg.seed = agent_cfg.seed.wrapping_add(seed);
    let mut agent = Agent::new(env_cfg.state_dim(), env_cfg.num_actions(), agent_cfg)?;
    let mut seeds = ChaCha8Rng::seed_from_u64(seed ^ TRAINING_STREAM);
    let episode_seeds: Vec<u64> = (0..cfg.episodes).map(|_| seeds.next_u64()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EXPLORE_STREAM);
    let mut train_cfg = cfg.clone();
    train_cfg.seeds = vec![seed];
    let stats = train(
        &mut agent,
        cfg.episodes,
        |k| {
            let mut env_cfg = train_cfg.env_config();
            env_cfg.record_ticks = false;
            let s = episode_seeds[k];
            let trace = build_trace(&train_cfg, s)?;
            let predictor = build_predictor(&train_cfg, s)?;
            RoutingEnv::new(env_cfg, &trace, &predictor, s ^ PREDICTOR_STREAM, k)
        },
        &mut rng,
    )?;
    Ok((agent, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub policy: String,
    pub seed: u64,
    pub summary: Summary,
}

/// Runs the agent and each heuristic on every configured seed, in parallel.
pub fn evaluate(cfg: &ExperimentConfig, agent: &Agent, agent_label: &str, baselines: &[RoutingChoice]) -> Result<Vec<EvaluationRow>> {
    let mut jobs: Vec<(Option<RoutingChoice>, u64)> = Vec::new();
    for &seed in &cfg.seeds {
        jobs.push((None, seed));
        for &b in baselines {
            jobs.push((Some(b), seed));
        }
    }
    jobs.par_iter()
        .map(|&(policy, seed)| {
            let (label, out) = match policy {
                None | Some(RoutingChoice::Rl) => (agent_label.to_string(), run_with_agent(cfg, seed, agent)?),
                Some(RoutingChoice::Heuristic(p)) => {
                    let mut c = cfg.clone();
                    c.routing = RoutingChoice::Heuristic(p);
                    (p.to_string(), run_experiment(&c, seed)?)
                }
            };
            Ok(EvaluationRow {
                policy: label,
                seed,
                summary: out.report.summary,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub scenario: String,
    pub batching: BatchingPolicy,
    pub routing: RoutingChoice,
    pub seed: u64,
    pub summary: Summary,
}

/// Every (scenario, batching, routing) combination for every seed. Cells
/// run in parallel; the result order is fixed.
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<Vec<MatrixCell>> {
    cfg.validate()?;
    let cells = cfg.expand_matrix();
    let jobs: Vec<(&ExperimentConfig, u64)> = cells
        .iter()
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    jobs.par_iter()
        .map(|&(c, seed)| {
            let out = run_experiment(c, seed)?;
            Ok(MatrixCell {
                scenario: scenario_label(&c.workload),
                batching: c.instance.batching_policy,
                routing: c.routing,
                seed,
                summary: out.report.summary,
            })
        })
        .collect()
}
