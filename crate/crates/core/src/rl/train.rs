use rand::Rng;
use serde::{Deserialize, Serialize};

use super::agent::Agent;
use super::replay::Transition;
use crate::error::Result;
use crate::routing::RoutingEnv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub total_reward: f64,
    /// Sum of the heuristic terms `-c_k h` included in `total_reward`.
    pub total_shaping: f64,
    pub mean_e2e: f64,
    pub completed: usize,
    pub ticks: u64,
    pub updates: u64,
    pub mean_loss: Option<f64>,
    pub epsilon: f64,
    pub truncated: bool,
}

fn mean_e2e(env: &RoutingEnv) -> f64 {
    let done = env.completed();
    if done.is_empty() {
        return f64::NAN;
    }
    let sum: f64 = done
        .iter()
        .map(|c| c.request.completion_time.expect("completed") - c.request.arrival_time)
        .sum();
    sum / done.len() as f64
}

/// Plays one episode, storing every transition and running a gradient
/// update every `train_every` steps.
pub fn run_training_episode<R: Rng + ?Sized>(agent: &mut Agent, env: &mut RoutingEnv, rng: &mut R) -> Result<EpisodeStats> {
    let k = env.episode();
    let gamma = env.config().reward.discount(k);
    let every = agent.config().train_every as u64;
    let mut total_reward = 0.0;
    let mut total_shaping = 0.0;
    let mut losses = Vec::new();
    let updates_before = agent.updates();
    let mut state = env.state();
    while !env.is_done() {
        let action = agent.act(&state, k, rng)?;
        let out = env.step(action);
        let next = env.state();
        total_reward += out.reward;
        total_shaping += out.reward - out.base_reward;
        agent.remember(Transition {
            state: std::mem::replace(&mut state, next.clone()),
            action,
            reward: out.reward,
            next_state: next,
            done: out.done,
        });
        if env.tick() % every == 0 {
            if let Some(l) = agent.dqn_update(gamma)? {
                losses.push(l);
            }
        }
    }
    Ok(EpisodeStats {
        episode: k,
        total_reward,
        total_shaping,
        mean_e2e: mean_e2e(env),
        completed: env.completed().len(),
        ticks: env.tick(),
        updates: agent.updates() - updates_before,
        mean_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
        epsilon: agent.config().epsilon(k),
        truncated: env.is_truncated(),
    })
}

/// Trains for `episodes` episodes; `make_env(k)` builds the environment for
/// episode `k`.
pub fn train<F, R>(agent: &mut Agent, episodes: usize, mut make_env: F, rng: &mut R) -> Result<Vec<EpisodeStats>>
where
    F: FnMut(usize) -> Result<RoutingEnv>,
    R: Rng + ?Sized,
{
    let mut stats = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let mut env = make_env(k)?;
        let s = run_training_episode(agent, &mut env, rng)?;
        log::info!(
            "episode {k}: reward {:.1}, mean e2e {:.3}s, eps {:.3}, loss {:?}",
            s.total_reward,
            s.mean_e2e,
            s.epsilon,
            s.mean_loss
        );
        stats.push(s);
    }
    Ok(stats)
}

/// Greedy rollout of a frozen agent; returns the finished environment.
pub fn evaluate_agent(agent: &Agent, mut env: RoutingEnv) -> Result<RoutingEnv> {
    while !env.is_done() {
        let a = agent.greedy(&env.state())?;
        env.step(a);
    }
    Ok(env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::Predictor;
    use crate::rl::agent::AgentConfig;
    use crate::routing::{EnvConfig, RewardConfig, ShapingMode};
    use crate::workload::{ArrivalTrace, Request, TaskKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_trace() -> ArrivalTrace {
        ArrivalTrace::new(
            (0..5)
                .map(|i| Request::new(i, TaskKind::QnA, 20 + 10 * i as usize, 10 + 5 * i as usize, 0.05 * i as f64))
                .collect(),
        )
        .unwrap()
    }

    fn env_cfg(mode: ShapingMode) -> EnvConfig {
        EnvConfig {
            instances: 2,
            reward: RewardConfig {
                shaping_mode: mode,
                ..Default::default()
            },
            max_time: 200.0,
            ..Default::default()
        }
    }

    fn agent_cfg() -> AgentConfig {
        AgentConfig {
            batch_size: 16,
            replay_capacity: 1000,
            ..Default::default()
        }
    }

    #[test]
    fn one_episode_on_toy() {
        let cfg = env_cfg(ShapingMode::Guided);
        let mut agent = Agent::new(cfg.state_dim(), cfg.num_actions(), agent_cfg()).unwrap();
        let trace = toy_trace();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let stats = train(&mut agent, 1, |k| RoutingEnv::new(cfg.clone(), &trace, &Predictor::Oracle, 1, k), &mut rng).unwrap();
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].completed, 5);
        assert!(!stats[0].truncated);
    }

    #[test]
    fn guided_and_unshaped_differ_by_shaping_sum() {
        let trace = toy_trace();
        let run = |mode| {
            let cfg = env_cfg(mode);
            let mut agent = Agent::new(cfg.state_dim(), cfg.num_actions(), agent_cfg()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut env = RoutingEnv::new(cfg, &trace, &Predictor::Oracle, 1, 0).unwrap().with_trajectory_log();
            let s = run_training_episode(&mut agent, &mut env, &mut rng).unwrap();
            (s, env.trajectory().unwrap().to_vec())
        };
        let (guided, glog) = run(ShapingMode::Guided);
        let (plain, plog) = run(ShapingMode::None);
        // Episode 0 explores uniformly, so both runs take the same actions.
        assert_eq!(glog.iter().map(|r| r.action).collect::<Vec<_>>(), plog.iter().map(|r| r.action).collect::<Vec<_>>());
        let shaping: f64 = glog.iter().map(|r| -r.shaping_coefficient * r.h).sum();
        assert!((guided.total_reward - plain.total_reward - shaping).abs() < 1e-9 * (1.0 + shaping.abs()));
        for (g, p) in glog.iter().zip(&plog) {
            assert_eq!(g.base_reward, p.base_reward);
            assert_eq!(g.reward, g.base_reward - g.shaping_coefficient * g.h);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let trace = toy_trace();
        let cfg = env_cfg(ShapingMode::Guided);
        let go = || {
            let mut agent = Agent::new(cfg.state_dim(), cfg.num_actions(), agent_cfg()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let s = train(&mut agent, 2, |k| RoutingEnv::new(cfg.clone(), &trace, &Predictor::Oracle, 1, k), &mut rng).unwrap();
            (s, agent.online().to_flat())
        };
        assert_eq!(go(), go());
    }

    #[test]
    fn greedy_actions_are_valid() {
        let trace = toy_trace();
        for mode in [ShapingMode::None, ShapingMode::Guided] {
            let cfg = env_cfg(mode);
            let agent = Agent::new(cfg.state_dim(), cfg.num_actions(), agent_cfg()).unwrap();
            let env = RoutingEnv::new(cfg.clone(), &trace, &Predictor::Oracle, 1, 0).unwrap();
            let a = agent.greedy(&env.state()).unwrap();
            assert!(a < cfg.num_actions());
        }
    }
}
