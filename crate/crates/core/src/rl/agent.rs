use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::{Mlp, Sample};
use super::replay::{ReplayBuffer, Transition};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Online-to-target copy period, in gradient updates.
    pub target_sync_interval: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Last episode with random exploration; later episodes act greedily.
    pub exploration_episodes: usize,
    /// Environment steps between gradient updates.
    pub train_every: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            replay_capacity: 100_000,
            batch_size: 512,
            target_sync_interval: 1000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            exploration_episodes: 20,
            train_every: 1,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("agent.hidden", "layer widths must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("agent.learning_rate", "must be positive"));
        }
        if self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return Err(Error::config("agent.batch_size", "must be in 1..=replay_capacity"));
        }
        if self.target_sync_interval == 0 {
            return Err(Error::config("agent.target_sync_interval", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return Err(Error::config("agent.epsilon", "must lie in [0, 1]"));
        }
        if self.train_every == 0 {
            return Err(Error::config("agent.train_every", "must be positive"));
        }
        Ok(())
    }

    /// Exploration rate in episode `k`: linear from start to end over the
    /// exploration window, then exactly zero.
    pub fn epsilon(&self, episode: usize) -> f64 {
        let n = self.exploration_episodes;
        if episode > n {
            return 0.0;
        }
        if n == 0 {
            return self.epsilon_end;
        }
        let frac = episode as f64 / n as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Lowest index holding the maximum.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Double-DQN agent: online and target networks, Adam and a replay buffer.
#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    online: Mlp,
    target: Mlp,
    optimizer: Adam,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    updates: u64,
}

impl Agent {
    pub fn new(state_dim: usize, num_actions: usize, config: AgentConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut sizes = vec![state_dim];
        sizes.extend(&config.hidden);
        sizes.push(num_actions);
        let online = Mlp::new(&sizes, &mut rng);
        Ok(Self::from_network(online, config, rng))
    }

    fn from_network(online: Mlp, config: AgentConfig, rng: ChaCha8Rng) -> Self {
        Self {
            target: online.clone(),
            optimizer: Adam::new(config.learning_rate, online.num_params()),
            replay: ReplayBuffer::new(config.replay_capacity),
            online,
            rng,
            updates: 0,
            config,
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn online(&self) -> &Mlp {
        &self.online
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn online_mut(&mut self) -> &mut Mlp {
        &mut self.online
    }

    pub fn target_mut(&mut self) -> &mut Mlp {
        &mut self.target
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn num_actions(&self) -> usize {
        self.online.output_dim()
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.online.forward(state)
    }

    pub fn greedy(&self, state: &[f64]) -> Result<usize> {
        Ok(argmax(&self.q_values(state)?))
    }

    /// Epsilon-greedy action for episode `k`.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], episode: usize, rng: &mut R) -> Result<usize> {
        let eps = self.config.epsilon(episode);
        if eps > 0.0 && rng.random::<f64>() < eps {
            return Ok(rng.random_range(0..self.num_actions()));
        }
        self.greedy(state)
    }

    pub fn remember(&mut self, t: Transition) {
        self.replay.push(t);
    }

    /// Double-DQN regression targets: the online net picks the next action
    /// and the target net scores it.
    pub fn targets(&self, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>> {
        let next: Vec<&[f64]> = batch.iter().map(|t| t.next_state.as_slice()).collect();
        let x: DMatrix<f64> = self.online.batch_matrix(&next)?;
        let q_online = self.online.forward_matrix(x.clone());
        let q_target = self.target.forward_matrix(x);
        Ok(batch
            .iter()
            .enumerate()
            .map(|(j, t)| {
                if t.done {
                    t.reward
                } else {
                    let col: Vec<f64> = q_online.column(j).iter().copied().collect();
                    t.reward + gamma * q_target[(argmax(&col), j)]
                }
            })
            .collect())
    }

    /// One gradient step on a replay minibatch. Returns `None` while the
    /// buffer holds fewer than `batch_size` transitions.
    pub fn dqn_update(&mut self, gamma: f64) -> Result<Option<f64>> {
        let Some(ix) = self.replay.sample_indices(self.config.batch_size, &mut self.rng) else {
            return Ok(None);
        };
        let batch: Vec<&Transition> = ix.iter().map(|&i| self.replay.get(i)).collect();
        let targets = self.targets(&batch, gamma)?;
        let samples: Vec<Sample> = batch
            .iter()
            .zip(targets)
            .map(|(t, y)| Sample {
                state: t.state.clone(),
                action: t.action,
                target: y,
            })
            .collect();
        let (loss, grad) = self.online.loss_and_gradient(&samples)?;
        self.optimizer.step(&mut self.online, &grad);
        self.updates += 1;
        if self.updates % self.config.target_sync_interval == 0 {
            self.target = self.online.clone();
        }
        Ok(Some(loss))
    }

    /// Writes `<path>.bin` (online parameters as little-endian f64, layer
    /// by layer) and `<path>.json` (shapes and agent config).
    pub fn save(&self, path: &Path) -> Result<()> {
        let (bin, json) = checkpoint_paths(path);
        let flat = self.online.to_flat();
        let mut bytes = Vec::with_capacity(flat.len() * 8);
        for x in &flat {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        if let Some(dir) = bin.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(&bin, bytes)?;
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.to_string(),
            sizes: self.online.sizes(),
            num_params: flat.len(),
            config: self.config.clone(),
        };
        fs::write(&json, serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    /// Restores an agent from [`Agent::save`] output. The target network
    /// starts as a copy of the online one and the replay buffer is empty.
    pub fn load(path: &Path) -> Result<Self> {
        let (bin, json) = checkpoint_paths(path);
        let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(&json)?)?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", meta.format)));
        }
        let bytes = fs::read(&bin)?;
        if bytes.len() != meta.num_params * 8 {
            return Err(Error::Checkpoint(format!(
                "{} holds {} bytes, expected {}",
                bin.display(),
                bytes.len(),
                meta.num_params * 8
            )));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if meta.sizes.len() < 2 {
            return Err(Error::Checkpoint("need at least two layer sizes".into()));
        }
        let mut online = Mlp::zeros(&meta.sizes);
        online.set_flat(&flat).map_err(|e| Error::Checkpoint(e.to_string()))?;
        meta.config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(meta.config.seed);
        Ok(Self::from_network(online, meta.config, rng))
    }
}

const CHECKPOINT_FORMAT: &str = "mlp-f64le-v1";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    sizes: Vec<usize>,
    num_params: usize,
    config: AgentConfig,
}

fn checkpoint_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("bin"), path.with_extension("json"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::mlp::Layer;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, DVector};

    fn small_config() -> AgentConfig {
        AgentConfig {
            hidden: vec![8, 8],
            batch_size: 1,
            replay_capacity: 10,
            ..AgentConfig::default()
        }
    }

    #[test]
    fn epsilon_schedule() {
        let c = AgentConfig::default();
        assert_eq!(c.epsilon(0), 1.0);
        assert_relative_eq!(c.epsilon(10), 0.525, epsilon = 1e-12);
        assert_relative_eq!(c.epsilon(20), 0.05, epsilon = 1e-12);
        assert_eq!(c.epsilon(21), 0.0);
        assert_eq!(c.epsilon(500), 0.0);
    }

    #[test]
    fn greedy_picks_crafted_argmax() {
        assert_eq!(argmax(&[0.0, 5.0, 1.0, 2.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0, 1.0]), 0);
    }

    #[test]
    fn act_uniform_when_epsilon_one() {
        let agent = Agent::new(3, 5, small_config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let mut counts = [0f64; 5];
        for _ in 0..n {
            counts[agent.act(&[0.1, 0.2, 0.3], 0, &mut rng).unwrap()] += 1.0;
        }
        let e = n as f64 / 5.0;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        // 99.9th percentile of chi-square with 4 degrees of freedom.
        assert!(chi2 < 18.47, "{chi2}");
    }

    #[test]
    fn act_greedy_after_exploration() {
        let mut agent = Agent::new(2, 5, small_config()).unwrap();
        // Output layer bias alone decides the q-values.
        let sizes = agent.online().sizes();
        let mut layers = agent.online().layers().to_vec();
        let last = layers.len() - 1;
        layers[last] = Layer {
            w: DMatrix::zeros(5, sizes[sizes.len() - 2]),
            b: DVector::from_vec(vec![0.0, 5.0, 1.0, 2.0, 3.0]),
        };
        *agent.online_mut() = Mlp::from_layers(layers).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(agent.act(&[0.3, 0.4], 21, &mut rng).unwrap(), 1);
        }
    }

    fn tiny_agent() -> Agent {
        // 1 -> 2 -> 2 net with hand-set weights for both copies.
        let mut a = Agent::new(
            1,
            2,
            AgentConfig {
                hidden: vec![2],
                batch_size: 1,
                replay_capacity: 4,
                ..AgentConfig::default()
            },
        )
        .unwrap();
        *a.online_mut() = Mlp::from_layers(vec![
            Layer {
                w: dmatrix![1.0; 2.0],
                b: DVector::zeros(2),
            },
            Layer {
                w: dmatrix![1.0, 0.0; 0.0, 1.0],
                b: DVector::zeros(2),
            },
        ])
        .unwrap();
        *a.target_mut() = Mlp::from_layers(vec![
            Layer {
                w: dmatrix![1.0; 1.0],
                b: DVector::zeros(2),
            },
            Layer {
                w: dmatrix![3.0, 0.0; 0.0, 0.5],
                b: DVector::zeros(2),
            },
        ])
        .unwrap();
        a
    }

    #[test]
    fn double_dqn_target_by_hand() {
        let a = tiny_agent();
        // s' = 1: online q = (1, 2) -> a* = 1; target q = (3, 0.5) -> 0.5.
        let t = Transition {
            state: vec![0.5],
            action: 0,
            reward: 2.0,
            next_state: vec![1.0],
            done: false,
        };
        let y = a.targets(&[&t], 0.9).unwrap();
        assert_relative_eq!(y[0], 2.0 + 0.9 * 0.5, epsilon = 1e-15);
        let term = Transition { done: true, ..t };
        assert_eq!(a.targets(&[&term, &term], 0.9).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn update_needs_full_batch() {
        let mut a = Agent::new(2, 3, AgentConfig { batch_size: 2, replay_capacity: 10, hidden: vec![4], ..Default::default() }).unwrap();
        assert_eq!(a.dqn_update(0.9).unwrap(), None);
        a.remember(Transition {
            state: vec![0.0, 1.0],
            action: 1,
            reward: 1.0,
            next_state: vec![1.0, 0.0],
            done: true,
        });
        assert_eq!(a.dqn_update(0.9).unwrap(), None);
        assert_eq!(a.updates(), 0);
    }

    #[test]
    fn fixed_buffer_loss_non_increasing() {
        let mut a = Agent::new(3, 4, small_config()).unwrap();
        a.remember(Transition {
            state: vec![0.2, -0.4, 0.9],
            action: 2,
            reward: 1.5,
            next_state: vec![0.0; 3],
            done: true,
        });
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let loss = a.dqn_update(0.99).unwrap().unwrap();
            assert!(loss <= prev + 1e-12, "{loss} > {prev}");
            prev = loss;
        }
        assert!(prev < 1.0);
    }

    #[test]
    fn target_changes_only_at_sync() {
        let mut a = Agent::new(
            2,
            3,
            AgentConfig {
                hidden: vec![4],
                batch_size: 1,
                replay_capacity: 4,
                target_sync_interval: 5,
                ..Default::default()
            },
        )
        .unwrap();
        a.remember(Transition {
            state: vec![1.0, 0.5],
            action: 0,
            reward: 3.0,
            next_state: vec![0.5, 1.0],
            done: false,
        });
        let initial = a.target().clone();
        for i in 1..=12u64 {
            a.dqn_update(0.9).unwrap();
            if i < 5 {
                assert_eq!(a.target(), &initial);
            }
            if i % 5 == 0 {
                assert_eq!(a.target(), a.online());
            }
        }
        assert_ne!(a.target(), a.online());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let a = Agent::new(27, 5, AgentConfig { seed: 42, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent");
        a.save(&path).unwrap();
        let b = Agent::load(&path).unwrap();
        assert_eq!(a.online(), b.online());
        assert_eq!(a.config(), b.config());
        let q1 = a.q_values(&[0.5; 27]).unwrap();
        let q2 = b.q_values(&[0.5; 27]).unwrap();
        assert_eq!(q1, q2);
        std::fs::write(path.with_extension("bin"), [0u8; 16]).unwrap();
        assert!(matches!(Agent::load(&path), Err(Error::Checkpoint(_))));
    }
}
