use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impact::ImpactConfig;
use crate::instance::{BatchingPolicy, InstanceConfig};
use crate::latency::{HardwareProfile, Thresholds};
use crate::predictor::{AccuracyTable, BucketScheme};
use crate::rl::AgentConfig;
use crate::routing::{EnvConfig, HeuristicPolicy, RewardConfig};
use crate::workload::{ArrivalProcess, ScenarioKind, ScenarioRanges};

/// A heuristic router or the trained agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RoutingChoice {
    Heuristic(HeuristicPolicy),
    Rl,
}

impl fmt::Display for RoutingChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoutingChoice::Heuristic(p) => p.fmt(f),
            RoutingChoice::Rl => f.write_str("rl"),
        }
    }
}

impl FromStr for RoutingChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "rl" {
            Ok(RoutingChoice::Rl)
        } else {
            s.parse().map(RoutingChoice::Heuristic)
        }
    }
}

impl TryFrom<String> for RoutingChoice {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<RoutingChoice> for String {
    fn from(r: RoutingChoice) -> Self {
        r.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSource {
    /// Draws from the five-task mixture.
    Mixture,
    /// Class-structured arrival pattern.
    Scenario {
        scenario: ScenarioKind,
        #[serde(default)]
        ranges: ScenarioRanges,
    },
    /// Replays a CSV trace; `n_requests` and `arrival` are ignored.
    Trace { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorChoice {
    /// True bucket every time.
    Oracle,
    /// True bucket with the configured per-task accuracy.
    #[default]
    Simulated,
    /// Frequency model fitted on a separately drawn mixture.
    Empirical,
}

/// Cross product expanded by the `matrix` subcommand. Empty lists fall
/// back to the single value in the base config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixSpec {
    pub scenarios: Vec<ScenarioKind>,
    pub batching: Vec<BatchingPolicy>,
    pub routing: Vec<RoutingChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub profile: HardwareProfile,
    pub thresholds: Thresholds,
    pub impact: ImpactConfig,
    pub reward: RewardConfig,
    pub agent: AgentConfig,
    pub workload: WorkloadSource,
    pub n_requests: usize,
    pub arrival: ArrivalProcess,
    pub instances: usize,
    pub instance: InstanceConfig,
    pub routing: RoutingChoice,
    pub predictor: PredictorChoice,
    pub accuracy: AccuracyTable,
    pub prediction_scheme: BucketScheme,
    pub state_scheme: BucketScheme,
    pub dt: f64,
    pub max_time: f64,
    pub seeds: Vec<u64>,
    /// Training episodes for the `train` subcommand.
    pub episodes: usize,
    /// Agent checkpoint written by `train` and read by `rl` routing.
    pub checkpoint: Option<PathBuf>,
    pub output: PathBuf,
    /// Heuristics compared against the agent by `evaluate`.
    pub baselines: Vec<RoutingChoice>,
    pub matrix: Option<MatrixSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            profile: HardwareProfile::default(),
            thresholds: Thresholds::default(),
            impact: ImpactConfig::default(),
            reward: RewardConfig::default(),
            agent: AgentConfig::default(),
            workload: WorkloadSource::Mixture,
            n_requests: 2000,
            arrival: ArrivalProcess::Poisson { rate: 20.0 },
            instances: 4,
            instance: InstanceConfig::default(),
            routing: RoutingChoice::Heuristic(HeuristicPolicy::RoundRobin),
            predictor: PredictorChoice::Simulated,
            accuracy: AccuracyTable::reference(),
            prediction_scheme: BucketScheme::prediction_default(),
            state_scheme: BucketScheme::state_default(),
            dt: 0.02,
            max_time: 1.0e5,
            seeds: vec![0],
            episodes: 20,
            checkpoint: None,
            output: PathBuf::from("out"),
            baselines: vec![RoutingChoice::Heuristic(HeuristicPolicy::RoundRobin)],
            matrix: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; a relative trace path resolves against the config
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        if let WorkloadSource::Trace { path: trace } = &mut cfg.workload {
            if trace.is_relative() {
                if let Some(dir) = path.parent() {
                    *trace = dir.join(&*trace);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 {
            return Err(Error::config("instances", "must be at least 1"));
        }
        if self.n_requests == 0 && !matches!(self.workload, WorkloadSource::Trace { .. }) {
            return Err(Error::config("n_requests", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.episodes == 0 {
            return Err(Error::config("episodes", "must be at least 1"));
        }
        if let WorkloadSource::Trace { path } = &self.workload {
            if path.as_os_str().is_empty() {
                return Err(Error::config("workload.path", "must not be empty"));
            }
        }
        self.arrival.validate()?;
        self.accuracy.validate()?;
        self.agent.validate()?;
        self.env_config().validate()
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            instances: self.instances,
            instance: self.instance,
            profile: self.profile,
            thresholds: self.thresholds,
            dt: self.dt,
            prediction_scheme: self.prediction_scheme.clone(),
            state_scheme: self.state_scheme.clone(),
            impact: self.impact,
            reward: self.reward,
            max_time: self.max_time,
            record_ticks: true,
        }
    }

    /// One config per matrix cell, in scenario, batching, routing order.
    pub fn expand_matrix(&self) -> Vec<ExperimentConfig> {
        let spec = self.matrix.clone().unwrap_or_default();
        let scenarios: Vec<Option<ScenarioKind>> = if spec.scenarios.is_empty() {
            vec![None]
        } else {
            spec.scenarios.iter().copied().map(Some).collect()
        };
        let batching = if spec.batching.is_empty() {
            vec![self.instance.batching_policy]
        } else {
            spec.batching.clone()
        };
        let routing = if spec.routing.is_empty() { vec![self.routing] } else { spec.routing.clone() };
        let mut cells = Vec::new();
        for s in &scenarios {
            for &b in &batching {
                for &r in &routing {
                    let mut c = self.clone();
                    c.matrix = None;
                    if let Some(kind) = s {
                        let ranges = match &self.workload {
                            WorkloadSource::Scenario { ranges, .. } => *ranges,
                            _ => ScenarioRanges::default(),
                        };
                        c.workload = WorkloadSource::Scenario { scenario: *kind, ranges };
                    }
                    c.instance.batching_policy = b;
                    c.routing = r;
                    c.name = format!("{}-{}-{}", scenario_label(&c.workload), b, r);
                    cells.push(c);
                }
            }
        }
        cells
    }
}

pub fn scenario_label(w: &WorkloadSource) -> String {
    match w {
        WorkloadSource::Mixture => "mixture".into(),
        WorkloadSource::Scenario { scenario, .. } => scenario.name().into(),
        WorkloadSource::Trace { .. } => "trace".into(),
    }
}
