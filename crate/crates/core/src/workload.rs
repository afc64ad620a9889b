//! Request streams: the five-task synthetic mixture, the four class-ordered
//! arrival scenarios, and CSV trace ingestion.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::latency::{classify_request, HardwareProfile, RequestClass, Thresholds};

pub type RequestId = u64;

/// Longest context the modelled LLM accepts.
pub const MAX_CONTEXT_TOKENS: usize = 4096;
/// Prompts in the synthetic mixture are capped at this length.
pub const MAX_PROMPT_TOKENS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Translation,
    #[serde(rename = "qna")]
    QnA,
    SentimentAnalysis,
    #[serde(rename = "in_context_qna")]
    InContextQnA,
    EntityRecognition,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        Self::Translation,
        Self::QnA,
        Self::SentimentAnalysis,
        Self::InContextQnA,
        Self::EntityRecognition,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Translation => "translation",
            Self::QnA => "qna",
            Self::SentimentAnalysis => "sentiment_analysis",
            Self::InContextQnA => "in_context_qna",
            Self::EntityRecognition => "entity_recognition",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match norm.as_str() {
            "translation" => Ok(Self::Translation),
            "qna" => Ok(Self::QnA),
            "sentimentanalysis" => Ok(Self::SentimentAnalysis),
            "incontextqna" => Ok(Self::InContextQnA),
            "entityrecognition" => Ok(Self::EntityRecognition),
            _ => Err(format!("unknown task `{s}`")),
        }
    }
}

/// One inference job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub task: TaskKind,
    pub prompt_tokens: usize,
    pub true_decode_tokens: usize,
    /// Decode-length bucket assigned by the predictor when the request
    /// enters the router queue.
    pub predicted_bucket: Option<usize>,
    pub arrival_time: f64,
    pub first_token_time: Option<f64>,
    pub completion_time: Option<f64>,
    pub tokens_emitted: usize,
    pub preemption_count: usize,
}

impl Request {
    pub fn new(id: RequestId, task: TaskKind, prompt_tokens: usize, true_decode_tokens: usize, arrival_time: f64) -> Self {
        Self {
            id,
            task,
            prompt_tokens,
            true_decode_tokens,
            predicted_bucket: None,
            arrival_time,
            first_token_time: None,
            completion_time: None,
            tokens_emitted: 0,
            preemption_count: 0,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.tokens_emitted >= self.true_decode_tokens
    }

    pub fn remaining_decode(&self) -> usize {
        self.true_decode_tokens.saturating_sub(self.tokens_emitted)
    }

    pub fn class(&self, profile: &HardwareProfile, thresholds: &Thresholds) -> RequestClass {
        classify_request(profile, thresholds, self.prompt_tokens, self.true_decode_tokens)
    }
}

/// Lognormal restricted to an inclusive integer range; draws are rounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    pub mu: f64,
    pub sigma: f64,
    pub min: usize,
    pub max: usize,
}

impl TokenDistribution {
    /// Finds `mu` so the truncated continuous mean equals `mean`.
    pub fn moment_matched(mean: f64, sigma: f64, min: usize, max: usize) -> Result<Self> {
        let (lo_edge, hi_edge) = (min as f64 - 0.5, max as f64 + 0.5);
        if !(mean > lo_edge.max(0.5) && mean < hi_edge) || min > max || min == 0 {
            return Err(Error::config(
                "workload.distribution",
                format!("mean {mean} is not attainable on [{min}, {max}]"),
            ));
        }
        let mut lo = lo_edge.max(0.5).ln() - 6.0 * sigma;
        let mut hi = hi_edge.ln() + 6.0 * sigma;
        let probe = |mu| Self { mu, sigma, min, max }.continuous_mean();
        if !(probe(lo) < mean && probe(hi) > mean) {
            return Err(Error::config(
                "workload.distribution",
                format!("mean {mean} is not attainable on [{min}, {max}] with sigma {sigma}"),
            ));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if probe(mid) < mean {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Self { mu: 0.5 * (lo + hi), sigma, min, max })
    }

    fn edges(&self) -> (f64, f64) {
        let a = (self.min as f64 - 0.5).max(0.5).ln();
        let b = (self.max as f64 + 0.5).ln();
        (a, b)
    }

    /// Mean of the truncated continuous lognormal (before rounding).
    pub fn continuous_mean(&self) -> f64 {
        let n = Normal::standard();
        let (a, b) = self.edges();
        let (za, zb) = ((a - self.mu) / self.sigma, (b - self.mu) / self.sigma);
        let mass = n.cdf(zb) - n.cdf(za);
        let shifted = n.cdf(zb - self.sigma) - n.cdf(za - self.sigma);
        (self.mu + 0.5 * self.sigma * self.sigma).exp() * shifted / mass
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let n = Normal::standard();
        let (a, b) = self.edges();
        let (pa, pb) = (
            n.cdf((a - self.mu) / self.sigma),
            n.cdf((b - self.mu) / self.sigma),
        );
        let u: f64 = rng.random();
        let p = (pa + u * (pb - pa)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
        let x = (self.mu + self.sigma * n.inverse_cdf(p)).exp();
        (x.round() as usize).clamp(self.min, self.max)
    }
}

/// Statistics and sampling distributions for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: TaskKind,
    /// Relative frequency in the mixture (sample count).
    pub weight: f64,
    pub mean_prompt: f64,
    pub mean_decode: f64,
    pub heavy_decode_fraction: f64,
    pub prompt_distribution: TokenDistribution,
    pub light_decode_distribution: TokenDistribution,
    pub heavy_decode_distribution: TokenDistribution,
}

const PROMPT_SIGMA: f64 = 0.6;
const LIGHT_DECODE_SIGMA: f64 = 0.8;
const HEAVY_DECODE_SIGMA: f64 = 0.4;

/// (task, samples, mean prompt, mean decode, heavy-decode fraction)
pub const REFERENCE_MIX: [(TaskKind, f64, f64, f64, f64); 5] = [
    (TaskKind::Translation, 7351.0, 29.09, 61.76, 0.0918),
    (TaskKind::QnA, 6988.0, 29.83, 334.40, 0.5818),
    (TaskKind::SentimentAnalysis, 6564.0, 211.54, 142.53, 0.4101),
    (TaskKind::InContextQnA, 7122.0, 125.16, 220.02, 0.4795),
    (TaskKind::EntityRecognition, 3304.0, 26.41, 64.10, 0.0871),
];

impl TaskSpec {
    /// Builds a spec whose overall decode mean and heavy fraction match the
    /// given statistics. The heavy component lives on
    /// `[min_heavy_decode, MAX_CONTEXT_TOKENS - MAX_PROMPT_TOKENS]` with mean
    /// `max(1.1 * min_heavy_decode, 1.2 * mean_decode)`; the light component's
    /// mean is whatever closes the overall mean.
    pub fn from_statistics(
        task: TaskKind,
        weight: f64,
        mean_prompt: f64,
        mean_decode: f64,
        heavy_decode_fraction: f64,
        profile: &HardwareProfile,
        thresholds: &Thresholds,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&heavy_decode_fraction) {
            return Err(Error::config(
                format!("workload.{task}.heavy_decode_fraction"),
                "must lie in [0, 1)",
            ));
        }
        let heavy_min = thresholds.min_heavy_decode_tokens(profile);
        let heavy_max = MAX_CONTEXT_TOKENS - MAX_PROMPT_TOKENS;
        if heavy_min < 2 || heavy_min >= heavy_max {
            return Err(Error::config("thresholds.heavy_decode_seconds", "heavy-decode cut-off leaves no room"));
        }
        let heavy_mean = (1.1 * heavy_min as f64).max(1.2 * mean_decode).min(heavy_max as f64 * 0.9);
        let light_mean = (mean_decode - heavy_decode_fraction * heavy_mean) / (1.0 - heavy_decode_fraction);
        let prompt_distribution = TokenDistribution::moment_matched(mean_prompt, PROMPT_SIGMA, 1, MAX_PROMPT_TOKENS)?;
        let light_decode_distribution =
            TokenDistribution::moment_matched(light_mean, LIGHT_DECODE_SIGMA, 1, heavy_min - 1)?;
        let heavy_decode_distribution =
            TokenDistribution::moment_matched(heavy_mean, HEAVY_DECODE_SIGMA, heavy_min, heavy_max)?;
        Ok(Self {
            task,
            weight,
            mean_prompt,
            mean_decode,
            heavy_decode_fraction,
            prompt_distribution,
            light_decode_distribution,
            heavy_decode_distribution,
        })
    }

    /// The five-task mixture with published per-task statistics.
    pub fn reference_mix(profile: &HardwareProfile, thresholds: &Thresholds) -> Result<Vec<TaskSpec>> {
        REFERENCE_MIX
            .iter()
            .map(|&(task, w, p, d, h)| Self::from_statistics(task, w, p, d, h, profile, thresholds))
            .collect()
    }
}

/// Draws prompt and decode lengths; arrival time is left at zero.
pub fn sample_request<R: Rng + ?Sized>(spec: &TaskSpec, id: RequestId, rng: &mut R) -> Request {
    let prompt = spec.prompt_distribution.sample(rng);
    let heavy = rng.random::<f64>() < spec.heavy_decode_fraction;
    let decode = if heavy {
        spec.heavy_decode_distribution.sample(rng)
    } else {
        spec.light_decode_distribution.sample(rng)
    };
    Request::new(id, spec.task, prompt, decode, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalProcess {
    Poisson { rate: f64 },
    Fixed { interval: f64 },
}

impl ArrivalProcess {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ArrivalProcess::Poisson { rate } => rate.is_finite() && rate > 0.0,
            ArrivalProcess::Fixed { interval } => interval.is_finite() && interval >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("arrival", "rate must be positive and interval non-negative"))
        }
    }

    /// Arrival instants for `n` requests, first one at t = 0.
    pub fn times<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let mut t = 0.0;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                t += match *self {
                    ArrivalProcess::Poisson { rate } => Exp::new(rate).expect("validated rate").sample(rng),
                    ArrivalProcess::Fixed { interval } => interval,
                };
            }
            out.push(t);
        }
        out
    }
}

/// Requests ordered by arrival time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArrivalTrace {
    pub requests: Vec<Request>,
}

impl ArrivalTrace {
    pub fn new(requests: Vec<Request>) -> Result<Self> {
        let trace = Self { requests };
        trace.check_order()?;
        Ok(trace)
    }

    fn check_order(&self) -> Result<()> {
        for (i, w) in self.requests.windows(2).enumerate() {
            if w[1].arrival_time < w[0].arrival_time {
                return Err(Error::config(
                    "trace",
                    format!("arrival times decrease at position {}", i + 1),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Request> {
        self.requests.iter()
    }

    /// Writes the trace in the CSV layout accepted by [`load_trace`].
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
        w.write_record(TRACE_COLUMNS)?;
        for r in &self.requests {
            w.write_record([
                r.arrival_time.to_string(),
                r.task.to_string(),
                r.prompt_tokens.to_string(),
                r.true_decode_tokens.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws `n` requests from the weighted task mixture.
pub fn generate_mixture<R: Rng + ?Sized>(
    specs: &[TaskSpec],
    n: usize,
    arrival: ArrivalProcess,
    rng: &mut R,
) -> Result<ArrivalTrace> {
    if specs.is_empty() {
        return Err(Error::Empty("task mixture"));
    }
    arrival.validate()?;
    let total: f64 = specs.iter().map(|s| s.weight).sum();
    let mut requests = Vec::with_capacity(n);
    for id in 0..n {
        let spec = pick_weighted(specs, total, rng);
        requests.push(sample_request(spec, id as RequestId, rng));
    }
    for (r, t) in requests.iter_mut().zip(arrival.times(n, rng)) {
        r.arrival_time = t;
    }
    ArrivalTrace::new(requests)
}

fn pick_weighted<'a, R: Rng + ?Sized>(specs: &'a [TaskSpec], total: f64, rng: &mut R) -> &'a TaskSpec {
    let mut x = rng.random::<f64>() * total;
    for s in specs {
        if x < s.weight {
            return s;
        }
        x -= s.weight;
    }
    specs.last().expect("non-empty")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    #[serde(rename = "LH_HL_random")]
    LhHlRandom,
    #[serde(rename = "AllRandom")]
    AllRandom,
    #[serde(rename = "LH_then_HL")]
    LhThenHl,
    #[serde(rename = "HL_then_LH")]
    HlThenLh,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [Self::LhHlRandom, Self::AllRandom, Self::LhThenHl, Self::HlThenLh];

    pub fn name(self) -> &'static str {
        match self {
            Self::LhHlRandom => "LH_HL_random",
            Self::AllRandom => "AllRandom",
            Self::LhThenHl => "LH_then_HL",
            Self::HlThenLh => "HL_then_LH",
        }
    }

    /// Class of the `i`-th of `n` requests, drawing from `rng` for the random
    /// scenarios.
    fn class_at<R: Rng + ?Sized>(self, i: usize, n: usize, rng: &mut R) -> RequestClass {
        let first_half = i < n / 2;
        match self {
            Self::LhHlRandom => {
                if rng.random::<bool>() {
                    RequestClass::LH
                } else {
                    RequestClass::HL
                }
            }
            Self::AllRandom => RequestClass::ALL[rng.random_range(0..4)],
            Self::LhThenHl => {
                if first_half {
                    RequestClass::LH
                } else {
                    RequestClass::HL
                }
            }
            Self::HlThenLh => {
                if first_half {
                    RequestClass::HL
                } else {
                    RequestClass::LH
                }
            }
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown scenario `{s}`"))
    }
}

/// Token ranges used to synthesise requests of a given class. Light ranges
/// end one token below the heavy cut-off; heavy ranges start at it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioRanges {
    pub min_light_prompt: usize,
    /// Upper end of heavy prompts as a multiple of the heavy-prompt cut-off.
    pub heavy_prompt_span: f64,
    pub min_light_decode: usize,
    /// Upper end of heavy decodes as a multiple of the heavy-decode cut-off.
    pub heavy_decode_span: f64,
}

impl Default for ScenarioRanges {
    fn default() -> Self {
        Self {
            min_light_prompt: 16,
            heavy_prompt_span: 1.5,
            min_light_decode: 8,
            heavy_decode_span: 2.0,
        }
    }
}

/// Generates a class-structured trace. Token counts are drawn uniformly
/// within the class ranges implied by `thresholds`; tasks follow the mixture
/// weights so a simulated predictor can be applied.
pub fn generate_scenario<R: Rng + ?Sized>(
    kind: ScenarioKind,
    n: usize,
    arrival: ArrivalProcess,
    profile: &HardwareProfile,
    thresholds: &Thresholds,
    ranges: &ScenarioRanges,
    rng: &mut R,
) -> Result<ArrivalTrace> {
    if n == 0 {
        return Err(Error::config("n_requests", "a scenario needs at least one request"));
    }
    arrival.validate()?;
    let p_cut = thresholds.min_heavy_prompt_tokens(profile);
    let d_cut = thresholds.min_heavy_decode_tokens(profile);
    let p_max = ((p_cut as f64 * ranges.heavy_prompt_span) as usize).max(p_cut);
    let d_max = ((d_cut as f64 * ranges.heavy_decode_span) as usize).max(d_cut);
    if ranges.min_light_prompt >= p_cut || ranges.min_light_decode >= d_cut || ranges.min_light_decode == 0 {
        return Err(Error::config("scenario_ranges", "light ranges must be non-empty"));
    }
    let total_weight: f64 = REFERENCE_MIX.iter().map(|t| t.1).sum();
    let mut requests = Vec::with_capacity(n);
    for i in 0..n {
        let class = kind.class_at(i, n, rng);
        let prompt = if class.heavy_prompt() {
            rng.random_range(p_cut..=p_max)
        } else {
            rng.random_range(ranges.min_light_prompt..p_cut)
        };
        let decode = if class.heavy_decode() {
            rng.random_range(d_cut..=d_max)
        } else {
            rng.random_range(ranges.min_light_decode..d_cut)
        };
        let mut x = rng.random::<f64>() * total_weight;
        let mut task = TaskKind::Translation;
        for &(t, w, ..) in &REFERENCE_MIX {
            task = t;
            if x < w {
                break;
            }
            x -= w;
        }
        let r = Request::new(i as RequestId, task, prompt, decode, 0.0);
        debug_assert_eq!(r.class(profile, thresholds), class);
        requests.push(r);
    }
    for (r, t) in requests.iter_mut().zip(arrival.times(n, rng)) {
        r.arrival_time = t;
    }
    ArrivalTrace::new(requests)
}

pub const TRACE_COLUMNS: [&str; 4] = ["arrival_time_s", "task", "prompt_tokens", "decode_tokens"];

#[derive(Debug, Deserialize)]
struct TraceRow {
    arrival_time_s: f64,
    task: String,
    prompt_tokens: usize,
    decode_tokens: usize,
}

/// Reads a trace CSV with header `arrival_time_s,task,prompt_tokens,decode_tokens`.
pub fn load_trace(path: &Path) -> Result<ArrivalTrace> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names != TRACE_COLUMNS {
        return Err(Error::Trace {
            path: path.to_owned(),
            line: 1,
            reason: format!("expected header {}, found {}", TRACE_COLUMNS.join(","), names.join(",")),
        });
    }
    let mut requests: Vec<Request> = Vec::new();
    for (i, row) in rdr.deserialize::<TraceRow>().enumerate() {
        let line = i + 2;
        let bad = |reason: String| Error::Trace {
            path: path.to_owned(),
            line,
            reason,
        };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let task: TaskKind = row.task.parse().map_err(bad)?;
        if !row.arrival_time_s.is_finite() || row.arrival_time_s < 0.0 {
            return Err(bad(format!("arrival time {} is not a non-negative number", row.arrival_time_s)));
        }
        if row.prompt_tokens == 0 {
            return Err(bad("prompt_tokens must be at least 1".into()));
        }
        if row.decode_tokens == 0 {
            return Err(bad("decode_tokens must be at least 1".into()));
        }
        if let Some(prev) = requests.last() {
            if row.arrival_time_s < prev.arrival_time {
                return Err(bad(format!(
                    "arrival time {} precedes the previous row's {}",
                    row.arrival_time_s, prev.arrival_time
                )));
            }
        }
        requests.push(Request::new(
            requests.len() as RequestId,
            task,
            row.prompt_tokens,
            row.decode_tokens,
            row.arrival_time_s,
        ));
    }
    Ok(ArrivalTrace { requests })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskStats {
    pub count: usize,
    pub mean_prompt: f64,
    pub mean_decode: f64,
    pub heavy_decode_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadStats {
    pub per_task: BTreeMap<TaskKind, TaskStats>,
    pub overall: TaskStats,
}

pub fn task_stats(trace: &ArrivalTrace, thresholds: &Thresholds, profile: &HardwareProfile) -> Result<WorkloadStats> {
    if trace.is_empty() {
        return Err(Error::Empty("trace"));
    }
    #[derive(Default)]
    struct Acc {
        n: usize,
        prompt: u64,
        decode: u64,
        heavy: usize,
    }
    impl Acc {
        fn add(&mut self, r: &Request, heavy: bool) {
            self.n += 1;
            self.prompt += r.prompt_tokens as u64;
            self.decode += r.true_decode_tokens as u64;
            self.heavy += heavy as usize;
        }
        fn finish(&self) -> TaskStats {
            let n = self.n as f64;
            TaskStats {
                count: self.n,
                mean_prompt: self.prompt as f64 / n,
                mean_decode: self.decode as f64 / n,
                heavy_decode_fraction: self.heavy as f64 / n,
            }
        }
    }
    let mut per: BTreeMap<TaskKind, Acc> = BTreeMap::new();
    let mut all = Acc::default();
    for r in trace.iter() {
        let heavy = thresholds.is_heavy_decode(profile, r.true_decode_tokens);
        per.entry(r.task).or_default().add(r, heavy);
        all.add(r, heavy);
    }
    Ok(WorkloadStats {
        per_task: per.into_iter().map(|(k, v)| (k, v.finish())).collect(),
        overall: all.finish(),
    })
}
