//! Decode-length bucket prediction.
//!
//! Two predictors are provided. The simulated one returns the true bucket
//! with a per-task accuracy and otherwise a neighbouring bucket. The
//! empirical one is a frequency table over (task, prompt-length band).

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::bucket_index;
use crate::workload::{Request, TaskKind, MAX_CONTEXT_TOKENS};

/// Ascending bucket boundaries; bucket `i` is `[edges[i-1], edges[i])`
/// with an implicit 0 in front and no upper limit on the last bucket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BucketScheme {
    edges: Vec<usize>,
}

impl BucketScheme {
    pub fn new(edges: Vec<usize>) -> Result<Self> {
        if edges.first() == Some(&0) {
            return Err(Error::config("bucket edges", "first edge must be positive"));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("bucket edges", "must be strictly ascending"));
        }
        Ok(Self { edges })
    }

    /// Label space of the length predictor: 0-250, 250-1000, 1000-4000, 4000+.
    pub fn prediction_default() -> Self {
        Self { edges: vec![250, 1000, 4000] }
    }

    /// Coarser buckets used in the router's state vector.
    pub fn state_default() -> Self {
        Self { edges: vec![256, 2048] }
    }

    pub fn edges(&self) -> &[usize] {
        &self.edges
    }

    pub fn num_buckets(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn bucket_of(&self, decode_tokens: usize) -> usize {
        bucket_index(&self.edges, decode_tokens)
    }

    /// Largest decode length the bucket stands for; the open top bucket is
    /// capped at the model context length.
    pub fn upper_bound(&self, bucket: usize) -> usize {
        self.edges.get(bucket).copied().unwrap_or(MAX_CONTEXT_TOKENS)
    }
}

impl Default for BucketScheme {
    fn default() -> Self {
        Self::prediction_default()
    }
}

impl TryFrom<Vec<usize>> for BucketScheme {
    type Error = Error;

    fn try_from(edges: Vec<usize>) -> Result<Self> {
        Self::new(edges)
    }
}

impl From<BucketScheme> for Vec<usize> {
    fn from(s: BucketScheme) -> Self {
        s.edges
    }
}

/// Probability per task that the predicted bucket is the true one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccuracyTable {
    per_task: BTreeMap<TaskKind, f64>,
}

impl AccuracyTable {
    pub fn new(per_task: BTreeMap<TaskKind, f64>) -> Result<Self> {
        let t = Self { per_task };
        t.validate()?;
        Ok(t)
    }

    /// Accuracy of the fine-tuned length classifier with the task hint.
    pub fn reference() -> Self {
        Self {
            per_task: BTreeMap::from([
                (TaskKind::Translation, 0.9310),
                (TaskKind::QnA, 0.7036),
                (TaskKind::SentimentAnalysis, 0.7992),
                (TaskKind::InContextQnA, 0.6527),
                (TaskKind::EntityRecognition, 0.9506),
            ]),
        }
    }

    pub fn uniform(accuracy: f64) -> Self {
        Self {
            per_task: TaskKind::ALL.iter().map(|&t| (t, accuracy)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (task, &a) in &self.per_task {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::config(format!("accuracy.{task}"), "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Tasks missing from the table are predicted perfectly.
    pub fn get(&self, task: TaskKind) -> f64 {
        self.per_task.get(&task).copied().unwrap_or(1.0)
    }
}

impl Default for AccuracyTable {
    fn default() -> Self {
        Self::reference()
    }
}

/// Returns `true_bucket` with the configured probability, otherwise a
/// neighbouring bucket (either side with equal odds when both exist).
pub fn predict_simulated<R: Rng + ?Sized>(
    true_bucket: usize,
    num_buckets: usize,
    accuracy: f64,
    rng: &mut R,
) -> usize {
    let hit = rng.random::<f64>() < accuracy;
    if hit || num_buckets < 2 {
        return true_bucket;
    }
    let last = num_buckets - 1;
    match true_bucket {
        0 => 1,
        b if b >= last => last - 1,
        b if rng.random::<bool>() => b + 1,
        b => b - 1,
    }
}

/// Bucket frequency tables keyed by task and prompt-length band.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalModel {
    scheme: BucketScheme,
    band_edges: Vec<usize>,
    use_task: bool,
    cells: BTreeMap<(Option<TaskKind>, usize), Vec<u64>>,
    task_marginal: BTreeMap<TaskKind, Vec<u64>>,
    global: Vec<u64>,
}

pub const DEFAULT_PROMPT_BANDS: [usize; 5] = [32, 64, 128, 256, 512];

/// Fits the (task, prompt band) frequency model.
pub fn fit_empirical(trace: &[Request], scheme: &BucketScheme, band_edges: &[usize]) -> Result<EmpiricalModel> {
    fit(trace, scheme, band_edges, true)
}

/// Same model without the task feature, as a baseline.
pub fn fit_task_blind(trace: &[Request], scheme: &BucketScheme, band_edges: &[usize]) -> Result<EmpiricalModel> {
    fit(trace, scheme, band_edges, false)
}

fn fit(trace: &[Request], scheme: &BucketScheme, band_edges: &[usize], use_task: bool) -> Result<EmpiricalModel> {
    if trace.is_empty() {
        return Err(Error::Empty("training trace"));
    }
    if band_edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("prompt band edges", "must be strictly ascending"));
    }
    let k = scheme.num_buckets();
    let mut m = EmpiricalModel {
        scheme: scheme.clone(),
        band_edges: band_edges.to_vec(),
        use_task,
        cells: BTreeMap::new(),
        task_marginal: BTreeMap::new(),
        global: vec![0; k],
    };
    for r in trace {
        let b = scheme.bucket_of(r.true_decode_tokens);
        let key = (use_task.then_some(r.task), bucket_index(band_edges, r.prompt_tokens));
        m.cells.entry(key).or_insert_with(|| vec![0; k])[b] += 1;
        if use_task {
            m.task_marginal.entry(r.task).or_insert_with(|| vec![0; k])[b] += 1;
        }
        m.global[b] += 1;
    }
    Ok(m)
}

fn argmax(counts: &[u64]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

impl EmpiricalModel {
    pub fn scheme(&self) -> &BucketScheme {
        &self.scheme
    }

    /// Most frequent bucket of the matching cell, falling back to the task
    /// marginal and then the global marginal. Ties go to the lower bucket.
    pub fn predict(&self, task: TaskKind, prompt_tokens: usize) -> usize {
        let key = (self.use_task.then_some(task), bucket_index(&self.band_edges, prompt_tokens));
        let counts = self
            .cells
            .get(&key)
            .or_else(|| self.task_marginal.get(&task).filter(|_| self.use_task))
            .unwrap_or(&self.global);
        argmax(counts)
    }

    /// Bucket distribution of the matching cell (after fallback).
    pub fn distribution(&self, task: TaskKind, prompt_tokens: usize) -> Vec<f64> {
        let key = (self.use_task.then_some(task), bucket_index(&self.band_edges, prompt_tokens));
        let counts = self
            .cells
            .get(&key)
            .or_else(|| self.task_marginal.get(&task).filter(|_| self.use_task))
            .unwrap_or(&self.global);
        let n: u64 = counts.iter().sum();
        counts.iter().map(|&c| c as f64 / n as f64).collect()
    }
}

/// A bucket predictor as configured for an experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    /// Always the true bucket.
    Oracle,
    Simulated(AccuracyTable),
    Empirical(EmpiricalModel),
    Constant(usize),
}

impl Predictor {
    pub fn predict<R: Rng + ?Sized>(&self, scheme: &BucketScheme, request: &Request, rng: &mut R) -> usize {
        let truth = scheme.bucket_of(request.true_decode_tokens);
        match self {
            Predictor::Oracle => truth,
            Predictor::Simulated(table) => predict_simulated(truth, scheme.num_buckets(), table.get(request.task), rng),
            Predictor::Empirical(model) => model.predict(request.task, request.prompt_tokens),
            Predictor::Constant(b) => *b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub per_task: BTreeMap<TaskKind, f64>,
    pub overall: f64,
    pub n: usize,
}

/// Exact-match rate of the predictor against true decode lengths.
pub fn evaluate_predictor<R: Rng + ?Sized>(
    predictor: &Predictor,
    scheme: &BucketScheme,
    labeled: &[Request],
    rng: &mut R,
) -> Result<AccuracyReport> {
    if labeled.is_empty() {
        return Err(Error::Empty("labeled trace"));
    }
    let mut hits: BTreeMap<TaskKind, (usize, usize)> = BTreeMap::new();
    for r in labeled {
        let ok = predictor.predict(scheme, r, rng) == scheme.bucket_of(r.true_decode_tokens);
        let e = hits.entry(r.task).or_default();
        e.0 += ok as usize;
        e.1 += 1;
    }
    let total_hits: usize = hits.values().map(|h| h.0).sum();
    Ok(AccuracyReport {
        per_task: hits.iter().map(|(&t, &(h, n))| (t, h as f64 / n as f64)).collect(),
        overall: total_hits as f64 / labeled.len() as f64,
        n: labeled.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latency::{HardwareProfile, Thresholds};
    use crate::workload::{generate_mixture, ArrivalProcess, TaskSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn r(task: TaskKind, p: usize, d: usize) -> Request {
        Request::new(0, task, p, d, 0.0)
    }

    #[test]
    fn bucket_of_default_scheme() {
        let s = BucketScheme::default();
        assert_eq!(s.bucket_of(100), 0);
        assert_eq!(s.bucket_of(250), 1);
        assert_eq!(s.bucket_of(3000), 2);
        assert_eq!(s.bucket_of(9000), 3);
        assert_eq!(s.upper_bound(0), 250);
        assert_eq!(s.upper_bound(3), MAX_CONTEXT_TOKENS);
    }

    #[test]
    fn scheme_validation() {
        assert!(BucketScheme::new(vec![10, 10]).is_err());
        assert!(BucketScheme::new(vec![0, 10]).is_err());
        let s: BucketScheme = serde_json::from_str("[256, 2048]").unwrap();
        assert_eq!(s, BucketScheme::state_default());
        assert!(serde_json::from_str::<BucketScheme>("[5, 1]").is_err());
    }

    #[test]
    fn simulated_perfect_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for b in 0..4 {
            for _ in 0..100 {
                assert_eq!(predict_simulated(b, 4, 1.0, &mut rng), b);
            }
        }
        for _ in 0..100 {
            assert_eq!(predict_simulated(0, 4, 0.0, &mut rng), 1);
            assert_eq!(predict_simulated(3, 4, 0.0, &mut rng), 2);
            let m = predict_simulated(2, 4, 0.0, &mut rng);
            assert!(m == 1 || m == 3);
        }
    }

    #[test]
    fn simulated_books_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let hits = (0..n).filter(|_| predict_simulated(1, 4, 0.9310, &mut rng) == 1).count();
        let acc = hits as f64 / n as f64;
        assert!((acc - 0.9310).abs() < 0.005, "{acc}");
    }

    #[test]
    fn accuracy_table_rejects_out_of_range() {
        let bad = BTreeMap::from([(TaskKind::QnA, 1.2)]);
        assert!(AccuracyTable::new(bad).is_err());
        let t: AccuracyTable = serde_json::from_str(r#"{"qna": 0.5}"#).unwrap();
        assert_eq!(t.get(TaskKind::QnA), 0.5);
        assert_eq!(t.get(TaskKind::Translation), 1.0);
    }

    #[test]
    fn empirical_single_task_and_disjoint() {
        let s = BucketScheme::default();
        let trace = vec![r(TaskKind::QnA, 20, 300), r(TaskKind::QnA, 40, 400)];
        let m = fit_empirical(&trace, &s, &DEFAULT_PROMPT_BANDS).unwrap();
        assert_eq!(m.predict(TaskKind::QnA, 20), 1);

        let trace = vec![
            r(TaskKind::QnA, 20, 300),
            r(TaskKind::QnA, 20, 500),
            r(TaskKind::Translation, 20, 10),
            r(TaskKind::Translation, 20, 20),
            r(TaskKind::Translation, 20, 30),
        ];
        let m = fit_empirical(&trace, &s, &DEFAULT_PROMPT_BANDS).unwrap();
        assert_eq!(m.predict(TaskKind::QnA, 20), 1);
        assert_eq!(m.predict(TaskKind::Translation, 20), 0);
        // Unseen band falls back to the task marginal.
        assert_eq!(m.predict(TaskKind::QnA, 900), 1);
        // Unseen task falls back to the global marginal.
        assert_eq!(m.predict(TaskKind::SentimentAnalysis, 20), 0);
        let d = m.distribution(TaskKind::SentimentAnalysis, 20);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_rejects_empty() {
        assert!(fit_empirical(&[], &BucketScheme::default(), &DEFAULT_PROMPT_BANDS).is_err());
    }

    #[test]
    fn evaluate_oracle_and_constant() {
        let s = BucketScheme::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trace = vec![
            r(TaskKind::QnA, 20, 10),
            r(TaskKind::QnA, 20, 300),
            r(TaskKind::Translation, 20, 20),
            r(TaskKind::Translation, 20, 2000),
        ];
        let rep = evaluate_predictor(&Predictor::Oracle, &s, &trace, &mut rng).unwrap();
        assert_eq!(rep.overall, 1.0);
        assert!(rep.per_task.values().all(|&a| a == 1.0));
        // Bucket 0 holds 2 of the 4 labels.
        let prevalence = trace.iter().filter(|q| s.bucket_of(q.true_decode_tokens) == 0).count() as f64 / 4.0;
        let rep = evaluate_predictor(&Predictor::Constant(0), &s, &trace, &mut rng).unwrap();
        assert_eq!(rep.overall, prevalence);
        assert!(evaluate_predictor(&Predictor::Oracle, &s, &[], &mut rng).is_err());
    }

    #[test]
    fn simulated_overall_accuracy_on_mixture() {
        let specs = TaskSpec::reference_mix(&HardwareProfile::default(), &Thresholds::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trace = generate_mixture(&specs, 31_329, ArrivalProcess::Poisson { rate: 20.0 }, &mut rng).unwrap();
        let reqs: Vec<_> = trace.iter().cloned().collect();
        let rep = evaluate_predictor(&Predictor::Simulated(AccuracyTable::reference()), &BucketScheme::default(), &reqs, &mut rng)
            .unwrap();
        assert!((rep.overall - 0.7915).abs() < 0.01, "{}", rep.overall);
    }

    proptest! {
        #[test]
        fn bucket_of_monotone(a in 0usize..10_000, b in 0usize..10_000) {
            let s = BucketScheme::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.bucket_of(lo) <= s.bucket_of(hi));
        }

        #[test]
        fn simulated_stays_in_range(b in 0usize..4, acc in 0.0f64..=1.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = predict_simulated(b, 4, acc, &mut rng);
            prop_assert!(p < 4);
            prop_assert!(p.abs_diff(b) <= 1);
        }

        #[test]
        fn empirical_is_total(task_i in 0usize..5, p in 0usize..5000) {
            let s = BucketScheme::default();
            let trace = vec![r(TaskKind::QnA, 20, 300)];
            let m = fit_empirical(&trace, &s, &DEFAULT_PROMPT_BANDS).unwrap();
            prop_assert!(m.predict(TaskKind::ALL[task_i], p) < s.num_buckets());
        }
    }
}
