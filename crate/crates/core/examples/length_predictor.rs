//! Bucket predictors for response length: the simulated predictor with
//! per-task accuracies, and a frequency model fitted with and without the
//! task label.

use llm_routing::latency::{HardwareProfile, Thresholds};
use llm_routing::predictor::{
    evaluate_predictor, fit_empirical, fit_task_blind, AccuracyTable, BucketScheme, Predictor, DEFAULT_PROMPT_BANDS,
};
use llm_routing::workload::{generate_mixture, ArrivalProcess, Request, TaskSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> llm_routing::error::Result<()> {
    let specs = TaskSpec::reference_mix(&HardwareProfile::default(), &Thresholds::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let arrival = ArrivalProcess::Poisson { rate: 20.0 };
    let train: Vec<Request> = generate_mixture(&specs, 50_000, arrival, &mut rng)?.iter().cloned().collect();
    let test: Vec<Request> = generate_mixture(&specs, 50_000, arrival, &mut rng)?.iter().cloned().collect();
    let scheme = BucketScheme::prediction_default();
    let candidates = [
        ("simulated", Predictor::Simulated(AccuracyTable::reference())),
        ("empirical", Predictor::Empirical(fit_empirical(&train, &scheme, &DEFAULT_PROMPT_BANDS)?)),
        ("task-blind", Predictor::Empirical(fit_task_blind(&train, &scheme, &DEFAULT_PROMPT_BANDS)?)),
        ("always bucket 0", Predictor::Constant(0)),
    ];
    for (name, p) in candidates {
        let rep = evaluate_predictor(&p, &scheme, &test, &mut rng)?;
        let per: Vec<String> = rep
            .per_task
            .iter()
            .map(|(t, a)| format!("{}={:.1}", t.as_str(), 100.0 * a))
            .collect();
        println!("{name:<16} overall {:>5.2}%  {}", 100.0 * rep.overall, per.join(" "));
    }
    Ok(())
}
