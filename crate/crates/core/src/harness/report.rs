//! Report files. Floats are written in shortest round-trip form so that
//! re-reading a CSV gives back the exact values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiment::{EvaluationRow, MatrixCell};
use super::metrics::{MetricsReport, RequestMetrics};
use crate::error::Result;
use crate::latency::RequestClass;
use crate::rl::EpisodeStats;
use crate::routing::TickSample;
use crate::workload::{RequestId, TaskKind};

pub const SUMMARY_FILE: &str = "summary.json";
pub const REQUESTS_FILE: &str = "requests.csv";
pub const TIMESERIES_FILE: &str = "timeseries.csv";

/// One line of `requests.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRow {
    pub id: RequestId,
    pub task: TaskKind,
    pub class: RequestClass,
    pub prompt_tokens: usize,
    pub decode_tokens: usize,
    pub arrival_s: f64,
    pub ttft_s: f64,
    pub tbt_s: Option<f64>,
    pub e2e_s: f64,
    pub preemptions: usize,
    pub instance: usize,
}

impl From<&RequestMetrics> for RequestRow {
    fn from(m: &RequestMetrics) -> Self {
        Self {
            id: m.id,
            task: m.task,
            class: m.class,
            prompt_tokens: m.prompt_tokens,
            decode_tokens: m.decode_tokens,
            arrival_s: m.arrival_s,
            ttft_s: m.ttft_s,
            tbt_s: m.tbt_s,
            e2e_s: m.e2e_s,
            preemptions: m.preemptions,
            instance: m.instance,
        }
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_rows<T: Serialize>(rows: impl IntoIterator<Item = T>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.json`, `requests.csv` and `timeseries.csv` into `dir`,
/// creating it if needed. Returns the written paths.
pub fn emit_report(report: &MetricsReport, samples: &[TickSample], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let summary = dir.join(SUMMARY_FILE);
    #[derive(Serialize)]
    struct SummaryFile<'a> {
        summary: &'a super::metrics::Summary,
        throughput_tokens_per_window: &'a [usize],
    }
    write_json(
        &SummaryFile {
            summary: &report.summary,
            throughput_tokens_per_window: &report.throughput,
        },
        &summary,
    )?;

    let requests = dir.join(REQUESTS_FILE);
    write_rows(report.requests.iter().map(RequestRow::from), &requests)?;

    let timeseries = dir.join(TIMESERIES_FILE);
    write_timeseries(samples, &timeseries)?;
    Ok(vec![summary, requests, timeseries])
}

pub fn write_timeseries(samples: &[TickSample], path: &Path) -> Result<()> {
    let m = samples.first().map_or(0, |s| s.instance_waiting.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["tick".to_string(), "time_s".into(), "router_queue".into()];
    header.extend((0..m).map(|i| format!("queue_{i}")));
    header.extend((0..m).map(|i| format!("running_{i}")));
    header.push("tokens".into());
    w.write_record(&header)?;
    for s in samples {
        let mut rec = vec![s.tick.to_string(), s.time.to_string(), s.router_queue.to_string()];
        rec.extend(s.instance_waiting.iter().map(ToString::to_string));
        rec.extend(s.instance_running.iter().map(ToString::to_string));
        rec.push(s.tokens_emitted.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_requests_csv(path: &Path) -> Result<Vec<RequestRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Into::into)).collect()
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    scenario: &'a str,
    batching: &'a str,
    routing: String,
    seed: u64,
    completed: usize,
    total_e2e_s: f64,
    sum_e2e_s: f64,
    mean_e2e_s: f64,
    p99_e2e_s: f64,
    mean_ttft_s: f64,
    mean_tbt_s: Option<f64>,
    preemptions: usize,
    prefill_stalls: usize,
}

pub fn write_matrix_csv(cells: &[MatrixCell], path: &Path) -> Result<()> {
    write_rows(
        cells.iter().map(|c| SummaryRow {
            scenario: &c.scenario,
            batching: c.batching.name(),
            routing: c.routing.to_string(),
            seed: c.seed,
            completed: c.summary.completed,
            total_e2e_s: c.summary.total_e2e_s,
            sum_e2e_s: c.summary.sum_e2e_s,
            mean_e2e_s: c.summary.e2e.mean,
            p99_e2e_s: c.summary.e2e.p99,
            mean_ttft_s: c.summary.ttft.mean,
            mean_tbt_s: c.summary.tbt.map(|d| d.mean),
            preemptions: c.summary.preemptions,
            prefill_stalls: c.summary.prefill_stalls,
        }),
        path,
    )
}

pub fn write_evaluation_csv(rows: &[EvaluationRow], path: &Path) -> Result<()> {
    write_rows(
        rows.iter().map(|r| SummaryRow {
            scenario: "",
            batching: "",
            routing: r.policy.clone(),
            seed: r.seed,
            completed: r.summary.completed,
            total_e2e_s: r.summary.total_e2e_s,
            sum_e2e_s: r.summary.sum_e2e_s,
            mean_e2e_s: r.summary.e2e.mean,
            p99_e2e_s: r.summary.e2e.p99,
            mean_ttft_s: r.summary.ttft.mean,
            mean_tbt_s: r.summary.tbt.map(|d| d.mean),
            preemptions: r.summary.preemptions,
            prefill_stalls: r.summary.prefill_stalls,
        }),
        path,
    )
}

pub fn write_training_csv(stats: &[EpisodeStats], path: &Path) -> Result<()> {
    write_rows(stats, path)
}
