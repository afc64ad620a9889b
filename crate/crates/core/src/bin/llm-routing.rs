use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use llm_routing::error::{Error, Result};
use llm_routing::harness::{
    brute_force_partition, calibrate, emit_report, evaluate, read_samples, run_experiment, run_matrix, train_agent,
    uniform_requests, write_evaluation_csv, write_matrix_csv, write_training_csv, ExperimentConfig,
};
use llm_routing::rl::Agent;

#[derive(Parser)]
#[command(name = "llm-routing", version, about = "Simulate and train request routers for replicated LLM serving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; defaults apply to every missing field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training episodes, overriding the config.
    #[arg(long)]
    episodes: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        if let Some(e) = self.episodes {
            cfg.episodes = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured router over every seed and write reports.
    Run(Common),
    /// Run the batching x routing x scenario grid from the config's matrix block.
    Matrix(Common),
    /// Exhaustively score every split of a small request set over two instances.
    Partition {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        requests: usize,
        /// Seconds between arrivals.
        #[arg(long, default_value_t = 1.0)]
        interval: f64,
        #[arg(long, default_value_t = 10)]
        min_tokens: usize,
        #[arg(long, default_value_t = 100)]
        max_tokens: usize,
    },
    /// Train a DQN router and save a checkpoint.
    Train(Common),
    /// Compare a trained agent against the config's baseline heuristics.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load, overriding the config.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fit a hardware profile to measured iteration latencies.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// CSV with columns phase,batch_tokens,kv_tokens,latency_s.
        #[arg(long)]
        input: PathBuf,
    },
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn checkpoint_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.checkpoint.clone().unwrap_or_else(|| cfg.output.join("agent"))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(c) => {
            let cfg = c.load()?;
            for &seed in &cfg.seeds {
                let out = run_experiment(&cfg, seed)?;
                let dir = cfg.output.join(format!("seed-{seed}"));
                emit_report(&out.report, &out.samples, &dir)?;
                let s = &out.report.summary;
                println!(
                    "seed {seed}: {} completed, mean E2E {:.3} s, p99 {:.3} s, makespan {:.2} s -> {}",
                    s.completed,
                    s.e2e.mean,
                    s.e2e.p99,
                    s.total_e2e_s,
                    dir.display()
                );
            }
        }
        Command::Matrix(c) => {
            let cfg = c.load()?;
            let cells = run_matrix(&cfg)?;
            std::fs::create_dir_all(&cfg.output)?;
            let path = cfg.output.join("matrix.csv");
            write_matrix_csv(&cells, &path)?;
            for cell in &cells {
                println!(
                    "{:<14} {:<16} {:<22} seed {:<4} makespan {:>9.2} s  mean E2E {:>8.3} s",
                    cell.scenario,
                    cell.batching,
                    cell.routing,
                    cell.seed,
                    cell.summary.total_e2e_s,
                    cell.summary.e2e.mean
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Partition {
            common,
            requests,
            interval,
            min_tokens,
            max_tokens,
        } => {
            let cfg = common.load()?;
            if min_tokens == 0 || min_tokens > max_tokens {
                return Err(Error::config("min_tokens", "must be positive and at most max_tokens"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds[0]);
            let reqs = uniform_requests(requests, interval, min_tokens, max_tokens, &mut rng);
            let res = brute_force_partition(&reqs, cfg.instance, cfg.profile)?;
            std::fs::create_dir_all(&cfg.output)?;
            let path = cfg.output.join("partition.json");
            write_json(&res, &path)?;
            println!(
                "{} assignments: best {:.3} s, mean {:.3} s, worst {:.3} s; random is {:.2}% above best",
                res.log.len(),
                res.best,
                res.mean,
                res.worst,
                100.0 * res.mean_over_best()
            );
            println!("best assignment {:?} -> {}", res.best_assignment().assignment, path.display());
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            let seed = cfg.seeds[0];
            let (agent, stats) = train_agent(&cfg, seed)?;
            let ckpt = checkpoint_path(&cfg);
            if let Some(dir) = ckpt.parent() {
                std::fs::create_dir_all(dir)?;
            }
            agent.save(&ckpt)?;
            std::fs::create_dir_all(&cfg.output)?;
            write_training_csv(&stats, &cfg.output.join("training.csv"))?;
            for s in &stats {
                println!(
                    "episode {:>3}: reward {:>12.2}  mean E2E {:>8.3} s  eps {:.3}",
                    s.episode, s.total_reward, s.mean_e2e, s.epsilon
                );
            }
            println!("saved {}", ckpt.display());
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = common.load()?;
            let ckpt = checkpoint.unwrap_or_else(|| checkpoint_path(&cfg));
            let agent = Agent::load(&ckpt)?;
            let rows = evaluate(&cfg, &agent, "rl", &cfg.baselines)?;
            std::fs::create_dir_all(&cfg.output)?;
            let path = cfg.output.join("evaluation.csv");
            write_evaluation_csv(&rows, &path)?;
            for r in &rows {
                println!(
                    "{:<22} seed {:<6} mean E2E {:>8.3} s  p99 {:>8.3} s",
                    r.policy, r.seed, r.summary.e2e.mean, r.summary.e2e.p99
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Calibrate { common, input } => {
            let cfg = common.load()?;
            let c = calibrate(&read_samples(&input)?)?;
            let path = cfg.output.join("profile.json");
            write_json(&c.profile, &path)?;
            println!(
                "fitted {} samples, rmse {:.3e} s\n{}",
                c.samples,
                c.rmse_s,
                serde_json::to_string_pretty(&c.profile)?
            );
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
