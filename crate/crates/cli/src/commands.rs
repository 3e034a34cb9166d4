//! One function per subcommand. Each writes its outputs under `out` and
//! records them in the run manifest.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hsrl_core::checkpoint::Checkpoint;
use hsrl_core::env::{split_records, write_records, LogRecord};
use hsrl_core::tokenizer::{save_codebook, write_embeddings, CollisionReport};
use hsrl_core::trainer::{
    demonstrations, evaluate, train, train_supervised, training_rng, Agent, EvalSummary,
    IterationReport, Variant,
};

use crate::config::{DataSource, RunConfig};
use crate::error::CliError;
use crate::manifest::ManifestGuard;
use crate::pipeline::{
    fit_simulators, load_dataset, median, run_method, tokenize as fit_tokenizer, Method, Prepared,
};

pub const RECORDS_FILE: &str = "records.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const CODEBOOK_FILE: &str = "codebook.bin";
pub const TOKENIZER_CSV: &str = "tokenizer.csv";
pub const SIMULATOR_CSV: &str = "simulator.csv";
pub const CHECKPOINT_FILE: &str = "agent.ckpt";
pub const METRICS_CSV: &str = "metrics.csv";
pub const EVAL_CSV: &str = "eval.csv";
pub const EPISODES_CSV: &str = "episodes.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_RUNS_CSV: &str = "ablation_runs.csv";

/// Shortest round-trip text for a float; empty for a missing value.
fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_writer(path: &Path, header: &[String]) -> Result<csv::Writer<std::fs::File>, CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    Ok(w)
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

const SUMMARY_COLUMNS: [&str; 6] = [
    "reward_mean",
    "reward_median",
    "reward_std",
    "depth_mean",
    "depth_median",
    "depth_std",
];

fn summary_fields(s: &EvalSummary) -> Vec<String> {
    [
        s.reward_mean,
        s.reward_median,
        s.reward_std,
        s.depth_mean,
        s.depth_median,
        s.depth_std,
    ]
    .map(num)
    .to_vec()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenDataReport {
    pub records: usize,
    pub items: usize,
}

/// Writes the synthetic records and item embeddings.
pub fn gen_data(
    config: &RunConfig,
    out: &Path,
    guard: &mut ManifestGuard,
) -> Result<GenDataReport, CliError> {
    if config.data.source != DataSource::Synthetic {
        return Err(CliError::Config(
            "gen-data needs data.source = \"synthetic\"".into(),
        ));
    }
    let data = load_dataset(config)?;
    let records = out.join(RECORDS_FILE);
    let embeddings = out.join(EMBEDDINGS_FILE);
    write_records(&records, &data.records)?;
    write_embeddings(&embeddings, &data.embeddings)?;
    guard.record_output(&records);
    guard.record_output(&embeddings);
    Ok(GenDataReport {
        records: data.records.len(),
        items: data.embeddings.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizeReport {
    pub collisions: CollisionReport,
    pub level_errors: Vec<f64>,
    pub codebook: PathBuf,
}

/// Fits the codebook, saves it, and writes per-level statistics.
pub fn tokenize(
    config: &RunConfig,
    out: &Path,
    guard: &mut ManifestGuard,
) -> Result<TokenizeReport, CliError> {
    let data = load_dataset(config)?;
    let fit = fit_tokenizer(config, &data)?;
    let codebook = out.join(CODEBOOK_FILE);
    save_codebook(&codebook, &fit.codebook, &fit.index)?;
    guard.record_output(&codebook);
    let collisions = fit.index.collision_report();
    let stats = out.join(TOKENIZER_CSV);
    let mut w = csv_writer(
        &stats,
        &strings(&["level", "vocab", "entropy", "residual_error"]),
    )?;
    for (l, (&t, err)) in config
        .tokenizer
        .vocab_sizes
        .iter()
        .zip(&fit.level_errors)
        .enumerate()
    {
        w.write_record([
            (l + 1).to_string(),
            t.to_string(),
            num(collisions.level_entropy[l]),
            num(*err),
        ])?;
    }
    w.flush()?;
    guard.record_output(&stats);
    Ok(TokenizeReport {
        collisions,
        level_errors: fit.level_errors,
        codebook,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatorReport {
    /// Log-loss of the training simulator on the records it did not see.
    pub heldout_log_loss: f64,
    /// Log-loss of predicting the training click rate everywhere.
    pub constant_log_loss: f64,
    pub eval_log_loss: f64,
}

fn constant_log_loss(train: &[LogRecord], test: &[LogRecord]) -> f64 {
    let labels = |rs: &[LogRecord]| {
        rs.iter()
            .flat_map(|r| r.labels.clone())
            .collect::<Vec<bool>>()
    };
    let fit = labels(train);
    let p = (fit.iter().filter(|y| **y).count() as f64 / fit.len().max(1) as f64)
        .clamp(1e-12, 1.0 - 1e-12);
    let eval = labels(test);
    -eval
        .iter()
        .map(|&y| if y { p.ln() } else { (1.0 - p).ln() })
        .sum::<f64>()
        / eval.len().max(1) as f64
}

/// Fits the training and evaluation response models and saves them.
pub fn fit_sim(
    config: &RunConfig,
    out: &Path,
    guard: &mut ManifestGuard,
) -> Result<SimulatorReport, CliError> {
    let data = load_dataset(config)?;
    let (train_model, eval_model) = fit_simulators(config, &data)?;
    let (train_records, heldout) = split_records(&data.records, 0.8);
    for (name, model) in [
        ("psi_train.ckpt", &train_model),
        ("psi_eval.ckpt", &eval_model),
    ] {
        let mut ckpt = Checkpoint::new();
        ckpt.add_store("psi", model.params());
        let path = out.join(name);
        write_atomic(&path, &ckpt.to_bytes())?;
        guard.record_output(&path);
    }
    let report = SimulatorReport {
        heldout_log_loss: train_model.log_loss(&heldout)?,
        constant_log_loss: constant_log_loss(&train_records, &heldout),
        eval_log_loss: eval_model.log_loss(&data.records)?,
    };
    let path = out.join(SIMULATOR_CSV);
    let mut w = csv_writer(
        &path,
        &strings(&["model", "fitted_records", "scored_on", "log_loss"]),
    )?;
    w.write_record([
        "train",
        &train_records.len().to_string(),
        "heldout",
        &num(report.heldout_log_loss),
    ])?;
    w.write_record([
        "constant",
        &train_records.len().to_string(),
        "heldout",
        &num(report.constant_log_loss),
    ])?;
    w.write_record([
        "eval",
        &data.records.len().to_string(),
        "all",
        &num(report.eval_log_loss),
    ])?;
    w.flush()?;
    guard.record_output(&path);
    Ok(report)
}

fn metrics_header(levels: usize) -> Vec<String> {
    let mut h = strings(&[
        "iteration",
        "total_reward",
        "depth",
        "loss_V",
        "loss_PG",
        "H_en",
        "loss_BC",
    ]);
    h.extend((0..levels).map(|l| format!("w_{l}")));
    h.push("seed".into());
    h
}

/// Aggregates per-iteration reports into one metrics row per window.
struct MetricsLog {
    writer: csv::Writer<std::fs::File>,
    seed: u64,
    reports: Vec<IterationReport>,
}

impl MetricsLog {
    fn push(&mut self, report: &IterationReport) {
        self.reports.push(report.clone());
    }

    fn flush(&mut self) -> Result<(), CliError> {
        let Some(last) = self.reports.last() else {
            return Ok(());
        };
        let n = self.reports.len() as f64;
        let finished: Vec<_> = self
            .reports
            .iter()
            .flat_map(|r| r.finished.clone())
            .collect();
        let mean_or_blank = |xs: Vec<f64>| {
            if xs.is_empty() {
                String::new()
            } else {
                num(xs.iter().sum::<f64>() / xs.len() as f64)
            }
        };
        let avg = |f: fn(&IterationReport) -> f64| num(self.reports.iter().map(f).sum::<f64>() / n);
        let mut row = vec![
            last.iteration.to_string(),
            mean_or_blank(finished.iter().map(|m| m.total_reward).collect()),
            mean_or_blank(finished.iter().map(|m| m.depth as f64).collect()),
            avg(|r| r.loss.critic),
            avg(|r| r.loss.policy_gradient),
            avg(|r| r.loss.entropy),
            avg(|r| r.loss.bc),
        ];
        row.extend(last.loss.weights.iter().map(|w| num(*w)));
        row.push(self.seed.to_string());
        self.writer.write_record(&row)?;
        self.writer.flush()?;
        self.reports.clear();
        Ok(())
    }
}

fn save_agent(agent: &Agent, path: &Path) -> Result<(), CliError> {
    write_atomic(path, &agent.to_checkpoint().to_bytes())
}

/// Trains the full agent (or the behavioral-cloning baseline), with periodic
/// evaluation, metrics and checkpoints.
pub fn train_command(
    config: &RunConfig,
    out: &Path,
    guard: &mut ManifestGuard,
    baseline: bool,
) -> Result<EvalSummary, CliError> {
    let prepared = Prepared::new(config)?;
    let seed = config.seeds.agent;
    let sim_seed = config.seeds.simulator;
    let mut agent = prepared.agent(seed)?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    save_agent(&agent, &ckpt_path)?;
    guard.record_output(&ckpt_path);

    let levels = agent.critic().weight_snapshot().len();
    let metrics_path = out.join(METRICS_CSV);
    guard.record_output(&metrics_path);
    let mut log = MetricsLog {
        writer: csv_writer(&metrics_path, &metrics_header(levels))?,
        seed,
        reports: Vec::new(),
    };
    let eval_path = out.join(EVAL_CSV);
    guard.record_output(&eval_path);
    let mut eval_header = strings(&["iteration"]);
    eval_header.extend(strings(&SUMMARY_COLUMNS));
    let mut eval_log = csv_writer(&eval_path, &eval_header)?;

    let sims = &prepared.simulators;
    let every = config.eval.every;
    let log_every = config.eval.log_every;
    let episodes = config.eval.episodes;
    let mut rng = training_rng(seed, sim_seed);
    if baseline {
        let iterations = config.agent.iterations;
        let records = prepared.data.training_records();
        for iteration in 1..=iterations {
            let loss = train_supervised(&mut agent, &records, 1, &mut rng)?[0];
            log.push(&IterationReport {
                iteration,
                loss: hsrl_core::trainer::LossReport {
                    critic: f64::NAN,
                    policy_gradient: f64::NAN,
                    entropy: f64::NAN,
                    bc: loss,
                    total: loss,
                    mean_advantage: f64::NAN,
                    weights: agent.critic().weight_snapshot(),
                },
                finished: Vec::new(),
            });
            if iteration % log_every == 0 {
                log.flush()?;
            }
            if every > 0 && iteration % every == 0 && iteration < iterations {
                let s = evaluate(&sims.eval, &agent, episodes, sim_seed)?;
                let mut row = vec![iteration.to_string()];
                row.extend(summary_fields(&s));
                eval_log.write_record(&row)?;
                eval_log.flush()?;
                save_agent(&agent, &ckpt_path)?;
            }
        }
    } else {
        let logged = if config.agent.logged_bc_batch > 0 {
            demonstrations(&agent, &prepared.data.training_records())?
        } else {
            Vec::new()
        };
        let iterations = config.agent.iterations;
        let result = train(
            &mut agent,
            &sims.train,
            &logged,
            &mut rng,
            |report, agent| {
                log.push(report);
                let i = report.iteration;
                let io = |e: CliError| hsrl_core::trainer::TrainError::Config(e.to_string());
                if i % log_every == 0 {
                    log.flush().map_err(io)?;
                }
                if every > 0 && i % every == 0 && i < iterations {
                    let s = evaluate(&sims.eval, agent, episodes, sim_seed)?;
                    let mut row = vec![i.to_string()];
                    row.extend(summary_fields(&s));
                    eval_log.write_record(&row).map_err(|e| io(e.into()))?;
                    eval_log.flush().map_err(|e| io(e.into()))?;
                    save_agent(agent, &ckpt_path).map_err(io)?;
                }
                Ok(())
            },
        );
        if let Err(e) = result {
            log.flush()?;
            return Err(e.into());
        }
    }
    log.flush()?;
    save_agent(&agent, &ckpt_path)?;
    let summary = evaluate(&sims.eval, &agent, episodes, sim_seed)?;
    let mut row = vec![config.agent.iterations.to_string()];
    row.extend(summary_fields(&summary));
    eval_log.write_record(&row)?;
    eval_log.flush()?;
    Ok(summary)
}

/// Loads a checkpoint and runs greedy episodes on the evaluation simulator.
pub fn eval_command(
    config: &RunConfig,
    out: &Path,
    guard: &mut ManifestGuard,
    checkpoint: &Path,
) -> Result<EvalSummary, CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let prepared = Prepared::new(config)?;
    let agent = Agent::from_checkpoint(
        config.agent_spec(),
        &config.tokenizer.vocab_sizes,
        prepared.data.catalog.clone(),
        prepared.fit.index.clone(),
        &ckpt,
    )?;
    let summary = evaluate(
        &prepared.simulators.eval,
        &agent,
        config.eval.episodes,
        config.seeds.simulator,
    )?;
    let path = out.join(EPISODES_CSV);
    let mut w = csv_writer(&path, &strings(&["episode", "total_reward", "depth"]))?;
    for (e, m) in summary.episodes.iter().enumerate() {
        w.write_record([e.to_string(), num(m.total_reward), m.depth.to_string()])?;
    }
    w.flush()?;
    guard.record_output(&path);
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Entropy,
    Vocab,
    Levels,
}

impl SweepAxis {
    pub const ENTROPY_GRID: [f64; 4] = [0.0, 0.1, 0.2, 0.3];
    pub const VOCAB_GRID: [usize; 5] = [16, 32, 64, 80, 128];
    pub const LEVELS_GRID: [usize; 4] = [2, 3, 4, 5];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Entropy => "entropy",
            SweepAxis::Vocab => "vocab",
            SweepAxis::Levels => "levels",
        }
    }

    /// Grid values as text, paired with the config each one produces.
    pub fn grid(self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        let levels = base.tokenizer.vocab_sizes.len();
        let vocab = base.tokenizer.vocab_sizes[0];
        match self {
            SweepAxis::Entropy => Self::ENTROPY_GRID
                .iter()
                .map(|&l| {
                    let mut c = base.clone();
                    c.agent.lambda_en = l;
                    (format!("{l}"), c)
                })
                .collect(),
            SweepAxis::Vocab => Self::VOCAB_GRID
                .iter()
                .map(|&t| {
                    let mut c = base.clone();
                    c.tokenizer.vocab_sizes = vec![t; levels];
                    (t.to_string(), c)
                })
                .collect(),
            SweepAxis::Levels => Self::LEVELS_GRID
                .iter()
                .map(|&l| {
                    let mut c = base.clone();
                    c.tokenizer.vocab_sizes = vec![vocab; l];
                    (l.to_string(), c)
                })
                .collect(),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "entropy" => Ok(SweepAxis::Entropy),
            "vocab" => Ok(SweepAxis::Vocab),
            "levels" => Ok(SweepAxis::Levels),
            _ => Err(CliError::Config(format!(
                "unknown sweep axis `{s}` (expected entropy, vocab or levels)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    pub summary: EvalSummary,
}

fn agent_seeds(config: &RunConfig) -> Vec<u64> {
    (0..config.eval.runs as u64)
        .map(|i| config.seeds.agent.wrapping_add(i))
        .collect()
}

/// One training and evaluation run per grid point and agent seed.
pub fn sweep(
    config: &RunConfig,
    out: &Path,
    guard: &mut ManifestGuard,
    axis: SweepAxis,
) -> Result<Vec<SweepRow>, CliError> {
    let path = out.join(format!("sweep_{axis}.csv"));
    guard.record_output(&path);
    let mut header = strings(&["axis", "value", "seed"]);
    header.extend(strings(&SUMMARY_COLUMNS));
    let mut w = csv_writer(&path, &header)?;
    let mut rows = Vec::new();
    for (value, point) in axis.grid(config) {
        point.validate()?;
        let prepared = Prepared::new(&point)?;
        for seed in agent_seeds(config) {
            let (_, summary) = run_method(&prepared, Method::Rl(Variant::Full), seed)?;
            let mut rec = vec![axis.name().to_string(), value.clone(), seed.to_string()];
            rec.extend(summary_fields(&summary));
            w.write_record(&rec)?;
            w.flush()?;
            rows.push(SweepRow {
                value: value.clone(),
                seed,
                summary,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    /// Per-seed evaluation summaries.
    pub runs: Vec<(u64, EvalSummary)>,
    /// Median over seeds of each seed's median Total Reward.
    pub reward_median: f64,
    pub reward_mean: f64,
    pub depth_median: f64,
    pub depth_mean: f64,
    /// Relative change of `reward_median` against the full model, in percent.
    pub delta_pct: f64,
}

/// Trains and evaluates all ablation variants under shared seeds.
pub fn ablate(
    config: &RunConfig,
    out: &Path,
    guard: &mut ManifestGuard,
) -> Result<Vec<AblationRow>, CliError> {
    let prepared = Prepared::new(config)?;
    let runs_path = out.join(ABLATION_RUNS_CSV);
    guard.record_output(&runs_path);
    let mut header = strings(&["variant", "seed"]);
    header.extend(strings(&SUMMARY_COLUMNS));
    let mut runs_csv = csv_writer(&runs_path, &header)?;
    let mut rows: Vec<AblationRow> = Vec::new();
    for variant in Variant::ALL {
        let mut runs = Vec::new();
        for seed in agent_seeds(config) {
            let (_, summary) = run_method(&prepared, Method::Rl(variant), seed)?;
            let mut rec = vec![variant.name().to_string(), seed.to_string()];
            rec.extend(summary_fields(&summary));
            runs_csv.write_record(&rec)?;
            runs_csv.flush()?;
            runs.push((seed, summary));
        }
        let per_seed =
            |f: fn(&EvalSummary) -> f64| runs.iter().map(|(_, s)| f(s)).collect::<Vec<f64>>();
        let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len() as f64;
        rows.push(AblationRow {
            variant,
            reward_median: median(&per_seed(|s| s.reward_median)),
            reward_mean: mean(per_seed(|s| s.reward_mean)),
            depth_median: median(&per_seed(|s| s.depth_median)),
            depth_mean: mean(per_seed(|s| s.depth_mean)),
            delta_pct: 0.0,
            runs,
        });
    }
    let full = rows[0].reward_median;
    for row in &mut rows {
        row.delta_pct = if row.variant == Variant::Full {
            0.0
        } else if full != 0.0 {
            100.0 * (row.reward_median - full) / full.abs()
        } else {
            f64::NAN
        };
    }
    let path = out.join(ABLATION_CSV);
    guard.record_output(&path);
    let mut w = csv_writer(
        &path,
        &strings(&[
            "variant",
            "runs",
            "reward_median",
            "reward_mean",
            "depth_median",
            "depth_mean",
            "delta_pct",
        ]),
    )?;
    for r in &rows {
        w.write_record([
            r.variant.name().to_string(),
            r.runs.len().to_string(),
            num(r.reward_median),
            num(r.reward_mean),
            num(r.depth_median),
            num(r.depth_mean),
            num(r.delta_pct),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}
