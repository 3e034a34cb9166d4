use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hsrl_cli::commands::{self, SweepAxis, CHECKPOINT_FILE};
use hsrl_cli::config::RunConfig;
use hsrl_cli::error::CliError;
use hsrl_cli::manifest::ManifestGuard;
use hsrl_core::trainer::EvalSummary;

#[derive(Debug, Parser)]
#[command(
    name = "hsrl",
    version,
    about = "Slate recommendation with semantic-ID policies and multi-level critics"
)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seeds.agent`.
    #[arg(long, global = true)]
    seed_agent: Option<u64>,
    /// Overrides `seeds.simulator`.
    #[arg(long, global = true)]
    seed_sim: Option<u64>,
    /// Overrides `seeds.tokenizer`.
    #[arg(long, global = true)]
    seed_tok: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic records and item embeddings.
    GenData,
    /// Fit the residual-quantization codebook and report collisions.
    Tokenize,
    /// Fit the training and evaluation user-response models.
    FitSim,
    /// Train an agent with periodic evaluation.
    Train {
        /// Train the behavioral-cloning baseline instead.
        #[arg(long)]
        baseline: bool,
    },
    /// Evaluate a saved agent on the evaluation simulator.
    Eval {
        /// Agent checkpoint; defaults to the one in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate across one hyperparameter grid.
    Sweep {
        /// entropy, vocab or levels.
        #[arg(long)]
        axis: String,
    },
    /// Train and evaluate every ablation variant.
    Ablate,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Tokenize => "tokenize",
            Command::FitSim => "fit-sim",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::Ablate => "ablate",
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed_agent {
        config.seeds.agent = s;
    }
    if let Some(s) = cli.seed_sim {
        config.seeds.simulator = s;
    }
    if let Some(s) = cli.seed_tok {
        config.seeds.tokenizer = s;
    }
    config.validate()?;
    Ok(config)
}

fn print_summary(label: &str, s: &EvalSummary) {
    println!(
        "{label}: reward median {:.4} mean {:.4} std {:.4} | depth median {:.2} mean {:.2} std {:.2} over {} episodes",
        s.reward_median,
        s.reward_mean,
        s.reward_std,
        s.depth_median,
        s.depth_mean,
        s.depth_std,
        s.episodes.len()
    );
}

fn execute(cli: &Cli, config: &RunConfig, guard: &mut ManifestGuard) -> Result<(), CliError> {
    let out = &cli.out;
    match &cli.command {
        Command::GenData => {
            let r = commands::gen_data(config, out, guard)?;
            println!("wrote {} records over {} items", r.records, r.items);
        }
        Command::Tokenize => {
            let r = commands::tokenize(config, out, guard)?;
            let c = &r.collisions;
            for (l, (h, e)) in c.level_entropy.iter().zip(&r.level_errors).enumerate() {
                println!(
                    "level {}: entropy {h:.4} bits, residual error {e:.6}",
                    l + 1
                );
            }
            println!(
                "{} items, {} distinct ids, {} colliding ids, largest bucket {}",
                c.items, c.distinct_sids, c.colliding_sids, c.max_bucket
            );
        }
        Command::FitSim => {
            let r = commands::fit_sim(config, out, guard)?;
            println!(
                "held-out log-loss {:.4} (constant-rate baseline {:.4}); evaluation model log-loss {:.4}",
                r.heldout_log_loss, r.constant_log_loss, r.eval_log_loss
            );
        }
        Command::Train { baseline } => {
            let s = commands::train_command(config, out, guard, *baseline)?;
            print_summary(if *baseline { "bc_only" } else { "full" }, &s);
        }
        Command::Eval { checkpoint } => {
            let path = checkpoint
                .clone()
                .unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            let s = commands::eval_command(config, out, guard, &path)?;
            print_summary("eval", &s);
        }
        Command::Sweep { axis } => {
            let axis: SweepAxis = axis.parse()?;
            for row in commands::sweep(config, out, guard, axis)? {
                print_summary(
                    &format!("{axis}={} seed {}", row.value, row.seed),
                    &row.summary,
                );
            }
        }
        Command::Ablate => {
            for row in commands::ablate(config, out, guard)? {
                println!(
                    "{:<14} reward median {:.4} depth median {:.2} delta {:+.1}%",
                    row.variant.name(),
                    row.reward_median,
                    row.depth_median,
                    row.delta_pct
                );
            }
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(cli)?;
    let mut guard = ManifestGuard::begin(&cli.out, cli.command.name(), &config)?;
    let result = execute(cli, &config, &mut guard);
    guard.finish(result)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
