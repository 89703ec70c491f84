use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tmlab_cli::commands::{self, EvalRequest, Fault, SampleRequest};
use tmlab_cli::{CliError, ExperimentConfig};
use tmlab_core::checks::Suite;

#[derive(Parser)]
#[command(name = "tmlab", version, about = "Train, sample and check transition-matching models")]
struct Cli {
    /// Worker threads for sampling and evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint, loss trace and manifest.
    Train(RunArgs),
    /// Draw samples from a checkpoint; one CSV per sweep cell.
    Sample {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to `<out>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of chains (defaults to `eval.samples`).
        #[arg(long)]
        n: Option<usize>,
        /// Condition all chains on this class.
        #[arg(long)]
        class: Option<usize>,
    },
    /// Score a sample CSV against held-out data (or another sample CSV).
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        model_id: Option<String>,
    },
    /// Aggregate metric tables into per-model rank scores.
    Rank {
        #[arg(long = "table", required = true)]
        tables: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run verification suites: process, gradients, marginals, oracle_end2end.
    Check {
        /// Repeatable; all suites when omitted.
        #[arg(long = "suite")]
        suites: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true, value_enum)]
        fault: Option<Fault>,
    },
}

fn load(run: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&run.config)?;
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &run.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("`--threads`: must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("`--threads`: {e}")))?;
    }
    match cli.command {
        Command::Train(run) => {
            let cfg = load(&run)?;
            let out = commands::cmd_train(&cfg)?;
            let loss = match (out.initial_loss, out.final_loss) {
                (Some(a), Some(b)) => format!("loss {a:.4} -> {b:.4}"),
                _ => "no loss records".into(),
            };
            println!("trained {} steps, {loss}; checkpoint {}", cfg.train.steps, out.checkpoint.display());
        }
        Command::Sample { run, checkpoint, n, class } => {
            let cfg = load(&run)?;
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.out_dir.join("checkpoint.bin"));
            let cells = commands::cmd_sample(&cfg, &SampleRequest { checkpoint: &checkpoint, n, class })?;
            for c in cells {
                println!(
                    "{}: backbone_nfe {} head_nfe {}",
                    cfg.out_dir.join(&c.file).display(),
                    c.backbone_nfe,
                    c.head_nfe
                );
            }
        }
        Command::Eval { run, samples, reference, model_id } => {
            let cfg = load(&run)?;
            let table = commands::cmd_eval(
                &cfg,
                &EvalRequest {
                    samples: &samples,
                    reference: reference.as_deref(),
                    model_id,
                },
            )?;
            for (spec, v) in table.metrics().iter().zip(table.scores().row(0)) {
                println!("{}: {v}", spec.name);
            }
        }
        Command::Rank { tables, out } => {
            commands::cmd_rank(&tables, out.as_deref())?;
        }
        Command::Check { suites, seed, out, fault } => {
            let suites = if suites.is_empty() {
                Suite::ALL.to_vec()
            } else {
                suites
                    .iter()
                    .map(|s| s.parse::<Suite>().map_err(|e| CliError::Validation(format!("`--suite`: {e}"))))
                    .collect::<Result<_, _>>()?
            };
            commands::cmd_check(&suites, seed, fault, out.as_deref().map(Path::new))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
