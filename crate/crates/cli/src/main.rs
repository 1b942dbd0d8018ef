use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crtr::experiment::{self, ExperimentConfig, CHECKPOINT_FILE};
use crtr::Error;

/// Temporal contrastive representations for puzzle solving.
#[derive(Parser, Debug)]
#[command(name = "crtr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Checkpoint to evaluate, or to resume training from.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Evaluation worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the training trajectory file.
    Generate,
    /// Train the configured model and write a checkpoint plus training log.
    Train,
    /// Evaluate a model on generated instances and write reports.
    Evaluate,
    /// Train and evaluate every cell of the configured sweep.
    Sweep,
    /// Collect all reports under --out into summary.csv.
    Report,
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Error> {
    let path = common.config.as_deref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let c = &cli.common;
    if c.threads == Some(0) {
        return Err(Error::Config("--threads must be >= 1".into()));
    }
    if let Command::Report = cli.command {
        let dir = match (&c.out, &c.config) {
            (Some(d), _) => d.clone(),
            (None, Some(_)) => load_config(c)?.out_dir(None)?,
            (None, None) => return Err(Error::Config("report needs --out".into())),
        };
        let found = experiment::cmd_report(&dir)?;
        println!("{} reports -> {}", found.len(), dir.join("summary.csv").display());
        return Ok(());
    }
    let cfg = load_config(c)?;
    let out = cfg.out_dir(c.out.as_deref())?;
    let hash = cfg.hash();
    match cli.command {
        Command::Generate => {
            let s = experiment::cmd_generate(&cfg, &out)?;
            println!("{} trajectories, mean length {:.2}, max length {} -> {} (config {hash})", s.count, s.mean_len, s.max_len, s.path.display());
        }
        Command::Train => {
            let s = experiment::cmd_train(&cfg, &out, c.checkpoint.as_deref())?;
            match s.last {
                Some(st) => println!("{} steps, final loss {:.4}, accuracy {:.3} -> {} (config {hash})", s.steps, st.loss, st.accuracy, s.checkpoint.display()),
                None => println!("{} steps -> {} (config {hash})", s.steps, s.checkpoint.display()),
            }
        }
        Command::Evaluate => {
            let default_ck = out.join(CHECKPOINT_FILE);
            let ck: Option<&Path> = match (&c.checkpoint, cfg.model.is_trainable()) {
                (Some(p), _) => Some(p),
                (None, true) => Some(&default_ck),
                (None, false) => None,
            };
            let r = experiment::cmd_evaluate(&cfg, &out, ck, c.threads)?;
            for b in &r.budgets {
                println!("budget {:>6}: solved {:.3}, mean length {}", b.budget, b.success_rate, b.mean_length.map_or("-".to_string(), |l| format!("{l:.2}")));
            }
            if let Some(rho) = r.spearman_mean {
                println!("spearman {rho:.4}");
            }
            if let Some(acc) = r.in_batch_accuracy {
                println!("in-batch accuracy {acc:.4}");
            }
        }
        Command::Sweep => {
            let cells = experiment::cmd_sweep(&cfg, &out, c.threads)?;
            let failed = cells.iter().filter(|c| c.status != "ok").count();
            println!("{} cells, {failed} failed -> {}", cells.len(), out.join("sweep.csv").display());
        }
        Command::Report => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
