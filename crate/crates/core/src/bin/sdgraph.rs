use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sdgraph::cli::{self, AblationKind, CliError, Task};

#[derive(Parser)]
#[command(name = "sdgraph", version, about = "Dual sparse/dense graph models for vector sketches")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse QuickDraw ndjson, preprocess and write an SDG1 cache.
    Prep {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Preprocessing threads (0 = all cores).
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Cache the parsed sketches without preprocessing.
        #[arg(long)]
        raw: bool,
    },
    /// Train a classifier (cls), generator (gen) or retrieval encoder (ret).
    Train {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a cache.
    Eval {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Overrides the config saved with the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Draw sketches from a generator checkpoint (.s3 and .svg files).
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference check of all gradients.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train ablation variants with identical seeds and report accuracy.
    Ablate {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "info")]
        kind: AblationKind,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
}

fn run(args: Args) -> Result<(), CliError> {
    match args.cmd {
        Cmd::Prep { input, out, config, workers, raw } => {
            let cfg = cli::load_config(config.as_deref())?;
            println!("{}", cli::cmd_prep(&input, &out, &cfg, workers, raw)?);
        }
        Cmd::Train { task, cache, config, out } => {
            let cfg = cli::load_config(config.as_deref())?;
            let o = cli::cmd_train(task, &cache, &cfg, &out)?;
            for (e, l) in o.epoch_losses.iter().enumerate() {
                println!("epoch {:>3} loss {l:.6}", e + 1);
            }
            println!("best epoch {} -> {}", o.best_epoch, out.display());
        }
        Cmd::Eval { task, cache, ckpt, config } => {
            for (k, v) in cli::cmd_eval(task, &cache, &ckpt, config.as_deref())? {
                println!("{k} {v:.6}");
            }
        }
        Cmd::Sample { ckpt, count, out, config } => {
            let s = cli::cmd_sample(&ckpt, count, &out, config.as_deref())?;
            println!("wrote {} sketches to {}", s.len(), out.display());
        }
        Cmd::Gradcheck { config } => {
            let cfg = cli::load_config(config.as_deref())?;
            let o = cli::cmd_gradcheck(&cfg)?;
            println!("{o}");
            if !o.passed() {
                return Err(CliError::GradCheck(o.max_rel_err));
            }
        }
        Cmd::Ablate { cache, config, kind, seeds } => {
            let cfg = cli::load_config(config.as_deref())?;
            print!("{}", cli::cmd_ablate(&cache, &cfg, kind, seeds)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
