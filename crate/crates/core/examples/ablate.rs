//! Module and information ablations on procedurally drawn doodles, with
//! identical seeds and budget for every variant.
//!
//! ```text
//! cargo run --release --example ablate -- [arch|info] [per_class] [epochs] [seeds]
//! ```

use sdgraph::cli::{run_ablation, AblationKind};
use sdgraph::config::RunConfig;
use sdgraph::synth::synth_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let kind: AblationKind = args.next().as_deref().unwrap_or("arch").parse()?;
    let mut num = |d: usize| args.next().map(|a| a.parse::<usize>()).transpose().map(|v| v.unwrap_or(d));
    let (per_class, epochs, seeds) = (num(40)?, num(8)?, num(1)?);

    let mut cfg = RunConfig::desk();
    cfg.train.epochs = epochs;
    cfg.val_fraction = 0.25;
    // Raw drawings: every variant runs its own preprocessing.
    let raw = synth_dataset(per_class, 13);
    let table = run_ablation(&raw, &cfg, kind, seeds)?;
    print!("{table}");
    Ok(())
}
