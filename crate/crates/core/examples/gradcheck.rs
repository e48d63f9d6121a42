//! Checks reverse-mode gradients against central finite differences: every
//! primitive on its own, then the whole classifier loss on a two-sketch
//! batch for each module combination.
//!
//! ```text
//! cargo run --release --example gradcheck -- [modules ...]
//! ```

use sdgraph::cli::{cmd_gradcheck, GRADCHECK_TOL};
use sdgraph::config::RunConfig;
use sdgraph::fusion::ArchToggles;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut sets: Vec<String> = std::env::args().skip(1).collect();
    if sets.is_empty() {
        sets = vec!["SG+SS+DG+PS+IF".into(), "SG+DG+IF".into(), "SG".into(), "DG+PS".into()];
    }
    let mut all_ok = true;
    for (i, set) in sets.iter().enumerate() {
        let mut cfg = RunConfig::desk();
        cfg.stage.toggles = set.parse::<ArchToggles>()?;
        let out = cmd_gradcheck(&cfg)?;
        if i == 0 {
            for (name, err) in &out.entries[..out.entries.len() - 1] {
                println!("  {name:<16} {err:.3e}");
            }
        }
        let (name, err) = out.entries.last().expect("model entry");
        println!("{:<24} {name}: {err:.3e} ({} ms)", cfg.stage.toggles, out.elapsed_ms);
        all_ok &= out.passed();
    }
    println!("{} (tolerance {GRADCHECK_TOL:e})", if all_ok { "PASS" } else { "FAIL" });
    Ok(())
}
