//! Writes a small QuickDraw-style ndjson export (one record deliberately
//! broken), runs the `prep` pipeline on it, and round-trips a sketch
//! through stroke-3 text and the binary cache.
//!
//! ```text
//! cargo run --release --example prep -- [per_class]
//! ```

use std::fs;

use sdgraph::cli::cmd_prep;
use sdgraph::config::RunConfig;
use sdgraph::io::{format_stroke3_text, parse_stroke3_text, read_cache, sketch_to_svg};
use sdgraph::synth::{synth_dataset, CATEGORIES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let per_class = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(20);
    let dir = std::env::temp_dir().join("sdgraph-example-prep");
    fs::create_dir_all(&dir)?;

    // One file per category, as the public export ships them.
    for (c, name) in CATEGORIES.iter().enumerate() {
        let mut text = String::new();
        for (i, sk) in synth_dataset(per_class, 11).iter().filter(|s| s.label == Some(c as u32)).enumerate() {
            let drawing: Vec<[Vec<f64>; 2]> = sk
                .strokes
                .iter()
                .map(|s| [s.points.iter().map(|p| p.x.round()).collect(), s.points.iter().map(|p| p.y.round()).collect()])
                .collect();
            let rec = serde_json::json!({ "word": name, "key_id": format!("{c}{i:05}"), "drawing": drawing });
            text.push_str(&rec.to_string());
            text.push('\n');
        }
        if c == 0 {
            text.push_str("{\"word\": \"circle\", \"drawing\": [[[1, 2], [3]]]}\n");
        }
        fs::write(dir.as_path().join(format!("{name}.ndjson")), text)?;
    }

    let cfg = RunConfig::default();
    let cache = dir.as_path().join("train.sdg");
    let summary = cmd_prep(dir.as_path(), &cache, &cfg, 0, false)?;
    println!("prep: {summary}");
    println!("categories: {}", fs::read_to_string(dir.join("train.sdg.categories"))?.lines().collect::<Vec<_>>().join(", "));

    let sketches = read_cache(&cache)?;
    let first = &sketches[0];
    println!(
        "cache holds {} sketches; first has {} strokes / {} points",
        sketches.len(),
        first.strokes.len(),
        first.num_points()
    );

    let text = format_stroke3_text(first);
    let back = parse_stroke3_text(&text)?;
    println!("stroke-3 rows: {}; first rows:", text.lines().count());
    for line in text.lines().take(3) {
        println!("  {line}");
    }
    let max_err = first
        .points()
        .zip(back.points())
        .map(|(a, b)| (a.x - b.x).abs().max((a.y - b.y).abs()))
        .fold(0.0, f64::max);
    println!("stroke-3 round trip max coordinate error: {max_err:.2e}");

    let svg = dir.as_path().join("first.svg");
    fs::write(&svg, sketch_to_svg(first, 256.0))?;
    println!("wrote {}", svg.display());
    Ok(())
}
