//! Trains a small per-category diffusion generator on procedurally drawn
//! doodles and samples new sketches (stroke-3 text and SVG).
//!
//! ```text
//! cargo run --release --example generate -- [category] [count] [epochs]
//! ```

use std::time::Instant;

use sdgraph::cli::write_samples;
use sdgraph::fusion::StageConfig;
use sdgraph::preprocess::PreprocessConfig;
use sdgraph::synth::{synth_dataset, CATEGORIES};
use sdgraph::tasks::{fit_layout, layout_padded, DiffusionSchedule, GenLayout, Generator, MetricsLog, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let category = args.next().unwrap_or_else(|| "square".into());
    let count: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(200);
    let epochs: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(40);
    let label = CATEGORIES
        .iter()
        .position(|&c| c == category)
        .ok_or_else(|| format!("unknown category {category:?}; one of {CATEGORIES:?}"))?;

    let layout = GenLayout::default();
    let (prepped, _) = sdgraph::data::prepare(&synth_dataset(count, 21), &PreprocessConfig::default(), 0)?;
    let data = prepped
        .iter()
        .filter(|s| s.label == Some(label as u32))
        .map(|s| layout_padded(&fit_layout(s, layout)?, layout))
        .collect::<Result<Vec<_>, _>>()?;
    println!("{} {category} sketches on a {}x{} layout", data.len(), layout.strokes, layout.points);

    let cfg = StageConfig {
        sparse_widths: vec![32, 48, 64],
        dense_widths: vec![16, 32, 64],
        stroke_hidden: 16,
        time_dim: Some(32),
        ..StageConfig::default()
    };
    let mut model = Generator::new(cfg, layout, DiffusionSchedule::standard(100)?, 4)?;
    let tc = TrainConfig {
        epochs,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let mut log = MetricsLog::default();
    let t0 = Instant::now();
    let report = model.train(&data, &tc, &mut log)?;
    for (e, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:>2}  noise mse {l:.4}", e + 1);
    }
    println!("trained in {:.1?}", t0.elapsed());

    let t0 = Instant::now();
    let samples = model.generate(8, 8, 7, false)?;
    let pts: Vec<_> = samples.iter().flat_map(|s| s.points().copied()).collect();
    let inside = pts.iter().filter(|p| p.x.abs() <= 1.5 && p.y.abs() <= 1.5).count();
    println!(
        "{} samples in {:.1?}: {} points, {:.1}% inside [-1.5, 1.5]",
        samples.len(),
        t0.elapsed(),
        pts.len(),
        100.0 * inside as f64 / pts.len() as f64
    );
    let out = std::env::temp_dir().join("sdgraph-example-generate");
    write_samples(&samples, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
