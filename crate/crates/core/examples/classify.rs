//! Trains the stroke/point graph classifier on procedurally drawn doodles
//! and reports held-out accuracy.
//!
//! ```text
//! cargo run --release --example classify -- [per_class] [epochs]
//! ```

use std::time::Instant;

use sdgraph::data::{pad_all, prepare, split_per_label};
use sdgraph::fusion::StageConfig;
use sdgraph::preprocess::PreprocessConfig;
use sdgraph::synth::{synth_dataset, CATEGORIES};
use sdgraph::tasks::{Classifier, MetricsLog, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>());
    let per_class = args.next().transpose()?.unwrap_or(60);
    let epochs = args.next().transpose()?.unwrap_or(20);

    let pre = PreprocessConfig::default();
    let (sketches, summary) = prepare(&synth_dataset(per_class, 1), &pre, 0)?;
    println!("prep: {summary}");
    let padded = pad_all(&sketches, &pre)?;
    let (train, test) = split_per_label(&padded, |p| p.label, per_class, per_class / 5, 2);

    let cfg = StageConfig {
        sparse_widths: vec![32, 48, 64],
        dense_widths: vec![16, 32, 64],
        stroke_hidden: 16,
        ..StageConfig::default()
    };
    let mut model = Classifier::new(cfg, CATEGORIES.len(), 3)?;
    println!("{} parameters, {} train / {} test", model.store.num_scalars(), train.len(), test.len());
    let tc = TrainConfig {
        epochs,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let mut log = MetricsLog::default();
    let t0 = Instant::now();
    let report = model.train(&train, &test, &tc, &mut log)?;
    for (e, loss) in report.epoch_losses.iter().enumerate() {
        let acc = log.series("val", "accuracy")[e];
        println!("epoch {:>2}  loss {loss:.4}  test acc {acc:.3}", e + 1);
    }
    println!("best epoch {} acc {:.3} in {:.1?}", report.best_epoch, report.best_score, t0.elapsed());
    Ok(())
}
