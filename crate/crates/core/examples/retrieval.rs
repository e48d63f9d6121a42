//! Category-level sketch-to-image retrieval against synthetic image
//! embeddings. Each category gets a random prototype direction and every
//! image is its prototype plus noise, so the embeddings carry no shape
//! information: the sketch encoder has to learn the mapping from drawings
//! alone. Trained with a triplet loss against fixed hard negatives, then
//! evaluated with held-out sketches as queries over the whole gallery.
//!
//! ```text
//! cargo run --release --example retrieval -- [per_class] [epochs]
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sdgraph::data::{pad_all, prepare};
use sdgraph::fusion::StageConfig;
use sdgraph::preprocess::{PaddedSketch, PreprocessConfig};
use sdgraph::synth::synth_dataset;
use sdgraph::tasks::{hard_negatives, retrieval_eval, write_embeddings, EmbeddingTable, MetricsLog, RetrievalModel, TrainConfig};

const DIM: usize = 32;

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>());
    let per_class = args.next().transpose()?.unwrap_or(40);
    let epochs = args.next().transpose()?.unwrap_or(10);

    let pre = PreprocessConfig::default();
    let (sketches, _) = prepare(&synth_dataset(per_class, 5), &pre, 0)?;
    let padded = pad_all(&sketches, &pre)?;

    // One image per sketch, near its category prototype.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let protos: Vec<Vec<f64>> = (0..10).map(|_| unit((0..DIM).map(|_| StandardNormal.sample(&mut rng)).collect())).collect();
    let mut images = EmbeddingTable::new(DIM);
    let mut image_label = Vec::new();
    for (i, p) in padded.iter().enumerate() {
        let c = p.label.expect("synthetic sketches are labelled") as usize;
        let noisy: Vec<f64> = protos[c].iter().map(|&x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x + 0.15 * z
        }).collect();
        images.push(format!("img{i:04}"), &unit(noisy))?;
        image_label.push(c as u32);
    }
    let mut bytes = Vec::new();
    write_embeddings(&images, &mut bytes)?;
    println!("{} images ({} bytes as SDGE)", images.len(), bytes.len());

    // Every fifth sketch of each category is held out; its paired image
    // stays in the gallery. The dataset interleaves categories.
    let (held, seen): (Vec<usize>, Vec<usize>) = (0..padded.len()).partition(|&i| (i / 10) % 5 == 0);
    let pick = |idx: &[usize]| -> Vec<PaddedSketch> { idx.iter().map(|&i| padded[i].clone()).collect() };
    let (train, test) = (pick(&seen), pick(&held));

    let negatives = hard_negatives(&images, |a, b| image_label[a] == image_label[b])?;
    let cfg = StageConfig {
        sparse_widths: vec![32, 48, 64],
        dense_widths: vec![16, 32, 64],
        stroke_hidden: 16,
        ..StageConfig::default()
    };
    let mut model = RetrievalModel::new(cfg, DIM, 2)?;

    let k = 20;
    let evaluate = |model: &RetrievalModel| -> Result<_, Box<dyn std::error::Error>> {
        let q = model.embed_all(&test, 32)?;
        Ok(retrieval_eval(&q, &images, |qi, g| image_label[held[qi]] == image_label[g], k)?)
    };
    let before = evaluate(&model)?;

    let tc = TrainConfig {
        epochs,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let mut log = MetricsLog::default();
    let report = model.train(&train, &seen, &images, &negatives, None, &tc, &mut log)?;
    for (e, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:>2}  triplet loss {l:.4}", e + 1);
    }
    let after = evaluate(&model)?;
    println!("{} held-out queries: mAP@{k} {:.3} -> {:.3}, P@{k} {:.3} -> {:.3}", test.len(), before.map_at_k, after.map_at_k, before.prec_at_k, after.prec_at_k);
    Ok(())
}
