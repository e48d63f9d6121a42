//! Dataset-level helpers: batch preprocessing with optional worker
//! threads, padding, and deterministic splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::preprocess::{pad_to_tensor, preprocess, PaddedSketch, PreprocessConfig, PreprocessError};
use crate::sketch::Sketch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PrepSummary {
    pub kept: usize,
    pub dropped: usize,
    pub strokes_kept: usize,
    pub strokes_dropped: usize,
}

impl std::fmt::Display for PrepSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} kept, {} dropped ({} strokes kept, {} strokes dropped)",
            self.kept, self.dropped, self.strokes_kept, self.strokes_dropped
        )
    }
}

/// Runs [`preprocess`] over `raw`, dropping sketches that fail. Output
/// order follows input order whatever the worker count (`0` = rayon's
/// default pool, `1` = current thread).
pub fn prepare(raw: &[Sketch], cfg: &PreprocessConfig, workers: usize) -> Result<(Vec<Sketch>, PrepSummary), PreprocessError> {
    cfg.validate()?;
    let run = || -> Vec<Option<Sketch>> { raw.par_iter().map(|s| preprocess(s, cfg).ok()).collect() };
    let results = match workers {
        1 => raw.iter().map(|s| preprocess(s, cfg).ok()).collect(),
        0 => run(),
        n => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| PreprocessError::InvalidConfig(format!("worker pool: {e}")))?
            .install(run),
    };
    let mut summary = PrepSummary::default();
    let mut kept = Vec::with_capacity(raw.len());
    for (src, out) in raw.iter().zip(results) {
        match out {
            Some(s) => {
                summary.kept += 1;
                summary.strokes_kept += s.strokes.len();
                summary.strokes_dropped += src.strokes.len().saturating_sub(s.strokes.len());
                kept.push(s);
            }
            None => {
                summary.dropped += 1;
                summary.strokes_dropped += src.strokes.len();
            }
        }
    }
    Ok((kept, summary))
}

pub fn pad_all(sketches: &[Sketch], cfg: &PreprocessConfig) -> Result<Vec<PaddedSketch>, PreprocessError> {
    sketches.iter().map(|s| pad_to_tensor(s, cfg)).collect()
}

/// Per-label split: of every label's items (in a seeded shuffle), the first
/// `per_label_test` go to the test side, the next `per_label_train` to the
/// train side. Unlabelled items are ignored.
pub fn split_per_label<T: Clone>(items: &[T], label: impl Fn(&T) -> Option<u32>, per_label_train: usize, per_label_test: usize, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut by_label: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, it) in items.iter().enumerate() {
        if let Some(l) = label(it) {
            by_label.entry(l).or_default().push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for idx in by_label.values_mut() {
        idx.shuffle(&mut rng);
        test.extend(idx.iter().take(per_label_test).map(|&i| items[i].clone()));
        train.extend(idx.iter().skip(per_label_test).take(per_label_train).map(|&i| items[i].clone()));
    }
    (train, test)
}

/// Per-label split holding out `floor(n · fraction)` of every label's `n`
/// items (seeded). Returns `(kept, held_out)`.
pub fn split_fraction<T: Clone>(items: &[T], label: impl Fn(&T) -> Option<u32>, fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut by_label: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, it) in items.iter().enumerate() {
        if let Some(l) = label(it) {
            by_label.entry(l).or_default().push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut kept, mut held) = (Vec::new(), Vec::new());
    for idx in by_label.values_mut() {
        idx.shuffle(&mut rng);
        let n_out = (idx.len() as f64 * fraction).floor() as usize;
        held.extend(idx[..n_out].iter().map(|&i| items[i].clone()));
        kept.extend(idx[n_out..].iter().map(|&i| items[i].clone()));
    }
    (kept, held)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{Point, Stroke};

    #[test]
    fn counts_and_order() {
        let good = Sketch::new(vec![
            Stroke::new(vec![Point::new(0., 0.), Point::new(5., 0.), Point::new(10., 3.)]),
            Stroke::new(vec![Point::new(1., 1.)]),
        ]);
        let bad = Sketch::new(vec![Stroke::new(vec![Point::new(2., 2.)])]);
        let raw = vec![good.clone(), bad, good];
        let (a, s) = prepare(&raw, &PreprocessConfig::default(), 1).unwrap();
        assert_eq!(s, PrepSummary { kept: 2, dropped: 1, strokes_kept: 2, strokes_dropped: 3 });
        let (b, _) = prepare(&raw, &PreprocessConfig::default(), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(s.to_string(), "2 kept, 1 dropped (2 strokes kept, 3 strokes dropped)");
    }

    #[test]
    fn split_is_per_label() {
        let items: Vec<u32> = (0..30).map(|i| i % 3).collect();
        let (tr, te) = split_per_label(&items, |&x| Some(x), 4, 2, 9);
        assert_eq!((tr.len(), te.len()), (12, 6));
        for l in 0..3 {
            assert_eq!(te.iter().filter(|&&x| x == l).count(), 2);
        }
        let (kept, held) = split_fraction(&items, |&x| Some(x), 0.25, 1);
        assert_eq!((kept.len(), held.len()), (24, 6));
    }
}
