use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MetricsLog, TaskError};
use crate::tensor::{AdamW, AdamWConfig, Gradients, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamWConfig,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Off by default so that logs are bit-reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            optim: AdamWConfig::default(),
            grad_clip: Some(5.0),
            seed: 0,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.batch_size == 0 {
            return Err(TaskError::Invalid("batch_size must be positive".into()));
        }
        if !(self.optim.lr > 0.0) {
            return Err(TaskError::Invalid("lr must be positive".into()));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(TaskError::Invalid("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Loss of the very first mini-batch, before any update.
    pub initial_loss: f64,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Epoch (1-based) whose parameters were kept; 0 if no epoch ran.
    pub best_epoch: usize,
    pub best_score: f64,
}

/// Seeded mini-batch loop shared by all tasks.
///
/// `step` maps a mini-batch of dataset indices to `(loss, gradients)`.
/// After each epoch `evaluate` returns a score (higher is better) and the
/// metrics to log; the parameters of the best-scoring epoch are restored
/// into `store` on return.
pub fn fit(
    store: &mut ParamStore,
    n: usize,
    cfg: &TrainConfig,
    log: &mut MetricsLog,
    mut step: impl FnMut(&ParamStore, &[usize], &mut ChaCha8Rng) -> Result<(f64, Gradients), TaskError>,
    mut evaluate: impl FnMut(&ParamStore, &mut MetricsLog, usize) -> Result<f64, TaskError>,
) -> Result<FitReport, TaskError> {
    cfg.validate()?;
    if n == 0 {
        return Err(TaskError::EmptyDataset);
    }
    let start = Instant::now();
    let wall = |start: &Instant| if cfg.record_wall_time { start.elapsed().as_millis() as u64 } else { 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.optim.clone(), store);
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = FitReport {
        initial_loss: f64::NAN,
        epoch_losses: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_score: f64::NEG_INFINITY,
    };
    let mut best: Option<Vec<Tensor>> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut steps) = (0.0, 0usize);
        for (i, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = step(store, chunk, &mut rng)?;
            if !loss.is_finite() {
                log::error!("loss became {loss} at epoch {epoch}, step {i}");
                return Err(TaskError::NonFiniteLoss { epoch, step: i });
            }
            if report.initial_loss.is_nan() {
                report.initial_loss = loss;
            }
            store.zero_grad();
            store.accumulate(&grads);
            if let Some(c) = cfg.grad_clip {
                let norm = store.grad_norm();
                if norm > c {
                    let s = c / norm;
                    for p in store.iter_mut() {
                        p.grad.iter_mut().for_each(|g| *g *= s);
                    }
                }
            }
            opt.step(store);
            total += loss;
            steps += 1;
        }
        let mean = total / steps as f64;
        report.epoch_losses.push(mean);
        log.push(epoch, "train", "loss", mean, wall(&start));
        let score = evaluate(store, log, epoch)?;
        log::info!("epoch {epoch}: loss {mean:.5} score {score:.5}");
        if score > report.best_score {
            report.best_score = score;
            report.best_epoch = epoch;
            best = Some(store.iter().map(|(_, p)| p.value.clone()).collect());
        }
    }
    store.zero_grad();
    if let Some(best) = best {
        for (p, v) in store.iter_mut().zip(best) {
            p.value = v;
        }
    }
    Ok(report)
}
