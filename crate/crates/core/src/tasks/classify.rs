use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{fit, FitReport, MetricsLog, TaskError, TrainConfig};
use crate::batch::SketchBatch;
use crate::fusion::{global_feature, SdEncoder, StageConfig};
use crate::nn::Linear;
use crate::preprocess::PaddedSketch;
use crate::tensor::{Gradients, ParamStore, Tape, Tensor, Var};

pub const HEAD_HIDDEN: usize = 256;

/// Seed for the shuffle stream used outside training, so inference is
/// deterministic even with random temporal neighbourhoods enabled.
pub(crate) const EVAL_SEED: u64 = 0x5d6;

#[derive(Debug, Clone)]
struct Net {
    encoder: SdEncoder,
    hidden: Linear,
    out: Linear,
}

impl Net {
    fn log_probs(&self, tape: &mut Tape, batch: &SketchBatch, rng: &mut ChaCha8Rng) -> Result<Var, TaskError> {
        let enc = self.encoder.forward(tape, batch, None, rng)?;
        let f = global_feature(tape, enc.s.as_ref(), enc.d.as_ref())?;
        let h = self.hidden.forward_act(tape, f)?;
        let logits = self.out.forward(tape, h)?;
        Ok(tape.log_softmax(logits)?)
    }

    fn loss(&self, store: &ParamStore, batch: &SketchBatch, rng: &mut ChaCha8Rng) -> Result<(f64, Gradients), TaskError> {
        let targets = labels(batch)?;
        let mut tape = Tape::with_params(store);
        let lp = self.log_probs(&mut tape, batch, rng)?;
        let loss = tape.nll_loss(lp, &targets)?;
        Ok((tape.value(loss).item(), tape.backward(loss)?))
    }

    fn log_probs_eval(&self, store: &ParamStore, sketches: &[&PaddedSketch]) -> Result<Vec<Vec<f64>>, TaskError> {
        let batch = SketchBatch::new(sketches)?;
        let mut rng = ChaCha8Rng::seed_from_u64(EVAL_SEED);
        let mut tape = Tape::with_params(store);
        let lp = self.log_probs(&mut tape, &batch, &mut rng)?;
        let v = tape.value(lp);
        Ok((0..v.rows()).map(|r| v.row(r).to_vec()).collect())
    }

    fn accuracy(&self, store: &ParamStore, data: &[PaddedSketch], batch_size: usize) -> Result<f64, TaskError> {
        if data.is_empty() {
            return Err(TaskError::EmptyDataset);
        }
        let mut correct = 0;
        for chunk in data.chunks(batch_size.max(1)) {
            let refs: Vec<&PaddedSketch> = chunk.iter().collect();
            for (row, s) in self.log_probs_eval(store, &refs)?.iter().zip(chunk) {
                correct += usize::from(s.label.map(|l| l as usize) == Some(argmax(row)));
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

fn labels(batch: &SketchBatch) -> Result<Vec<usize>, TaskError> {
    batch
        .labels
        .iter()
        .map(|l| l.map(|l| l as usize).ok_or_else(|| TaskError::Invalid("unlabelled sketch in training data".into())))
        .collect()
}

/// Encoder stages → global feature → two-layer MLP → log-softmax.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub store: ParamStore,
    pub cfg: StageConfig,
    pub num_classes: usize,
    net: Net,
}

impl Classifier {
    pub fn new(cfg: StageConfig, num_classes: usize, seed: u64) -> Result<Self, TaskError> {
        cfg.validate().map_err(TaskError::Invalid)?;
        if num_classes < 2 {
            return Err(TaskError::Invalid("need at least two classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = SdEncoder::new(&mut store, "enc", cfg.clone(), &mut rng);
        let hidden = Linear::new(&mut store, "cls.hidden", cfg.global_width(), HEAD_HIDDEN, true, &mut rng);
        let out = Linear::new(&mut store, "cls.out", HEAD_HIDDEN, num_classes, true, &mut rng);
        Ok(Self {
            store,
            cfg,
            num_classes,
            net: Net { encoder, hidden, out },
        })
    }

    /// Rebuilds a classifier from saved parameters.
    pub fn from_checkpoint(cfg: StageConfig, num_classes: usize, entries: Vec<(String, Tensor)>) -> Result<Self, TaskError> {
        let mut model = Self::new(cfg, num_classes, 0)?;
        model.store.load(entries)?;
        Ok(model)
    }

    /// Records the forward pass on `tape`, returning `B × C` log-probabilities.
    pub fn forward(&self, tape: &mut Tape, batch: &SketchBatch, rng: &mut ChaCha8Rng) -> Result<Var, TaskError> {
        self.net.log_probs(tape, batch, rng)
    }

    /// Mean negative log-likelihood of the batch labels and its gradients.
    pub fn loss(&self, batch: &SketchBatch, rng: &mut ChaCha8Rng) -> Result<(f64, Gradients), TaskError> {
        self.net.loss(&self.store, batch, rng)
    }

    /// Log-probabilities, one row per sketch.
    pub fn log_probs(&self, sketches: &[&PaddedSketch]) -> Result<Vec<Vec<f64>>, TaskError> {
        self.net.log_probs_eval(&self.store, sketches)
    }

    pub fn predict(&self, sketches: &[&PaddedSketch]) -> Result<Vec<usize>, TaskError> {
        Ok(self.log_probs(sketches)?.iter().map(|row| argmax(row)).collect())
    }

    /// Fraction of labelled sketches classified correctly, evaluated in
    /// chunks of `batch_size`.
    pub fn accuracy(&self, data: &[PaddedSketch], batch_size: usize) -> Result<f64, TaskError> {
        self.net.accuracy(&self.store, data, batch_size)
    }

    /// Trains with NLL; keeps the parameters with the best validation
    /// accuracy (or lowest training loss when `val` is empty).
    pub fn train(&mut self, train: &[PaddedSketch], val: &[PaddedSketch], cfg: &TrainConfig, log: &mut MetricsLog) -> Result<FitReport, TaskError> {
        if train.is_empty() {
            return Err(TaskError::EmptyDataset);
        }
        if let Some(bad) = train.iter().chain(val).find_map(|s| s.label.filter(|&l| l as usize >= self.num_classes)) {
            return Err(TaskError::Invalid(format!("label {bad} out of range for {} classes", self.num_classes)));
        }
        let Self { store, net, .. } = self;
        let net = &*net;
        fit(
            store,
            train.len(),
            cfg,
            log,
            |store, idx, rng| {
                let refs: Vec<&PaddedSketch> = idx.iter().map(|&i| &train[i]).collect();
                net.loss(store, &SketchBatch::new(&refs)?, rng)
            },
            |store, log, epoch| {
                if val.is_empty() {
                    return Ok(-log.last("train", "loss").unwrap_or(f64::INFINITY));
                }
                let acc = net.accuracy(store, val, cfg.batch_size)?;
                log.push(epoch, "val", "accuracy", acc, 0);
                Ok(acc)
            },
        )
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}
