use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::diffusion::ddpm_sample;
use super::{fit, sinusoidal_embed, DiffusionSchedule, FitReport, MetricsLog, TaskError, TrainConfig};
use crate::batch::SketchBatch;
use crate::fusion::{SdDecoder, SdEncoder, StageConfig};
use crate::preprocess::{cumulative_arc_length, resample_count, PaddedSketch};
use crate::sketch::{Point, Sketch, Stroke};
use crate::tensor::{Gradients, ParamStore, Tape, Tensor, Var};

/// Fixed stroke/point layout the generator works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenLayout {
    pub strokes: usize,
    pub points: usize,
}

impl Default for GenLayout {
    fn default() -> Self {
        Self { strokes: 8, points: 32 }
    }
}

/// Splits a polyline at half its arc length.
fn split_half(stroke: &Stroke) -> (Stroke, Stroke) {
    let pts = &stroke.points;
    let cum = cumulative_arc_length(pts);
    let half = cum[cum.len() - 1] / 2.0;
    let seg = cum.partition_point(|&c| c < half).clamp(1, pts.len() - 1);
    let (a, b) = (pts[seg - 1], pts[seg]);
    let len = cum[seg] - cum[seg - 1];
    let t = if len > 0.0 { (half - cum[seg - 1]) / len } else { 1.0 };
    let mid = Point::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
    let mut first = pts[..seg].to_vec();
    first.push(mid);
    let mut second = vec![mid];
    second.extend_from_slice(&pts[seg..]);
    (Stroke::new(first), Stroke::new(second))
}

/// Reshapes a sketch to exactly `layout.strokes` strokes of
/// `layout.points` points: the longest stroke is halved while there are
/// too few strokes, the shortest dropped while there are too many, then
/// every stroke is resampled to equal spacing.
pub fn fit_layout(sketch: &Sketch, layout: GenLayout) -> Result<Sketch, TaskError> {
    if layout.strokes == 0 || layout.points < 2 {
        return Err(TaskError::Invalid("generation layout needs ≥ 1 stroke of ≥ 2 points".into()));
    }
    let mut strokes: Vec<(Stroke, f64)> = sketch
        .strokes
        .iter()
        .filter(|s| s.len() >= 2)
        .map(|s| (s.clone(), s.arc_length()))
        .filter(|(_, l)| *l > 0.0)
        .collect();
    if strokes.is_empty() {
        return Err(TaskError::Invalid("sketch has no stroke with positive length".into()));
    }
    while strokes.len() < layout.strokes {
        let i = longest(&strokes, |a, b| a > b);
        let (a, b) = split_half(&strokes[i].0);
        let (la, lb) = (a.arc_length(), b.arc_length());
        strokes[i] = (a, la);
        strokes.insert(i + 1, (b, lb));
    }
    while strokes.len() > layout.strokes {
        let i = longest(&strokes, |a, b| a <= b);
        strokes.remove(i);
    }
    let strokes = strokes
        .iter()
        .map(|(s, _)| resample_count(s, layout.points))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Sketch {
        strokes,
        label: sketch.label,
        source_id: sketch.source_id.clone(),
    })
}

/// Index chosen by repeatedly replacing the incumbent when `better(new,
/// incumbent)` holds.
fn longest(strokes: &[(Stroke, f64)], better: impl Fn(f64, f64) -> bool) -> usize {
    (1..strokes.len()).fold(0, |best, i| if better(strokes[i].1, strokes[best].1) { i } else { best })
}

/// Padded form of a sketch already in `layout`.
pub fn layout_padded(sketch: &Sketch, layout: GenLayout) -> Result<PaddedSketch, TaskError> {
    if sketch.strokes.len() != layout.strokes || sketch.strokes.iter().any(|s| s.len() != layout.points) {
        return Err(TaskError::Invalid("sketch does not match the generation layout".into()));
    }
    let mut p = PaddedSketch::empty(layout.strokes, layout.points);
    for (r, s) in sketch.strokes.iter().enumerate() {
        p.set_stroke(r, &s.points);
    }
    p.label = sketch.label;
    Ok(p)
}

#[derive(Debug, Clone)]
struct Net {
    cfg: StageConfig,
    encoder: SdEncoder,
    decoder: SdDecoder,
}

impl Net {
    /// Predicted noise, one 2-vector per packed point.
    fn predict(&self, tape: &mut Tape, batch: &SketchBatch, ts: &[usize], rng: &mut ChaCha8Rng) -> Result<Var, TaskError> {
        let dim = self.cfg.time_dim.expect("checked at construction");
        let mut emb = Vec::with_capacity(ts.len() * dim);
        for &t in ts {
            emb.extend(sinusoidal_embed(t, dim)?);
        }
        let temb = tape.constant(Tensor::matrix(ts.len(), dim, emb)?);
        let enc = self.encoder.forward(tape, batch, Some(temb), rng)?;
        Ok(self.decoder.forward(tape, &enc, &self.cfg, Some(temb))?)
    }

    fn loss(
        &self,
        store: &ParamStore,
        schedule: &DiffusionSchedule,
        x0: &SketchBatch,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Gradients), TaskError> {
        let ts: Vec<usize> = (0..x0.num_sketches()).map(|_| rng.random_range(1..=schedule.steps())).collect();
        let eps: Vec<f64> = (0..x0.coords.len()).map(|_| rng.sample(StandardNormal)).collect();
        let mut xt = Vec::with_capacity(eps.len());
        let mut at = 0;
        for (s, &n) in x0.point_counts().iter().enumerate() {
            let r = at * 2..(at + n) * 2;
            xt.extend(schedule.q_sample(&x0.coords[r.clone()], ts[s], &eps[r])?);
            at += n;
        }
        let noisy = x0.with_coords(xt);
        let mut tape = Tape::with_params(store);
        let pred = self.predict(&mut tape, &noisy, &ts, rng)?;
        let target = tape.constant(Tensor::matrix(eps.len() / 2, 2, eps)?);
        let loss = tape.mse_loss(pred, target)?;
        Ok((tape.value(loss).item(), tape.backward(loss)?))
    }
}

/// Unconditional DDPM sketch generator on a fixed layout; the encoder /
/// decoder stack predicts per-point noise.
#[derive(Debug, Clone)]
pub struct Generator {
    pub store: ParamStore,
    pub cfg: StageConfig,
    pub layout: GenLayout,
    pub schedule: DiffusionSchedule,
    /// Epochs of training the parameters have seen.
    pub epochs_trained: usize,
    net: Net,
}

impl Generator {
    pub fn new(cfg: StageConfig, layout: GenLayout, schedule: DiffusionSchedule, seed: u64) -> Result<Self, TaskError> {
        cfg.validate().map_err(TaskError::Invalid)?;
        if cfg.time_dim.is_none() {
            return Err(TaskError::Invalid("the generator needs a time embedding width".into()));
        }
        if !cfg.effective().dgraph {
            return Err(TaskError::Invalid("the generator needs the point graph".into()));
        }
        if layout.strokes == 0 || layout.points < 2 {
            return Err(TaskError::Invalid("generation layout needs ≥ 1 stroke of ≥ 2 points".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = SdEncoder::new(&mut store, "enc", cfg.clone(), &mut rng);
        let decoder = SdDecoder::new(&mut store, "dec", &cfg, 2, &mut rng);
        Ok(Self {
            store,
            cfg: cfg.clone(),
            layout,
            schedule,
            epochs_trained: 0,
            net: Net { cfg, encoder, decoder },
        })
    }

    pub fn from_checkpoint(
        cfg: StageConfig,
        layout: GenLayout,
        schedule: DiffusionSchedule,
        epochs_trained: usize,
        entries: Vec<(String, Tensor)>,
    ) -> Result<Self, TaskError> {
        let mut model = Self::new(cfg, layout, schedule, 0)?;
        model.store.load(entries)?;
        model.epochs_trained = epochs_trained;
        Ok(model)
    }

    /// Records the noise prediction for `batch` (whose coordinates are the
    /// noisy state) at per-sketch steps `ts`.
    pub fn forward(&self, tape: &mut Tape, batch: &SketchBatch, ts: &[usize], rng: &mut ChaCha8Rng) -> Result<Var, TaskError> {
        if ts.len() != batch.num_sketches() {
            return Err(TaskError::Invalid("one diffusion step per sketch".into()));
        }
        self.net.predict(tape, batch, ts, rng)
    }

    /// Noise-prediction MSE on a batch of clean layout sketches.
    pub fn loss(&self, x0: &SketchBatch, rng: &mut ChaCha8Rng) -> Result<(f64, Gradients), TaskError> {
        self.net.loss(&self.store, &self.schedule, x0, rng)
    }

    /// Trains on sketches already in the generation layout (see
    /// [`fit_layout`] / [`layout_padded`]); keeps the lowest-loss epoch.
    pub fn train(&mut self, data: &[PaddedSketch], cfg: &TrainConfig, log: &mut MetricsLog) -> Result<FitReport, TaskError> {
        if data.iter().any(|p| p.s_max != self.layout.strokes || p.p_max != self.layout.points || p.num_points() != self.layout.strokes * self.layout.points) {
            return Err(TaskError::Invalid("training sketches must fill the generation layout".into()));
        }
        let Self { store, net, schedule, .. } = self;
        let (net, schedule) = (&*net, &*schedule);
        let report = fit(
            store,
            data.len(),
            cfg,
            log,
            |store, idx, rng| {
                let refs: Vec<&PaddedSketch> = idx.iter().map(|&i| &data[i]).collect();
                net.loss(store, schedule, &SketchBatch::new(&refs)?, rng)
            },
            |_, log, _| Ok(-log.last("train", "loss").unwrap_or(f64::INFINITY)),
        )?;
        self.epochs_trained += cfg.epochs;
        Ok(report)
    }

    /// Samples `count` sketches, `batch_size` at a time. Refuses an
    /// untrained generator unless `allow_untrained` is set.
    pub fn generate(&self, count: usize, batch_size: usize, seed: u64, allow_untrained: bool) -> Result<Vec<Sketch>, TaskError> {
        if self.epochs_trained == 0 && !allow_untrained {
            return Err(TaskError::Untrained);
        }
        let GenLayout { strokes, points } = self.layout;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        let mut left = count;
        while left > 0 {
            let b = left.min(batch_size.max(1));
            left -= b;
            let noise: Vec<PaddedSketch> = (0..b)
                .map(|_| {
                    let mut p = PaddedSketch::empty(strokes, points);
                    for r in 0..strokes {
                        let pts: Vec<Point> = (0..points).map(|_| Point::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
                        p.set_stroke(r, &pts);
                    }
                    p
                })
                .collect();
            let layout = SketchBatch::new(&noise.iter().collect::<Vec<_>>())?;
            let mut model_rng = ChaCha8Rng::seed_from_u64(rng.random());
            let x = ddpm_sample(&self.schedule, layout.coords.clone(), &mut rng, |xt, t| {
                let mut tape = Tape::with_params(&self.store);
                let pred = self.net.predict(&mut tape, &layout.with_coords(xt.to_vec()), &vec![t; b], &mut model_rng)?;
                Ok(tape.value(pred).data().to_vec())
            })?;
            for coords in layout.scatter(&x, 2) {
                let mut p = PaddedSketch::empty(strokes, points);
                for r in 0..strokes {
                    let pts: Vec<Point> = (0..points)
                        .map(|j| {
                            let at = (r * points + j) * 2;
                            Point::new(coords[at], coords[at + 1])
                        })
                        .collect();
                    p.set_stroke(r, &pts);
                }
                out.push(p.unpad());
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(x0: f64, x1: f64, n: usize) -> Stroke {
        Stroke::new((0..n).map(|i| Point::new(x0 + (x1 - x0) * i as f64 / (n - 1) as f64, 0.0)).collect())
    }

    #[test]
    fn layout_splits_and_drops() {
        let sk = Sketch::new(vec![line(0.0, 1.0, 3), line(0.0, 0.25, 2)]);
        let lay = GenLayout { strokes: 3, points: 5 };
        let out = fit_layout(&sk, lay).unwrap();
        assert_eq!(out.strokes.len(), 3);
        assert!(out.strokes.iter().all(|s| s.len() == 5));
        assert!((out.strokes[0].arc_length() - 0.5).abs() < 1e-12);
        assert!((out.strokes[1].arc_length() - 0.5).abs() < 1e-12);
        let one = fit_layout(&sk, GenLayout { strokes: 1, points: 4 }).unwrap();
        assert!((one.strokes[0].arc_length() - 1.0).abs() < 1e-12);
        assert!(layout_padded(&out, lay).unwrap().check().is_ok());
    }

    #[test]
    fn untrained_generator_refuses() {
        let cfg = StageConfig {
            sparse_widths: vec![4, 6],
            dense_widths: vec![4, 6],
            stroke_hidden: 4,
            time_dim: Some(4),
            ..StageConfig::default()
        };
        let lay = GenLayout { strokes: 2, points: 4 };
        let g = Generator::new(cfg, lay, DiffusionSchedule::standard(2).unwrap(), 1).unwrap();
        assert!(matches!(g.generate(1, 1, 0, false), Err(TaskError::Untrained)));
        let out = g.generate(3, 2, 0, true).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|s| s.strokes.len() == 2 && s.strokes.iter().all(|st| st.len() == 4)));
        assert!(out.iter().flat_map(|s| s.points()).all(|p| p.is_finite()));
    }
}
