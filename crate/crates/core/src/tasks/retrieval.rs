use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::classify::EVAL_SEED;
use super::{fit, FitReport, MetricsLog, TaskError, TrainConfig};
use crate::batch::SketchBatch;
use crate::fusion::{global_feature, SdEncoder, StageConfig};
use crate::io::FormatError;
use crate::nn::Linear;
use crate::preprocess::PaddedSketch;
use crate::tensor::{Gradients, ParamStore, Tape, Tensor, Var};

pub const EMBEDDINGS_MAGIC: [u8; 4] = *b"SDGE";
pub const TRIPLET_MARGIN: f64 = 0.2;

/// Externally computed image embeddings, keyed by image id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub ids: Vec<String>,
    /// `ids.len() × dim`, row-major.
    pub values: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn push(&mut self, id: impl Into<String>, v: &[f64]) -> Result<(), TaskError> {
        if v.len() != self.dim {
            return Err(TaskError::DimMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        self.ids.push(id.into());
        self.values.extend_from_slice(v);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }
}

/// Layout: `"SDGE"`, `u32` count, `u32` dim, then per record a `u32` id
/// length, the UTF-8 id bytes and `dim` little-endian `f32`s.
pub fn write_embeddings(table: &EmbeddingTable, w: &mut impl Write) -> Result<(), FormatError> {
    let u32_of = |n: usize| u32::try_from(n).map_err(|_| FormatError::Invalid(format!("{n} does not fit in u32")));
    w.write_all(&EMBEDDINGS_MAGIC)?;
    w.write_all(&u32_of(table.len())?.to_le_bytes())?;
    w.write_all(&u32_of(table.dim)?.to_le_bytes())?;
    for (i, id) in table.ids.iter().enumerate() {
        w.write_all(&u32_of(id.len())?.to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        for v in table.row(i) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_embeddings(r: &mut impl Read) -> Result<EmbeddingTable, FormatError> {
    let mut exact = |buf: &mut [u8], what: &'static str| {
        r.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => FormatError::Truncated(what),
            _ => FormatError::Io(e),
        })
    };
    let mut magic = [0u8; 4];
    exact(&mut magic, "header")?;
    if magic != EMBEDDINGS_MAGIC {
        return Err(FormatError::BadMagic {
            expected: EMBEDDINGS_MAGIC,
            found: magic,
        });
    }
    let mut word = [0u8; 4];
    exact(&mut word, "count")?;
    let count = u32::from_le_bytes(word) as usize;
    exact(&mut word, "dim")?;
    let dim = u32::from_le_bytes(word) as usize;
    let mut table = EmbeddingTable::new(dim);
    for _ in 0..count {
        exact(&mut word, "id length")?;
        let mut id = vec![0u8; u32::from_le_bytes(word) as usize];
        exact(&mut id, "id")?;
        let id = String::from_utf8(id).map_err(|_| FormatError::Invalid("embedding id is not UTF-8".into()))?;
        let mut raw = vec![0u8; dim * 4];
        exact(&mut raw, "embedding values")?;
        table.ids.push(id);
        table
            .values
            .extend(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64));
    }
    Ok(table)
}

/// Reads `sketch_id<TAB>positive_image_id` lines; blank lines are skipped.
pub fn read_pairs(r: impl BufRead) -> Result<Vec<(String, String)>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (a, b) = line.split_once('\t').ok_or_else(|| FormatError::Text {
            line: i + 1,
            message: "expected sketch_id<TAB>image_id".into(),
        })?;
        out.push((a.to_owned(), b.trim_end().to_owned()));
    }
    Ok(out)
}

pub fn write_pairs(pairs: &[(String, String)], w: &mut impl Write) -> std::io::Result<()> {
    for (a, b) in pairs {
        writeln!(w, "{a}\t{b}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RetrievalMetrics {
    pub map_at_k: f64,
    pub prec_at_k: f64,
    pub acc_at_1: f64,
    pub acc_at_5: f64,
}

/// Metrics of one ranked relevance list, truncated at `k`: AP averages the
/// precision at each relevant rank within the top `k`; Acc@n is 1 when a
/// relevant item is in the top `n`.
pub fn ranked_metrics(relevant: &[bool], k: usize) -> RetrievalMetrics {
    let top = &relevant[..k.min(relevant.len())];
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (i, &r) in top.iter().enumerate() {
        if r {
            hits += 1;
            ap += hits as f64 / (i + 1) as f64;
        }
    }
    let any = |n: usize| f64::from(u8::from(relevant.iter().take(n).any(|&r| r)));
    RetrievalMetrics {
        map_at_k: if hits == 0 { 0.0 } else { ap / hits as f64 },
        prec_at_k: if k == 0 { 0.0 } else { hits as f64 / k as f64 },
        acc_at_1: any(1),
        acc_at_5: any(5),
    }
}

/// Ranks `gallery` rows by descending dot product with each query (ties by
/// index) and averages [`ranked_metrics`] over queries.
pub fn retrieval_eval(
    queries: &[Vec<f64>],
    gallery: &EmbeddingTable,
    relevant: impl Fn(usize, usize) -> bool,
    k: usize,
) -> Result<RetrievalMetrics, TaskError> {
    if gallery.is_empty() {
        return Err(TaskError::EmptyGallery);
    }
    if k == 0 || k > gallery.len() {
        return Err(TaskError::Invalid(format!("K={k} must be in 1..={}", gallery.len())));
    }
    if queries.is_empty() {
        return Err(TaskError::EmptyDataset);
    }
    let mut acc = RetrievalMetrics::default();
    for (qi, q) in queries.iter().enumerate() {
        if q.len() != gallery.dim {
            return Err(TaskError::DimMismatch {
                expected: gallery.dim,
                got: q.len(),
            });
        }
        let scores: Vec<f64> = (0..gallery.len()).map(|g| dot(q, gallery.row(g))).collect();
        let mut order: Vec<usize> = (0..gallery.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let rel: Vec<bool> = order.iter().map(|&g| relevant(qi, g)).collect();
        let m = ranked_metrics(&rel, k);
        acc.map_at_k += m.map_at_k;
        acc.prec_at_k += m.prec_at_k;
        acc.acc_at_1 += m.acc_at_1;
        acc.acc_at_5 += m.acc_at_5;
    }
    let n = queries.len() as f64;
    Ok(RetrievalMetrics {
        map_at_k: acc.map_at_k / n,
        prec_at_k: acc.prec_at_k / n,
        acc_at_1: acc.acc_at_1 / n,
        acc_at_5: acc.acc_at_5 / n,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// For each image, the most similar other image (by dot product) that is
/// not excluded by `same_group`. Used as fixed hard negatives.
pub fn hard_negatives(images: &EmbeddingTable, same_group: impl Fn(usize, usize) -> bool) -> Result<Vec<usize>, TaskError> {
    (0..images.len())
        .map(|i| {
            (0..images.len())
                .filter(|&j| j != i && !same_group(i, j))
                .map(|j| (j, dot(images.row(i), images.row(j))))
                .fold(None, |best: Option<(usize, f64)>, (j, s)| match best {
                    Some((_, bs)) if bs >= s => best,
                    _ => Some((j, s)),
                })
                .map(|(j, _)| j)
                .ok_or_else(|| TaskError::Invalid(format!("image {} has no admissible negative", images.ids[i])))
        })
        .collect()
}

#[derive(Debug, Clone)]
struct Net {
    encoder: SdEncoder,
    hidden: Linear,
    out: Linear,
}

impl Net {
    fn embed(&self, tape: &mut Tape, batch: &SketchBatch, rng: &mut ChaCha8Rng) -> Result<Var, TaskError> {
        let enc = self.encoder.forward(tape, batch, None, rng)?;
        let f = global_feature(tape, enc.s.as_ref(), enc.d.as_ref())?;
        let h = self.hidden.forward_act(tape, f)?;
        let e = self.out.forward(tape, h)?;
        Ok(tape.l2_normalize(e)?)
    }

    fn embed_eval(&self, store: &ParamStore, sketches: &[&PaddedSketch]) -> Result<Vec<Vec<f64>>, TaskError> {
        let batch = SketchBatch::new(sketches)?;
        let mut rng = ChaCha8Rng::seed_from_u64(EVAL_SEED);
        let mut tape = Tape::with_params(store);
        let e = self.embed(&mut tape, &batch, &mut rng)?;
        let v = tape.value(e);
        Ok((0..v.rows()).map(|r| v.row(r).to_vec()).collect())
    }
}

/// Sketch encoder aligned with fixed external image embeddings by a
/// triplet loss.
#[derive(Debug, Clone)]
pub struct RetrievalModel {
    pub store: ParamStore,
    pub cfg: StageConfig,
    pub emb_dim: usize,
    net: Net,
}

impl RetrievalModel {
    pub fn new(cfg: StageConfig, emb_dim: usize, seed: u64) -> Result<Self, TaskError> {
        cfg.validate().map_err(TaskError::Invalid)?;
        if emb_dim == 0 {
            return Err(TaskError::Invalid("embedding dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = SdEncoder::new(&mut store, "enc", cfg.clone(), &mut rng);
        let hidden = Linear::new(&mut store, "ret.hidden", cfg.global_width(), super::HEAD_HIDDEN, true, &mut rng);
        let out = Linear::new(&mut store, "ret.out", super::HEAD_HIDDEN, emb_dim, true, &mut rng);
        Ok(Self {
            store,
            cfg,
            emb_dim,
            net: Net { encoder, hidden, out },
        })
    }

    pub fn from_checkpoint(cfg: StageConfig, emb_dim: usize, entries: Vec<(String, Tensor)>) -> Result<Self, TaskError> {
        let mut model = Self::new(cfg, emb_dim, 0)?;
        model.store.load(entries)?;
        Ok(model)
    }

    /// Records the forward pass; one unit-norm row per sketch.
    pub fn forward(&self, tape: &mut Tape, batch: &SketchBatch, rng: &mut ChaCha8Rng) -> Result<Var, TaskError> {
        self.net.embed(tape, batch, rng)
    }

    pub fn embed(&self, sketches: &[&PaddedSketch]) -> Result<Vec<Vec<f64>>, TaskError> {
        self.net.embed_eval(&self.store, sketches)
    }

    /// Embeds in chunks of `batch_size`.
    pub fn embed_all(&self, sketches: &[PaddedSketch], batch_size: usize) -> Result<Vec<Vec<f64>>, TaskError> {
        let mut out = Vec::with_capacity(sketches.len());
        for chunk in sketches.chunks(batch_size.max(1)) {
            out.extend(self.embed(&chunk.iter().collect::<Vec<_>>())?);
        }
        Ok(out)
    }

    /// Triplet training: sketch `i` is pulled towards image
    /// `positives[i]` and pushed from that image's fixed hard negative.
    /// Keeps the parameters with the lowest epoch loss, or the best mAP on
    /// `val` when given as `(sketches, positive image per sketch, K)`.
    pub fn train(
        &mut self,
        sketches: &[PaddedSketch],
        positives: &[usize],
        images: &EmbeddingTable,
        negatives: &[usize],
        val: Option<(&[PaddedSketch], &[usize], usize)>,
        cfg: &TrainConfig,
        log: &mut MetricsLog,
    ) -> Result<FitReport, TaskError> {
        if images.dim != self.emb_dim {
            return Err(TaskError::DimMismatch {
                expected: self.emb_dim,
                got: images.dim,
            });
        }
        if sketches.len() != positives.len() || negatives.len() != images.len() {
            return Err(TaskError::Invalid("positives/negatives do not line up with the data".into()));
        }
        if positives.iter().chain(negatives).any(|&i| i >= images.len()) {
            return Err(TaskError::Invalid("image index out of range".into()));
        }
        let rows = |idx: &[usize]| -> Result<Tensor, TaskError> {
            let data = idx.iter().flat_map(|&i| images.row(i).iter().copied()).collect();
            Ok(Tensor::matrix(idx.len(), images.dim, data)?)
        };
        let Self { store, net, .. } = self;
        let net = &*net;
        fit(
            store,
            sketches.len(),
            cfg,
            log,
            |store, idx, rng| -> Result<(f64, Gradients), TaskError> {
                let refs: Vec<&PaddedSketch> = idx.iter().map(|&i| &sketches[i]).collect();
                let batch = SketchBatch::new(&refs)?;
                let pos: Vec<usize> = idx.iter().map(|&i| positives[i]).collect();
                let neg: Vec<usize> = pos.iter().map(|&p| negatives[p]).collect();
                let mut tape = Tape::with_params(store);
                let a = net.embed(&mut tape, &batch, rng)?;
                let p = tape.constant(rows(&pos)?);
                let n = tape.constant(rows(&neg)?);
                let loss = tape.triplet_loss(a, p, n, TRIPLET_MARGIN)?;
                Ok((tape.value(loss).item(), tape.backward(loss)?))
            },
            |store, log, epoch| {
                let Some((vs, vp, k)) = val else {
                    return Ok(-log.last("train", "loss").unwrap_or(f64::INFINITY));
                };
                let mut q = Vec::with_capacity(vs.len());
                for chunk in vs.chunks(cfg.batch_size) {
                    q.extend(net.embed_eval(store, &chunk.iter().collect::<Vec<_>>())?);
                }
                let m = retrieval_eval(&q, images, |qi, g| vp[qi] == g, k)?;
                log.push(epoch, "val", &format!("map@{k}"), m.map_at_k, 0);
                log.push(epoch, "val", "acc@1", m.acc_at_1, 0);
                Ok(m.map_at_k)
            },
        )
    }
}
