//! Point-level (dense) graph: one node per sketch point, grouped by stroke
//! in drawing order.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::batch::{prefix, segment_ids, SketchBatch};
use crate::nn::{act, Conv1d, Linear, PairMlp, TConv1d};
use crate::sgraph::{segment_knn, SampleMap, UpWeights, UP_K};
use crate::tensor::{shape_err, structural, Groups, ParamStore, Tape, Tensor, TensorError, Var};

/// Point graph for a batch. Stroke `i` owns rows
/// `prefix(lens)[i]..prefix(lens)[i + 1]` of `feats`; sketch `b` owns
/// strokes `prefix(counts)[b]..prefix(counts)[b + 1]`.
#[derive(Debug, Clone)]
pub struct DGraph {
    pub feats: Var,
    pub lens: Vec<usize>,
    pub counts: Vec<usize>,
}

impl DGraph {
    pub fn num_points(&self) -> usize {
        self.lens.iter().sum()
    }

    /// Points per sketch.
    pub fn point_counts(&self) -> Vec<usize> {
        let off = prefix(&self.counts);
        (0..self.counts.len()).map(|s| self.lens[off[s]..off[s + 1]].iter().sum()).collect()
    }

    /// Stroke index of every point.
    pub fn stroke_of_point(&self) -> Vec<usize> {
        segment_ids(&self.lens)
    }

    /// Sketch index of every point.
    pub fn sketch_of_point(&self) -> Vec<usize> {
        segment_ids(&self.point_counts())
    }
}

/// Point features start as the coordinates themselves.
pub fn dgraph_init(tape: &mut Tape, batch: &SketchBatch) -> Result<DGraph, TensorError> {
    let coords = Tensor::matrix(batch.num_points(), 2, batch.coords.clone())?;
    Ok(DGraph {
        feats: tape.constant(coords),
        lens: batch.lens.clone(),
        counts: batch.counts.clone(),
    })
}

/// Edge convolution over all points of each sketch, neighbours found in
/// current feature space (across strokes).
#[derive(Debug, Clone)]
pub struct DGraphUpdate {
    mlp: PairMlp,
}

impl DGraphUpdate {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            mlp: PairMlp::new(store, name, in_dim, out_dim, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, d: &DGraph, k: usize) -> Result<DGraph, TensorError> {
        let dim = tape.value(d.feats).cols();
        let groups = segment_knn(tape.value(d.feats).data(), dim, &d.point_counts(), k);
        let feats = self.mlp.forward(tape, d.feats, d.feats, &groups)?;
        Ok(DGraph { feats, ..d.clone() })
    }
}

/// Stroke-wise strided convolution (kernel 3, pad 1): a stroke of `n`
/// points keeps `ceil(n / stride)`.
#[derive(Debug, Clone)]
pub struct DDown {
    conv: Conv1d,
}

impl DDown {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, stride: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv1d::new(store, name, in_dim, out_dim, 3, stride, 1, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, d: &DGraph) -> Result<DGraph, TensorError> {
        let (y, lens) = self.conv.forward(tape, d.feats, &d.lens)?;
        Ok(DGraph {
            feats: act(tape, y)?,
            lens,
            counts: d.counts.clone(),
        })
    }
}

/// Stroke-wise transpose convolution back to the skip level's lengths,
/// then a skip concatenation and a linear mix.
#[derive(Debug, Clone)]
pub struct DUp {
    tconv: TConv1d,
    mix: Linear,
}

impl DUp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        skip_dim: usize,
        out_dim: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            tconv: TConv1d::new(store, &format!("{name}.tconv"), in_dim, out_dim, stride, stride, rng),
            mix: Linear::new(store, &format!("{name}.mix"), out_dim + skip_dim, out_dim, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, coarse: &DGraph, skip: &DGraph) -> Result<DGraph, TensorError> {
        let s = self.tconv.stride;
        let consistent = coarse.lens.len() == skip.lens.len()
            && coarse.lens.iter().zip(&skip.lens).all(|(&c, &f)| c == f.div_ceil(s));
        if !consistent {
            return Err(shape_err("d_up", "coarse lengths do not match the skip level"));
        }
        let up = self.tconv.forward(tape, coarse.feats, &coarse.lens, &skip.lens)?;
        let up = act(tape, up)?;
        let cat = tape.concat_cols(&[up, skip.feats])?;
        let feats = self.mix.forward_act(tape, cat)?;
        Ok(DGraph { feats, ..skip.clone() })
    }
}

/// Two stroke-wise convolutions along drawing order.
#[derive(Debug, Clone)]
pub struct TemporalEncoder {
    c1: Conv1d,
    c2: Conv1d,
}

impl TemporalEncoder {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            c1: Conv1d::new(store, &format!("{name}.conv1"), in_dim, out_dim, 3, 1, 1, rng),
            c2: Conv1d::new(store, &format!("{name}.conv2"), out_dim, out_dim, 3, 1, 1, rng),
        }
    }

    /// Returns one encoded row per point, stroke-grouped like `d`. With
    /// `shuffle` set, points of every stroke are randomly permuted first,
    /// which destroys intra-stroke order.
    pub fn forward(&self, tape: &mut Tape, d: &DGraph, shuffle: Option<&mut ChaCha8Rng>) -> Result<Var, TensorError> {
        let mut x = d.feats;
        if let Some(rng) = shuffle {
            let off = prefix(&d.lens);
            let mut idx: Vec<usize> = (0..d.num_points()).collect();
            for i in 0..d.lens.len() {
                idx[off[i]..off[i + 1]].shuffle(rng);
            }
            x = tape.gather_rows(x, idx)?;
        }
        let (h, _) = self.c1.forward(tape, x, &d.lens)?;
        let h = act(tape, h)?;
        let (h, _) = self.c2.forward(tape, h, &d.lens)?;
        act(tape, h)
    }
}

/// Index in a sequence of `to` items matching position `j` of `from`
/// items by normalized position.
pub fn aligned_index(j: usize, from: usize, to: usize) -> usize {
    if from <= 1 {
        0
    } else {
        ((j * (to - 1)) as f64 / (from - 1) as f64).round() as usize
    }
}

/// Matches the points of a neighbour stroke to a centre stroke, in the
/// original or reversed order, whichever has the smaller summed feature
/// distance (ties keep the original order). Returns the neighbour-local
/// index for every centre point and whether the reversal was chosen.
pub fn align_strokes(center: &[f64], neighbor: &[f64], dim: usize) -> (Vec<usize>, bool) {
    let (p, q) = (center.len() / dim, neighbor.len() / dim);
    let fwd: Vec<usize> = (0..p).map(|j| aligned_index(j, p, q)).collect();
    let dist = |map: &dyn Fn(usize) -> usize| -> f64 {
        (0..p)
            .map(|j| {
                let (a, b) = (&center[j * dim..(j + 1) * dim], &neighbor[map(j) * dim..(map(j) + 1) * dim]);
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            })
            .sum()
    };
    let d1 = dist(&|j| fwd[j]);
    let d2 = dist(&|j| q - 1 - fwd[j]);
    if d2 < d1 {
        (fwd.iter().map(|&i| q - 1 - i).collect(), true)
    } else {
        (fwd, false)
    }
}

/// Dense neighbour fusion: every centre stroke's points are fused with the
/// matched points of each neighbour stroke chosen by [`SampleMap`].
#[derive(Debug, Clone)]
pub struct NFusionDense {
    mlp: PairMlp,
}

impl NFusionDense {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            mlp: PairMlp::new(store, name, in_dim, out_dim, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, d: &DGraph, map: &SampleMap) -> Result<DGraph, TensorError> {
        let values = tape.value(d.feats);
        let dim = values.cols();
        let vals = values.data();
        let off = prefix(&d.lens);
        let rows = |i: usize| &vals[off[i] * dim..off[i + 1] * dim];
        let alignments: Vec<Vec<Vec<usize>>> = structural(|| {
            (0..map.centers.len())
                .map(|ci| {
                    let c = map.centers[ci];
                    map.neighbors.group(ci).iter().map(|&n| align_strokes(rows(c), rows(n), dim).0).collect()
                })
                .collect()
        });
        let mut center_rows = Vec::new();
        let mut lists: Vec<Vec<usize>> = Vec::new();
        for (ci, &c) in map.centers.iter().enumerate() {
            let nbrs = map.neighbors.group(ci);
            let aligned = &alignments[ci];
            for j in 0..d.lens[c] {
                center_rows.push(off[c] + j);
                lists.push(nbrs.iter().zip(aligned).map(|(&n, a)| off[n] + a[j]).collect());
            }
        }
        let lens = map.centers.iter().map(|&c| d.lens[c]).collect();
        let centers = tape.gather_rows(d.feats, center_rows)?;
        let feats = self.mlp.forward(tape, centers, d.feats, &Groups::from_lists(lists))?;
        Ok(DGraph {
            feats,
            lens,
            counts: map.coarse_counts.clone(),
        })
    }
}

/// Dense counterpart of stroke up-sampling: each fine stroke's points
/// blend the position-matched points of the coarse strokes its node
/// interpolates from, with the same weights.
pub fn interpolate_dense(tape: &mut Tape, coarse: &DGraph, fine_lens: &[usize], w: &UpWeights) -> Result<Var, TensorError> {
    if w.idx.len() != fine_lens.len() * UP_K {
        return Err(shape_err("interpolate_dense", "weights do not match the fine strokes"));
    }
    let coff = prefix(&coarse.lens);
    let mut idx = Vec::new();
    let mut weights = Vec::new();
    for (i, &len) in fine_lens.iter().enumerate() {
        for j in 0..len {
            for q in 0..UP_K {
                let c = w.idx[i * UP_K + q];
                idx.push(coff[c] + aligned_index(j, len, coarse.lens[c]));
                weights.push(w.weights[i * UP_K + q]);
            }
        }
    }
    tape.weighted_gather(coarse.feats, idx, weights, UP_K)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reversal_matching_examples() {
        assert_eq!(align_strokes(&[1., 2., 3.], &[3., 2., 1.], 1), (vec![2, 1, 0], true));
        assert_eq!(align_strokes(&[1., 2., 3.], &[1., 2., 3.], 1), (vec![0, 1, 2], false));
        assert_eq!(align_strokes(&[0., 5., 1.], &[2., 7., 2.], 1), (vec![0, 1, 2], false));
    }

    #[test]
    fn normalized_alignment() {
        assert_eq!((0..5).map(|j| aligned_index(j, 5, 3)).collect::<Vec<_>>(), vec![0, 1, 1, 2, 2]);
        assert_eq!(aligned_index(0, 1, 7), 0);
        assert_eq!((0..2).map(|j| aligned_index(j, 2, 4)).collect::<Vec<_>>(), vec![0, 3]);
    }
}
