//! Stroke-level (sparse) graph: one node per stroke.

use rand::Rng;
use rayon::prelude::*;

use crate::batch::prefix;
use crate::nn::{act, Conv1d, Linear, PairMlp};
use crate::tensor::{fps_indices, knn_indices_self_first, structural, Groups, ParamStore, Tape, TensorError, Var};

/// Stroke graph for a batch of sketches. Nodes of sketch `b` are rows
/// `prefix(counts)[b]..prefix(counts)[b + 1]` of `feats`.
#[derive(Debug, Clone)]
pub struct SGraph {
    pub feats: Var,
    /// Frozen node positions of this level, `rows × coord_dim`: the
    /// features the level started with. FPS, KNN and up-sampling distances
    /// are measured here.
    pub coords: Vec<f64>,
    pub coord_dim: usize,
    pub counts: Vec<usize>,
}

impl SGraph {
    pub fn num_nodes(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Self-first nearest neighbours computed independently inside each
/// segment of rows; returned indices are global row numbers. `k` is
/// clamped to each segment's size.
pub fn segment_knn(values: &[f64], dim: usize, counts: &[usize], k: usize) -> Groups {
    structural(|| segment_knn_inner(values, dim, counts, k))
}

fn segment_knn_inner(values: &[f64], dim: usize, counts: &[usize], k: usize) -> Groups {
    let off = prefix(counts);
    let per: Vec<Vec<Vec<usize>>> = (0..counts.len())
        .into_par_iter()
        .map(|s| {
            let rows = &values[off[s] * dim..off[s + 1] * dim];
            knn_indices_self_first(rows, dim, k, None)
                .into_iter()
                .map(|nb| nb.into_iter().map(|j| j + off[s]).collect())
                .collect()
        })
        .collect();
    Groups::from_lists(per.into_iter().flatten())
}

/// Per-stroke convolutions followed by a max over each stroke's points.
#[derive(Debug, Clone)]
pub struct StrokeEncoder {
    c1: Conv1d,
    c2: Conv1d,
    pub out_dim: usize,
}

impl StrokeEncoder {
    pub fn new(store: &mut ParamStore, name: &str, hidden: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            c1: Conv1d::new(store, &format!("{name}.conv1"), 2, hidden, 3, 1, 1, rng),
            c2: Conv1d::new(store, &format!("{name}.conv2"), hidden, out_dim, 3, 1, 1, rng),
            out_dim,
        }
    }

    /// `points` packs every stroke's `(x, y)` rows; `lens` gives points per
    /// stroke and `counts` strokes per sketch.
    pub fn forward(&self, tape: &mut Tape, points: Var, lens: &[usize], counts: &[usize]) -> Result<SGraph, TensorError> {
        let (h, _) = self.c1.forward(tape, points, lens)?;
        let h = act(tape, h)?;
        let (h, _) = self.c2.forward(tape, h, lens)?;
        let h = act(tape, h)?;
        let feats = tape.max_gather(h, &Groups::contiguous(lens))?;
        Ok(SGraph {
            coords: tape.value(feats).data().to_vec(),
            coord_dim: self.out_dim,
            feats,
            counts: counts.to_vec(),
        })
    }
}

/// Dynamic edge convolution over stroke nodes.
#[derive(Debug, Clone)]
pub struct SGraphUpdate {
    mlp: PairMlp,
}

impl SGraphUpdate {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            mlp: PairMlp::new(store, name, in_dim, out_dim, rng),
        }
    }

    /// Neighbours are the `k` nearest nodes of the same sketch in current
    /// feature space, self included. With `inter_stroke` off every node is
    /// its own only neighbour.
    pub fn forward(&self, tape: &mut Tape, g: &SGraph, k: usize, inter_stroke: bool) -> Result<SGraph, TensorError> {
        let n = g.num_nodes();
        let groups = if inter_stroke {
            let dim = tape.value(g.feats).cols();
            segment_knn(tape.value(g.feats).data(), dim, &g.counts, k)
        } else {
            Groups::from_lists((0..n).map(|i| [i]))
        };
        let feats = self.mlp.forward(tape, g.feats, g.feats, &groups)?;
        Ok(SGraph { feats, ..g.clone() })
    }
}

/// Result of stroke down-sampling, reused by both graphs and by the
/// mirrored up-sampling.
#[derive(Debug, Clone)]
pub struct SampleMap {
    /// Global fine-level row of each coarse node.
    pub centers: Vec<usize>,
    /// Fine-level neighbours of each centre (self first).
    pub neighbors: Groups,
    pub fine_counts: Vec<usize>,
    pub coarse_counts: Vec<usize>,
    pub fine_coords: Vec<f64>,
    pub coord_dim: usize,
}

impl SampleMap {
    /// Farthest point sampling of `ceil(n/2)` centres per sketch over the
    /// level's stroke coordinates, then `k` nearest strokes per centre.
    pub fn select(g: &SGraph, k: usize) -> Result<SampleMap, TensorError> {
        structural(|| Self::select_inner(g, k))
    }

    fn select_inner(g: &SGraph, k: usize) -> Result<SampleMap, TensorError> {
        let dim = g.coord_dim;
        let off = prefix(&g.counts);
        let mut centers = Vec::new();
        let mut neighbors = Groups::new();
        let mut coarse_counts = Vec::with_capacity(g.counts.len());
        for (s, &n) in g.counts.iter().enumerate() {
            let rows = &g.coords[off[s] * dim..off[s + 1] * dim];
            let m = n.div_ceil(2);
            let mut local = fps_indices(rows, dim, m, None)?;
            local.sort_unstable();
            let nb = knn_indices_self_first(rows, dim, k, None);
            for c in local {
                centers.push(off[s] + c);
                let global: Vec<usize> = nb[c].iter().map(|j| j + off[s]).collect();
                neighbors.push(&global);
            }
            coarse_counts.push(m);
        }
        Ok(SampleMap {
            centers,
            neighbors,
            fine_counts: g.counts.clone(),
            coarse_counts,
            fine_coords: g.coords.clone(),
            coord_dim: dim,
        })
    }

    /// Inverse-distance weights (power 2) from each fine node to its three
    /// nearest coarse nodes of the same sketch, measured in fine-level
    /// stroke coordinates.
    pub fn up_weights(&self) -> UpWeights {
        structural(|| self.up_weights_inner())
    }

    fn up_weights_inner(&self) -> UpWeights {
        let dim = self.coord_dim;
        let (foff, coff) = (prefix(&self.fine_counts), prefix(&self.coarse_counts));
        let mut idx = Vec::new();
        let mut weights = Vec::new();
        for s in 0..self.fine_counts.len() {
            for i in foff[s]..foff[s + 1] {
                let fi = &self.fine_coords[i * dim..(i + 1) * dim];
                let mut cand: Vec<(f64, usize)> = (coff[s]..coff[s + 1])
                    .map(|c| {
                        let ci = self.centers[c];
                        let d2: f64 = fi
                            .iter()
                            .zip(&self.fine_coords[ci * dim..(ci + 1) * dim])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        (d2, c)
                    })
                    .collect();
                cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                cand.truncate(UP_K);
                let raw: Vec<f64> = cand.iter().map(|&(d2, _)| 1.0 / (d2 + UP_EPS)).collect();
                let total: f64 = raw.iter().sum();
                for q in 0..UP_K {
                    match cand.get(q) {
                        Some(&(_, c)) => {
                            idx.push(c);
                            weights.push(raw[q] / total);
                        }
                        None => {
                            idx.push(cand[0].1);
                            weights.push(0.0);
                        }
                    }
                }
            }
        }
        UpWeights { idx, weights }
    }
}

pub const UP_K: usize = 3;
const UP_EPS: f64 = 1e-8;

/// Interpolation rows: fine node `i` reads coarse nodes
/// `idx[i·3..i·3 + 3]` with the matching weights, which sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct UpWeights {
    pub idx: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Neighbour fusion of stroke nodes onto the FPS centres.
#[derive(Debug, Clone)]
pub struct SDown {
    fuse: PairMlp,
}

impl SDown {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            fuse: PairMlp::new(store, name, in_dim, out_dim, rng),
        }
    }

    /// Coarse node `c` is `max_j MLP([centre_c ‖ neighbour_j − centre_c])`.
    /// Its features also become the coarse level's stroke coordinates.
    pub fn forward(&self, tape: &mut Tape, g: &SGraph, map: &SampleMap) -> Result<SGraph, TensorError> {
        let centers = tape.gather_rows(g.feats, map.centers.clone())?;
        let feats = self.fuse.forward(tape, centers, g.feats, &map.neighbors)?;
        Ok(SGraph {
            coords: tape.value(feats).data().to_vec(),
            coord_dim: self.fuse.out_dim(),
            feats,
            counts: map.coarse_counts.clone(),
        })
    }
}

/// Interpolating up-sampling with a skip connection.
#[derive(Debug, Clone)]
pub struct SUp {
    mix: Linear,
}

impl SUp {
    pub fn new(store: &mut ParamStore, name: &str, coarse_dim: usize, skip_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            mix: Linear::new(store, name, coarse_dim + skip_dim, out_dim, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, coarse: &SGraph, skip: &SGraph, w: &UpWeights) -> Result<SGraph, TensorError> {
        if coarse.num_nodes() == 0 {
            return Err(TensorError::EmptyReduction("s_up"));
        }
        let up = tape.weighted_gather(coarse.feats, w.idx.clone(), w.weights.clone(), UP_K)?;
        let cat = tape.concat_cols(&[up, skip.feats])?;
        let feats = self.mix.forward_act(tape, cat)?;
        Ok(SGraph { feats, ..skip.clone() })
    }
}
