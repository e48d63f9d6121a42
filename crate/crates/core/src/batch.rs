//! Packed multi-sketch layout consumed by the graph modules.
//!
//! Only valid strokes and points are stored, so masked entries cannot
//! influence any computation. Strokes of each sketch are put into a
//! canonical order (by point count, then coordinates) before packing:
//! every index-based tie-break downstream (FPS seed, KNN ties) then depends
//! only on the set of strokes, never on the order they were drawn in.

use std::cmp::Ordering;

use crate::preprocess::PaddedSketch;
use crate::tensor::TensorError;

#[derive(Debug, Clone, PartialEq)]
pub struct SketchBatch {
    pub s_max: usize,
    pub p_max: usize,
    /// Strokes per sketch.
    pub counts: Vec<usize>,
    /// Points per packed stroke.
    pub lens: Vec<usize>,
    /// `Σ lens × 2`.
    pub coords: Vec<f64>,
    /// `(sketch, padded row)` each packed stroke came from.
    pub slots: Vec<(usize, usize)>,
    pub labels: Vec<Option<u32>>,
}

pub fn prefix(counts: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(counts.len() + 1);
    out.push(0);
    let mut acc = 0;
    for &c in counts {
        acc += c;
        out.push(acc);
    }
    out
}

/// Owner segment of every row, for rows grouped by `counts`.
pub fn segment_ids(counts: &[usize]) -> Vec<usize> {
    counts.iter().enumerate().flat_map(|(s, &c)| std::iter::repeat_n(s, c)).collect()
}

fn stroke_cmp(a: &PaddedSketch, ra: usize, rb: usize) -> Ordering {
    let (la, lb) = (a.stroke_len(ra), a.stroke_len(rb));
    la.cmp(&lb).then_with(|| {
        let p = a.p_max;
        let xa = &a.coords[ra * p * 2..(ra * p + la) * 2];
        let xb = &a.coords[rb * p * 2..(rb * p + lb) * 2];
        xa.iter()
            .zip(xb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

impl SketchBatch {
    pub fn new(sketches: &[&PaddedSketch]) -> Result<Self, TensorError> {
        let (s_max, p_max) = sketches.first().map_or((0, 0), |s| (s.s_max, s.p_max));
        let mut b = SketchBatch {
            s_max,
            p_max,
            counts: Vec::with_capacity(sketches.len()),
            lens: Vec::new(),
            coords: Vec::new(),
            slots: Vec::new(),
            labels: Vec::with_capacity(sketches.len()),
        };
        for (si, sk) in sketches.iter().enumerate() {
            if sk.s_max != s_max || sk.p_max != p_max {
                return Err(crate::tensor::TensorError::Shape {
                    op: "SketchBatch::new",
                    detail: "padded sketches of different shapes".into(),
                });
            }
            let mut rows: Vec<usize> = sk.valid_rows().collect();
            if rows.is_empty() {
                return Err(TensorError::EmptyReduction("sketch without strokes"));
            }
            rows.sort_by(|&a, &c| stroke_cmp(sk, a, c));
            b.counts.push(rows.len());
            for r in rows {
                let n = sk.stroke_len(r);
                b.lens.push(n);
                b.coords.extend_from_slice(&sk.coords[r * p_max * 2..(r * p_max + n) * 2]);
                b.slots.push((si, r));
            }
            b.labels.push(sk.label);
        }
        Ok(b)
    }

    pub fn num_sketches(&self) -> usize {
        self.counts.len()
    }

    pub fn num_strokes(&self) -> usize {
        self.lens.len()
    }

    pub fn num_points(&self) -> usize {
        self.lens.iter().sum()
    }

    /// Points per sketch.
    pub fn point_counts(&self) -> Vec<usize> {
        let off = prefix(&self.counts);
        (0..self.counts.len()).map(|s| self.lens[off[s]..off[s + 1]].iter().sum()).collect()
    }

    /// Same layout with replaced packed coordinates.
    pub fn with_coords(&self, coords: Vec<f64>) -> Self {
        assert_eq!(coords.len(), self.coords.len());
        Self {
            coords,
            ..self.clone()
        }
    }

    /// Spreads packed per-point rows of width `c` back to each sketch's
    /// padded `s_max × p_max × c` layout; masked entries are zero.
    pub fn scatter(&self, values: &[f64], c: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.s_max * self.p_max * c]; self.num_sketches()];
        let mut at = 0;
        for (k, &(s, r)) in self.slots.iter().enumerate() {
            let n = self.lens[k];
            let dst = &mut out[s][r * self.p_max * c..(r * self.p_max + n) * c];
            dst.copy_from_slice(&values[at * c..(at + n) * c]);
            at += n;
        }
        out
    }

    /// Inverse of [`scatter`](Self::scatter): reads packed rows from
    /// per-sketch padded arrays.
    pub fn gather(&self, padded: &[Vec<f64>], c: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_points() * c);
        for (k, &(s, r)) in self.slots.iter().enumerate() {
            let n = self.lens[k];
            out.extend_from_slice(&padded[s][r * self.p_max * c..(r * self.p_max + n) * c]);
        }
        out
    }
}
