use super::{resample_count, resample_density, PreprocessConfig, PreprocessError};
use crate::sketch::{Point, Sketch, Stroke};

/// Fixed-shape `s_max × p_max` layout of a sketch.
///
/// Valid points of a stroke occupy a prefix of its row; masked entries are
/// zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedSketch {
    pub s_max: usize,
    pub p_max: usize,
    /// `s_max × p_max × 2`, row-major.
    pub coords: Vec<f64>,
    /// `s_max × p_max`.
    pub point_mask: Vec<bool>,
    pub stroke_mask: Vec<bool>,
    /// `s_max × p_max`; position of each point within its stroke.
    pub order_index: Vec<u32>,
    pub label: Option<u32>,
}

impl PaddedSketch {
    pub fn empty(s_max: usize, p_max: usize) -> Self {
        Self {
            s_max,
            p_max,
            coords: vec![0.0; s_max * p_max * 2],
            point_mask: vec![false; s_max * p_max],
            stroke_mask: vec![false; s_max],
            order_index: vec![0; s_max * p_max],
            label: None,
        }
    }

    /// Writes `points` into row `row`, replacing whatever was there.
    pub fn set_stroke(&mut self, row: usize, points: &[Point]) {
        assert!(row < self.s_max && points.len() <= self.p_max);
        for j in 0..self.p_max {
            let at = row * self.p_max + j;
            let valid = j < points.len();
            self.point_mask[at] = valid;
            self.order_index[at] = if valid { j as u32 } else { 0 };
            let (x, y) = if valid { (points[j].x, points[j].y) } else { (0.0, 0.0) };
            self.coords[2 * at] = x;
            self.coords[2 * at + 1] = y;
        }
        self.stroke_mask[row] = !points.is_empty();
    }

    /// Number of valid points in row `row`.
    pub fn stroke_len(&self, row: usize) -> usize {
        if !self.stroke_mask[row] {
            return 0;
        }
        self.point_mask[row * self.p_max..(row + 1) * self.p_max]
            .iter()
            .take_while(|&&m| m)
            .count()
    }

    pub fn point(&self, row: usize, j: usize) -> Point {
        let at = row * self.p_max + j;
        Point::new(self.coords[2 * at], self.coords[2 * at + 1])
    }

    /// Rows holding a stroke, in row order.
    pub fn valid_rows(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.s_max).filter(|&r| self.stroke_mask[r])
    }

    pub fn num_strokes(&self) -> usize {
        self.stroke_mask.iter().filter(|&&m| m).count()
    }

    pub fn num_points(&self) -> usize {
        self.point_mask.iter().filter(|&&m| m).count()
    }

    /// Mask-selects the valid strokes back into a sketch.
    pub fn unpad(&self) -> Sketch {
        let strokes = self
            .valid_rows()
            .map(|r| Stroke::new((0..self.stroke_len(r)).map(|j| self.point(r, j)).collect()))
            .collect();
        Sketch {
            strokes,
            label: self.label,
            source_id: None,
        }
    }

    /// Returns a copy with rows permuted: row `i` of the result is row
    /// `perm[i]` of `self`.
    pub fn permute_strokes(&self, perm: &[usize]) -> PaddedSketch {
        assert_eq!(perm.len(), self.s_max);
        let mut out = PaddedSketch::empty(self.s_max, self.p_max);
        out.label = self.label;
        for (dst, &src) in perm.iter().enumerate() {
            let pts: Vec<Point> = (0..self.stroke_len(src)).map(|j| self.point(src, j)).collect();
            out.set_stroke(dst, &pts);
        }
        out
    }

    /// Checks the layout invariants.
    pub fn check(&self) -> Result<(), String> {
        let (s, p) = (self.s_max, self.p_max);
        if self.coords.len() != s * p * 2
            || self.point_mask.len() != s * p
            || self.stroke_mask.len() != s
            || self.order_index.len() != s * p
        {
            return Err("array sizes disagree with s_max/p_max".into());
        }
        for r in 0..s {
            let row = &self.point_mask[r * p..(r + 1) * p];
            let n = row.iter().take_while(|&&m| m).count();
            if row[n..].iter().any(|&m| m) {
                return Err(format!("row {r}: point mask is not a prefix"));
            }
            if self.stroke_mask[r] != (n > 0) {
                return Err(format!("row {r}: stroke mask disagrees with point mask"));
            }
            for j in 0..p {
                let at = r * p + j;
                if j < n {
                    if self.order_index[at] != j as u32 {
                        return Err(format!("row {r}: bad order index at {j}"));
                    }
                } else if self.coords[2 * at] != 0.0 || self.coords[2 * at + 1] != 0.0 {
                    return Err(format!("row {r}: masked coordinate {j} is nonzero"));
                }
            }
        }
        Ok(())
    }
}

/// Lays a preprocessed sketch out as a [`PaddedSketch`].
///
/// With more than `s_max` strokes the `s_max` longest are kept (ties to the
/// earlier stroke), in their original order. A stroke longer than `p_max`
/// points is resampled to exactly `p_max` points: evenly spaced in the
/// default mode, density-preserving when `preserve_point_frequency` is set.
pub fn pad_to_tensor(sketch: &Sketch, cfg: &PreprocessConfig) -> Result<PaddedSketch, PreprocessError> {
    let mut keep: Vec<usize> = (0..sketch.strokes.len()).collect();
    if keep.len() > cfg.s_max {
        let lengths: Vec<f64> = sketch.strokes.iter().map(Stroke::arc_length).collect();
        keep.sort_by(|&a, &b| lengths[b].total_cmp(&lengths[a]).then(a.cmp(&b)));
        keep.truncate(cfg.s_max);
        keep.sort_unstable();
    }
    let mut out = PaddedSketch::empty(cfg.s_max, cfg.p_max);
    out.label = sketch.label;
    for (row, &si) in keep.iter().enumerate() {
        let stroke = &sketch.strokes[si];
        if stroke.len() > cfg.p_max {
            let fitted = if cfg.preserve_point_frequency {
                resample_density(stroke, cfg.p_max)?
            } else {
                resample_count(stroke, cfg.p_max)?
            };
            out.set_stroke(row, &fitted.points);
        } else {
            out.set_stroke(row, &stroke.points);
        }
    }
    Ok(out)
}
