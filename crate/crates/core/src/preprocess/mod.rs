//! Sketch standardization.
//!
//! The pipeline runs, in order: mass centering, bounding-box normalization,
//! outlier removal, removal of strokes with too few points, removal of
//! too-short strokes, and uniform resampling. [`pad_to_tensor`] then lays a
//! preprocessed sketch out as a fixed-shape masked array.

mod pad;
mod resample;

pub use pad::{pad_to_tensor, PaddedSketch};
pub use resample::{cumulative_arc_length, resample_count, resample_density, resample_uniform};

use thiserror::Error;

use crate::sketch::{Point, Sketch, Stroke};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("degenerate sketch")]
    Degenerate,
    #[error("empty sketch after filtering")]
    EmptyAfterFiltering,
    #[error("zero-length stroke")]
    ZeroLengthStroke,
    #[error("invalid preprocessing config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    /// Resampling interval in normalized units.
    pub resample_interval: f64,
    pub min_points_per_stroke: usize,
    /// Minimum stroke arc length in normalized units.
    pub min_stroke_length: f64,
    /// A point is an outlier when its nearest-neighbor distance exceeds
    /// this factor times the median nearest-neighbor distance.
    pub outlier_factor: f64,
    pub preserve_point_frequency: bool,
    pub s_max: usize,
    pub p_max: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            resample_interval: 0.05,
            min_points_per_stroke: 3,
            min_stroke_length: 0.05,
            outlier_factor: 5.0,
            preserve_point_frequency: false,
            s_max: 16,
            p_max: 32,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        let bad = |m: String| Err(PreprocessError::InvalidConfig(m));
        if !(self.resample_interval > 0.0) {
            return bad(format!("resample_interval must be > 0, got {}", self.resample_interval));
        }
        if self.s_max < 1 {
            return bad("s_max must be >= 1".into());
        }
        if self.p_max < 2 {
            return bad("p_max must be >= 2".into());
        }
        if !(self.outlier_factor > 1.0) {
            return bad(format!("outlier_factor must be > 1, got {}", self.outlier_factor));
        }
        if !(self.min_stroke_length >= 0.0) {
            return bad("min_stroke_length must be >= 0".into());
        }
        Ok(())
    }
}

/// Translates the sketch so the mean of all points is the origin.
pub fn center_mass(sketch: &Sketch) -> Sketch {
    let n = sketch.num_points();
    if n == 0 {
        return sketch.clone();
    }
    let (sx, sy) = sketch
        .points()
        .fold((0.0, 0.0), |(ax, ay), p| (ax + p.x, ay + p.y));
    let (mx, my) = (sx / n as f64, sy / n as f64);
    sketch.map_points(|p| Point::new(p.x - mx, p.y - my))
}

/// Uniformly scales about the origin so the largest absolute coordinate is 1.
pub fn normalize_bbox(sketch: &Sketch) -> Result<Sketch, PreprocessError> {
    let mut pts = sketch.points();
    let first = *pts.next().ok_or(PreprocessError::Degenerate)?;
    let mut all_same = true;
    let mut max_abs: f64 = 0.0;
    for p in std::iter::once(&first).chain(pts) {
        all_same &= p.x == first.x && p.y == first.y;
        max_abs = max_abs.max(p.x.abs()).max(p.y.abs());
    }
    if all_same || !(max_abs > 0.0) || !max_abs.is_finite() {
        return Err(PreprocessError::Degenerate);
    }
    Ok(sketch.map_points(|p| {
        // clamp guards against x / max_abs rounding a hair past 1
        Point::new((p.x / max_abs).clamp(-1.0, 1.0), (p.y / max_abs).clamp(-1.0, 1.0))
    }))
}

fn nearest_neighbor_distances(points: &[Point]) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| p.dist(q))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn median_positive(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|d| *d > 0.0 && d.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Drops points whose nearest-neighbor distance exceeds
/// `outlier_factor × median nearest-neighbor distance`.
///
/// Removal repeats until no survivor exceeds the threshold, where the
/// threshold uses the smaller of the input median and the current median.
/// The result therefore satisfies the input-median bound and is a fixed
/// point of this function. Zero distances (duplicate points) are ignored
/// when taking medians. Strokes emptied by removal are dropped; at least two
/// points are always kept.
pub fn remove_outliers(sketch: &Sketch, cfg: &PreprocessConfig) -> Sketch {
    let flat: Vec<Point> = sketch.points().copied().collect();
    if flat.len() < 3 {
        return sketch.clone();
    }
    let Some(input_median) = median_positive(&nearest_neighbor_distances(&flat)) else {
        return sketch.clone();
    };

    let mut keep = vec![true; flat.len()];
    loop {
        let idx: Vec<usize> = (0..flat.len()).filter(|&i| keep[i]).collect();
        let pts: Vec<Point> = idx.iter().map(|&i| flat[i]).collect();
        let nn = nearest_neighbor_distances(&pts);
        let median = median_positive(&nn).unwrap_or(input_median).min(input_median);
        let threshold = cfg.outlier_factor * median;
        let drop: Vec<usize> = idx
            .iter()
            .zip(&nn)
            .filter(|&(_, &d)| d > threshold)
            .map(|(&i, _)| i)
            .collect();
        if drop.is_empty() || idx.len() - drop.len() < 2 {
            break;
        }
        for i in drop {
            keep[i] = false;
        }
    }

    let mut k = 0;
    let strokes = sketch
        .strokes
        .iter()
        .filter_map(|s| {
            let pts: Vec<Point> = s
                .points
                .iter()
                .filter(|_| {
                    let kept = keep[k];
                    k += 1;
                    kept
                })
                .copied()
                .collect();
            (!pts.is_empty()).then(|| Stroke::new(pts))
        })
        .collect();
    Sketch {
        strokes,
        label: sketch.label,
        source_id: sketch.source_id.clone(),
    }
}

/// Removes strokes with fewer than `min_points_per_stroke` points or an arc
/// length below `min_stroke_length`.
pub fn remove_degenerate_strokes(
    sketch: &Sketch,
    cfg: &PreprocessConfig,
) -> Result<Sketch, PreprocessError> {
    let strokes: Vec<Stroke> = sketch
        .strokes
        .iter()
        .filter(|s| s.len() >= cfg.min_points_per_stroke && s.arc_length() >= cfg.min_stroke_length)
        .cloned()
        .collect();
    if strokes.is_empty() {
        return Err(PreprocessError::EmptyAfterFiltering);
    }
    Ok(Sketch {
        strokes,
        label: sketch.label,
        source_id: sketch.source_id.clone(),
    })
}

/// Full standardization pipeline.
pub fn preprocess(sketch: &Sketch, cfg: &PreprocessConfig) -> Result<Sketch, PreprocessError> {
    cfg.validate()?;
    if sketch.num_points() == 0 || !sketch.points().all(Point::is_finite) {
        return Err(PreprocessError::Degenerate);
    }
    let s = center_mass(sketch);
    let s = normalize_bbox(&s)?;
    let s = remove_outliers(&s, cfg);
    let s = remove_degenerate_strokes(&s, cfg)?;
    let strokes = s
        .strokes
        .iter()
        .map(|st| resample_uniform(st, cfg.resample_interval, cfg.preserve_point_frequency))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Sketch { strokes, ..s })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sk(strokes: Vec<Vec<(f64, f64)>>) -> Sketch {
        Sketch::new(strokes.into_iter().map(Stroke::from).collect())
    }

    #[test]
    fn centering() {
        let s = center_mass(&sk(vec![vec![(3., 4.)]]));
        assert_eq!(s.strokes[0].points[0], Point::new(0., 0.));
        let s = center_mass(&sk(vec![vec![(0., 0.), (2., 2.)]]));
        assert_eq!(s.strokes[0].points, vec![Point::new(-1., -1.), Point::new(1., 1.)]);
    }

    #[test]
    fn bbox_scaling() {
        let s = normalize_bbox(&sk(vec![vec![(-1., -2.), (1., 2.)]])).unwrap();
        assert_eq!(s.strokes[0].points, vec![Point::new(-0.5, -1.), Point::new(0.5, 1.)]);
        let unit = sk(vec![vec![(-1., 0.3), (0.2, 1.)]]);
        assert_eq!(normalize_bbox(&unit).unwrap(), unit);
        assert_eq!(
            normalize_bbox(&sk(vec![vec![(2., 2.), (2., 2.)]])),
            Err(PreprocessError::Degenerate)
        );
    }

    #[test]
    fn bbox_commutes_with_rotation() {
        let s = sk(vec![vec![(0.3, -2.5), (1.7, 0.4)], vec![(-0.9, 1.1)]]);
        let rot = |p: Point| Point::new(-p.y, p.x);
        let a = normalize_bbox(&s.map_points(rot)).unwrap();
        let b = normalize_bbox(&s).unwrap().map_points(rot);
        assert_eq!(a, b);
    }

    #[test]
    fn far_point_is_removed() {
        let mut line: Vec<(f64, f64)> = (0..20).map(|i| (i as f64 / 19.0, 0.0)).collect();
        line.push((50., 50.));
        let s = remove_outliers(&sk(vec![line]), &PreprocessConfig::default());
        assert_eq!(s.num_points(), 20);
        assert!(s.points().all(|p| p.x <= 1.0));

        let cluster = sk(vec![vec![(0., 0.), (0.1, 0.), (0.1, 0.1), (0., 0.1)]]);
        assert_eq!(remove_outliers(&cluster, &PreprocessConfig::default()), cluster);
    }

    #[test]
    fn outlier_only_stroke_dropped() {
        let line: Vec<(f64, f64)> = (0..20).map(|i| (i as f64 / 19.0, 0.0)).collect();
        let s = sk(vec![line, vec![(40., 40.)]]);
        let out = remove_outliers(&s, &PreprocessConfig::default());
        assert_eq!(out.strokes.len(), 1);
    }

    #[test]
    fn degenerate_filters() {
        let cfg = PreprocessConfig::default();
        let s = sk(vec![
            vec![(0., 0.), (1., 0.)],
            vec![(0., 0.), (0.02, 0.), (0.04, 0.)],
            vec![(0., 0.), (0.5, 0.), (1., 0.)],
        ]);
        let out = remove_degenerate_strokes(&s, &cfg).unwrap();
        assert_eq!(out.strokes.len(), 1);
        assert_eq!(remove_degenerate_strokes(&out, &cfg).unwrap(), out);
        let bad = sk(vec![vec![(0., 0.), (1., 0.)]]);
        assert_eq!(
            remove_degenerate_strokes(&bad, &cfg),
            Err(PreprocessError::EmptyAfterFiltering)
        );
    }

    #[test]
    fn collapsed_sketch_errors() {
        let s = sk(vec![vec![(1., 1.), (1., 1.), (1., 1.)]]);
        assert_eq!(
            preprocess(&s, &PreprocessConfig::default()),
            Err(PreprocessError::Degenerate)
        );
    }

    #[test]
    fn config_validation() {
        let mut c = PreprocessConfig::default();
        assert!(c.validate().is_ok());
        c.resample_interval = 0.0;
        assert!(c.validate().is_err());
        let c = PreprocessConfig {
            outlier_factor: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = PreprocessConfig {
            p_max: 1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
