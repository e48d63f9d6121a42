//! Arc-length resampling of polylines.

use super::PreprocessError;
use crate::sketch::{Point, Stroke};

/// Cumulative arc length at every vertex; starts at 0.
pub fn cumulative_arc_length(points: &[Point]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for w in points.windows(2) {
        acc += w[0].dist(&w[1]);
        cum.push(acc);
    }
    cum
}

/// Point at arc-length position `s` along the polyline.
fn point_at(points: &[Point], cum: &[f64], s: f64) -> Point {
    let last = points.len() - 1;
    if s <= 0.0 || last == 0 {
        return points[0];
    }
    if s >= cum[last] {
        return points[last];
    }
    // first vertex strictly beyond s; the segment is (seg - 1, seg)
    let seg = cum.partition_point(|&c| c <= s).clamp(1, last);
    let (a, b) = (points[seg - 1], points[seg]);
    let len = cum[seg] - cum[seg - 1];
    if len <= 0.0 {
        return b;
    }
    let t = (s - cum[seg - 1]) / len;
    Point::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t)
}

fn checked_length(stroke: &Stroke) -> Result<(Vec<f64>, f64), PreprocessError> {
    if stroke.points.is_empty() {
        return Err(PreprocessError::ZeroLengthStroke);
    }
    let cum = cumulative_arc_length(&stroke.points);
    let total = *cum.last().unwrap();
    if !(total > 0.0) {
        return Err(PreprocessError::ZeroLengthStroke);
    }
    Ok((cum, total))
}

/// Resamples a stroke.
///
/// Default mode places points at arc-length positions `0, δ, 2δ, …` and
/// always ends on the stroke's endpoint, so every gap is `δ` except possibly
/// a shorter final one. With `preserve_point_frequency` the input point
/// count and relative density are kept instead.
pub fn resample_uniform(
    stroke: &Stroke,
    delta: f64,
    preserve_point_frequency: bool,
) -> Result<Stroke, PreprocessError> {
    if preserve_point_frequency {
        return resample_density(stroke, stroke.len());
    }
    if !(delta > 0.0) {
        return Err(PreprocessError::InvalidConfig(format!("resample interval {delta}")));
    }
    let (cum, total) = checked_length(stroke)?;
    let q = total / delta;
    // number of gaps; a final gap within 1e-9·δ of δ counts as a full gap
    let gaps = ((q - 1e-9).ceil() as usize).max(1);
    let mut points: Vec<Point> = (0..gaps)
        .map(|i| point_at(&stroke.points, &cum, i as f64 * delta))
        .collect();
    points.push(*stroke.points.last().unwrap());
    Ok(Stroke::new(points))
}

/// Exactly `n ≥ 2` points with equal arc-length spacing `L / (n - 1)`.
pub fn resample_count(stroke: &Stroke, n: usize) -> Result<Stroke, PreprocessError> {
    let (cum, total) = checked_length(stroke)?;
    let n = n.max(2);
    let step = total / (n - 1) as f64;
    let mut points: Vec<Point> = (0..n - 1)
        .map(|i| point_at(&stroke.points, &cum, i as f64 * step))
        .collect();
    points.push(*stroke.points.last().unwrap());
    Ok(Stroke::new(points))
}

/// `n` points whose arc-length positions follow the input's vertex
/// distribution (linear interpolation over vertex index), which keeps the
/// relative point density of the input.
pub fn resample_density(stroke: &Stroke, n: usize) -> Result<Stroke, PreprocessError> {
    let (cum, _) = checked_length(stroke)?;
    let m = stroke.len();
    if n == 0 {
        return Ok(Stroke::new(Vec::new()));
    }
    if n == 1 {
        return Ok(Stroke::new(vec![stroke.points[0]]));
    }
    let scale = (m - 1) as f64 / (n - 1) as f64;
    let points = (0..n)
        .map(|j| {
            let f = j as f64 * scale;
            let i = (f.floor() as usize).min(m - 1);
            let s = if i + 1 < m {
                cum[i] + (cum[i + 1] - cum[i]) * (f - i as f64)
            } else {
                cum[m - 1]
            };
            if j == n - 1 {
                stroke.points[m - 1]
            } else if f == i as f64 {
                stroke.points[i]
            } else {
                point_at(&stroke.points, &cum, s)
            }
        })
        .collect();
    Ok(Stroke::new(points))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[Point], b: &[(f64, f64)], tol: f64) -> bool {
        a.len() == b.len()
            && a.iter()
                .zip(b)
                .all(|(p, q)| (p.x - q.0).abs() <= tol && (p.y - q.1).abs() <= tol)
    }

    #[test]
    fn straight_segment() {
        let s = Stroke::from(vec![(0., 0.), (0., 1.)]);
        let r = resample_uniform(&s, 0.25, false).unwrap();
        assert!(close(
            &r.points,
            &[(0., 0.), (0., 0.25), (0., 0.5), (0., 0.75), (0., 1.)],
            1e-12
        ));
    }

    #[test]
    fn corner_crossing() {
        let s = Stroke::from(vec![(0., 0.), (1., 0.), (1., 1.)]);
        let r = resample_uniform(&s, 0.5, false).unwrap();
        assert!(close(
            &r.points,
            &[(0., 0.), (0.5, 0.), (1., 0.), (1., 0.5), (1., 1.)],
            1e-12
        ));
    }

    #[test]
    fn short_final_gap() {
        let s = Stroke::from(vec![(0., 0.), (1., 0.)]);
        let r = resample_uniform(&s, 0.3, false).unwrap();
        let xs: Vec<f64> = r.points.iter().map(|p| p.x).collect();
        assert_eq!(xs.len(), 5);
        assert!((xs[3] - 0.9).abs() < 1e-12 && xs[4] == 1.0);
    }

    #[test]
    fn zero_length_rejected() {
        let s = Stroke::from(vec![(1., 1.), (1., 1.)]);
        assert!(matches!(
            resample_uniform(&s, 0.1, false),
            Err(PreprocessError::ZeroLengthStroke)
        ));
        assert!(resample_uniform(&Stroke::from(vec![(0., 0.)]), 0.1, false).is_err());
    }

    #[test]
    fn preserve_mode_is_identity_on_input_vertices() {
        let s = Stroke::from(vec![(0., 0.), (0.1, 0.), (0.5, 0.), (0.5, 0.7)]);
        let r = resample_uniform(&s, 0.05, true).unwrap();
        for (a, b) in r.points.iter().zip(&s.points) {
            assert!(a.dist(b) < 1e-9);
        }
    }

    #[test]
    fn count_resampling_is_uniform() {
        let s = Stroke::from(vec![(0., 0.), (3., 0.), (3., 1.)]);
        let r = resample_count(&s, 9).unwrap();
        assert_eq!(r.len(), 9);
        assert!(close(&r.points[..3], &[(0., 0.), (0.5, 0.), (1., 0.)], 1e-12));
        assert_eq!(*r.points.last().unwrap(), Point::new(3., 1.));
    }
}
