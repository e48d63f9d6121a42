//! Procedural doodles in ten categories, for offline demos and tests.
//!
//! Each category is a small shape grammar drawn with a pen-like jitter,
//! random affine distortion, random stroke order and random stroke
//! direction, on a QuickDraw-like 0–255 canvas.

use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::sketch::{Point, Sketch, Stroke};

pub const CATEGORIES: [&str; 10] = [
    "circle", "square", "triangle", "star", "spiral", "zigzag", "cross", "house", "face", "arrow",
];

type Poly = Vec<(f64, f64)>;

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64, n: usize) -> Poly {
    (0..n)
        .map(|i| {
            let a = from + (to - from) * i as f64 / (n - 1) as f64;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// Densifies a corner list into a polyline with `per` points per segment.
fn path(corners: &[(f64, f64)], per: usize) -> Poly {
    let mut out = vec![corners[0]];
    for w in corners.windows(2) {
        for i in 1..=per {
            let t = i as f64 / per as f64;
            out.push((w[0].0 + (w[1].0 - w[0].0) * t, w[0].1 + (w[1].1 - w[0].1) * t));
        }
    }
    out
}

fn shape(category: usize, rng: &mut impl Rng) -> Vec<Poly> {
    let mut j = |s: f64| rng.random_range(-s..=s);
    match category {
        0 => vec![ellipse(0.0, 0.0, 1.0, 1.0 + j(0.2), 0.0, TAU + j(0.3), 28)],
        1 => {
            let c = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0)];
            if j(1.0) > 0.0 {
                vec![path(&c, 5)]
            } else {
                c.windows(2).map(|w| path(w, 6)).collect()
            }
        }
        2 => {
            let c = [(-1.0, -0.8), (1.0, -0.8), (j(0.3), 1.0), (-1.0, -0.8)];
            if j(1.0) > 0.0 {
                vec![path(&c, 6)]
            } else {
                c.windows(2).map(|w| path(w, 6)).collect()
            }
        }
        3 => {
            let c: Poly = (0..=10)
                .map(|i| {
                    let r = if i % 2 == 0 { 1.0 } else { 0.4 };
                    let a = PI / 2.0 + i as f64 * PI / 5.0;
                    (r * a.cos(), r * a.sin())
                })
                .collect();
            vec![path(&c, 3)]
        }
        4 => {
            let turns = 2.0 + j(0.4);
            vec![(0..48)
                .map(|i| {
                    let t = i as f64 / 47.0;
                    let a = t * turns * TAU;
                    (t * a.cos(), t * a.sin())
                })
                .collect()]
        }
        5 => {
            let k = 6;
            let c: Poly = (0..=k).map(|i| (-1.0 + 2.0 * i as f64 / k as f64, if i % 2 == 0 { -0.5 } else { 0.5 })).collect();
            vec![path(&c, 4)]
        }
        6 => vec![path(&[(-1.0, 0.0), (1.0, 0.0)], 10), path(&[(j(0.2), -1.0), (j(0.2), 1.0)], 10)],
        7 => vec![
            path(&[(-0.8, 0.2), (-0.8, -1.0), (0.8, -1.0), (0.8, 0.2)], 5),
            path(&[(-1.0, 0.2), (0.0, 1.0 + j(0.2)), (1.0, 0.2)], 5),
            path(&[(-0.2, -1.0), (-0.2, -0.4), (0.2, -0.4), (0.2, -1.0)], 3),
        ],
        8 => vec![
            ellipse(0.0, 0.0, 1.0, 1.0, 0.0, TAU, 28),
            ellipse(-0.35, 0.3, 0.1, 0.1, 0.0, TAU, 8),
            ellipse(0.35, 0.3, 0.1, 0.1, 0.0, TAU, 8),
            ellipse(0.0, -0.1, 0.5, 0.4 + j(0.1), PI * 1.15, PI * 1.85, 12),
        ],
        9 => {
            let tip = (1.0, j(0.1));
            vec![
                path(&[(-1.0, 0.0), tip], 10),
                path(&[(0.5, 0.45), tip], 5),
                path(&[(0.5, -0.45), tip], 5),
            ]
        }
        _ => panic!("category {category} out of range"),
    }
}

/// One raw sketch of `category` (an index into [`CATEGORIES`]).
pub fn synth_sketch(category: usize, rng: &mut impl Rng) -> Sketch {
    let mut polys = shape(category, rng);
    let rot: f64 = rng.random_range(-0.35..0.35);
    let (sx, sy) = (rng.random_range(0.75..1.25), rng.random_range(0.75..1.25));
    let shear = rng.random_range(-0.2..0.2);
    let (scale, ox, oy) = (rng.random_range(70.0..110.0), rng.random_range(110.0..145.0), rng.random_range(110.0..145.0));
    let pen = Normal::new(0.0, 0.015).expect("valid sigma");
    polys.shuffle(rng);
    let strokes = polys
        .into_iter()
        .map(|mut poly| {
            if rng.random_bool(0.5) {
                poly.reverse();
            }
            let pts = poly
                .into_iter()
                .map(|(x, y)| {
                    let (x, y) = (x + pen.sample(rng), y + pen.sample(rng));
                    let (x, y) = (sx * x + shear * y, sy * y);
                    let (x, y) = (x * rot.cos() - y * rot.sin(), x * rot.sin() + y * rot.cos());
                    Point::new((ox + scale * x).round(), (oy - scale * y).round())
                })
                .collect();
            Stroke::new(pts)
        })
        .collect();
    Sketch::new(strokes).with_label(category as u32)
}

/// `per_class` sketches of each category, interleaved by class.
pub fn synth_dataset(per_class: usize, seed: u64) -> Vec<Sketch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * CATEGORIES.len());
    for _ in 0..per_class {
        for c in 0..CATEGORIES.len() {
            out.push(synth_sketch(c, &mut rng));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{preprocess, PreprocessConfig};

    #[test]
    fn every_category_survives_preprocessing() {
        let data = synth_dataset(5, 3);
        assert_eq!(data.len(), 50);
        let cfg = PreprocessConfig::default();
        for s in &data {
            let p = preprocess(s, &cfg).unwrap();
            assert!(!p.strokes.is_empty(), "{:?}", s.label);
        }
        assert_eq!(synth_dataset(5, 3), data);
    }
}
