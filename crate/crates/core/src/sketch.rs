//! Vector sketch model: ordered strokes of ordered 2-D points.

use serde::{Deserialize, Serialize};

/// A point in canvas units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// One pen-down to pen-up point sequence, in drawing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub points: Vec<Point>,
}

impl Stroke {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Polyline arc length.
    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].dist(&w[1])).sum()
    }

    pub fn reversed(&self) -> Stroke {
        let mut points = self.points.clone();
        points.reverse();
        Stroke { points }
    }
}

impl From<Vec<(f64, f64)>> for Stroke {
    fn from(pts: Vec<(f64, f64)>) -> Self {
        Stroke::new(pts.into_iter().map(|(x, y)| Point::new(x, y)).collect())
    }
}

/// A whole sketch. Stroke order is kept from the source but carries no
/// meaning for the models in this crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sketch {
    pub strokes: Vec<Stroke>,
    pub label: Option<u32>,
    pub source_id: Option<String>,
}

impl Sketch {
    pub fn new(strokes: Vec<Stroke>) -> Self {
        Self {
            strokes,
            label: None,
            source_id: None,
        }
    }

    pub fn with_label(mut self, label: u32) -> Self {
        self.label = Some(label);
        self
    }

    pub fn num_points(&self) -> usize {
        self.strokes.iter().map(Stroke::len).sum()
    }

    pub fn points(&self) -> impl Iterator<Item = &Point> {
        self.strokes.iter().flat_map(|s| s.points.iter())
    }

    /// Applies `f` to every point, keeping structure.
    pub fn map_points(&self, mut f: impl FnMut(Point) -> Point) -> Sketch {
        Sketch {
            strokes: self
                .strokes
                .iter()
                .map(|s| Stroke::new(s.points.iter().map(|&p| f(p)).collect()))
                .collect(),
            label: self.label,
            source_id: self.source_id.clone(),
        }
    }

    /// Rounds every coordinate to the nearest `f32`, the storage precision of
    /// the binary cache.
    pub fn to_f32_precision(&self) -> Sketch {
        self.map_points(|p| Point::new(p.x as f32 as f64, p.y as f32 as f64))
    }
}
