use std::fmt::Write as _;

use super::FormatError;
use crate::sketch::{Point, Sketch, Stroke};

/// One offset-coded point. `pen_lift` marks the last point of a stroke.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stroke3Row {
    pub dx: f64,
    pub dy: f64,
    pub pen_lift: bool,
}

impl Stroke3Row {
    pub const fn new(dx: f64, dy: f64, pen_lift: bool) -> Self {
        Self { dx, dy, pen_lift }
    }
}

/// Decodes offset rows into absolute coordinates starting from `origin`.
pub fn parse_stroke3(rows: &[Stroke3Row], origin: Point) -> Result<Sketch, FormatError> {
    if rows.is_empty() {
        return Err(FormatError::EmptyStroke3);
    }
    let mut strokes = Vec::new();
    let mut current = Vec::new();
    let (mut x, mut y) = (origin.x, origin.y);
    for row in rows {
        x += row.dx;
        y += row.dy;
        current.push(Point::new(x, y));
        if row.pen_lift {
            strokes.push(Stroke::new(std::mem::take(&mut current)));
        }
    }
    if !current.is_empty() {
        return Err(FormatError::UnterminatedStroke(current.len()));
    }
    Ok(Sketch::new(strokes))
}

/// Encodes a sketch as offsets relative to its first point, so the first
/// row is always `(0, 0)`.
///
/// Decoding with [`parse_stroke3`] from the first point reproduces the
/// sketch exactly whenever the coordinate differences are exact in `f64`
/// (e.g. integer or dyadic-grid coordinates such as QuickDraw's).
pub fn to_stroke3(sketch: &Sketch) -> Vec<Stroke3Row> {
    let mut rows = Vec::with_capacity(sketch.num_points());
    let mut prev: Option<Point> = None;
    for stroke in &sketch.strokes {
        let n = stroke.points.len();
        for (i, p) in stroke.points.iter().enumerate() {
            let (dx, dy) = match prev {
                Some(q) => (p.x - q.x, p.y - q.y),
                None => (0.0, 0.0),
            };
            rows.push(Stroke3Row::new(dx, dy, i + 1 == n));
            prev = Some(*p);
        }
    }
    rows
}

/// Text form used for `.s3` files: an `# origin x y` header then one
/// `dx dy pen_lift` row per line.
pub fn format_stroke3_text(sketch: &Sketch) -> String {
    let origin = sketch.points().next().copied().unwrap_or(Point::new(0.0, 0.0));
    let mut out = format!("# origin {} {}\n", origin.x, origin.y);
    for row in to_stroke3(sketch) {
        let _ = writeln!(out, "{} {} {}", row.dx, row.dy, u8::from(row.pen_lift));
    }
    out
}

pub fn parse_stroke3_text(text: &str) -> Result<Sketch, FormatError> {
    let mut origin = Point::new(0.0, 0.0);
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| FormatError::Text {
            line: i + 1,
            message,
        };
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('#') {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.first() == Some(&"origin") && parts.len() == 3 {
                let x = parts[1].parse().map_err(|e| err(format!("{e}")))?;
                let y = parts[2].parse().map_err(|e| err(format!("{e}")))?;
                origin = Point::new(x, y);
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", parts.len())));
        }
        let dx: f64 = parts[0].parse().map_err(|e| err(format!("{e}")))?;
        let dy: f64 = parts[1].parse().map_err(|e| err(format!("{e}")))?;
        let pen_lift = match parts[2] {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("pen_lift must be 0 or 1, found {other}"))),
        };
        rows.push(Stroke3Row::new(dx, dy, pen_lift));
    }
    parse_stroke3(&rows, origin)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(dx: f64, dy: f64, p: u8) -> Stroke3Row {
        Stroke3Row::new(dx, dy, p == 1)
    }

    #[test]
    fn prefix_sums() {
        let s = parse_stroke3(&[r(0., 0., 0), r(1., 0., 0), r(0., 1., 1)], Point::new(0., 0.))
            .unwrap();
        assert_eq!(s.strokes, vec![Stroke::from(vec![(0., 0.), (1., 0.), (1., 1.)])]);

        let s = parse_stroke3(&[r(0., 0., 1), r(2., 2., 1)], Point::new(0., 0.)).unwrap();
        assert_eq!(
            s.strokes,
            vec![Stroke::from(vec![(0., 0.)]), Stroke::from(vec![(2., 2.)])]
        );
    }

    #[test]
    fn difference_coding() {
        let s = Sketch::new(vec![Stroke::from(vec![(0., 0.), (1., 1.)])]);
        assert_eq!(to_stroke3(&s), vec![r(0., 0., 0), r(1., 1., 1)]);
        let s = Sketch::new(vec![Stroke::from(vec![(0., 0.)]), Stroke::from(vec![(3., 0.)])]);
        assert_eq!(to_stroke3(&s), vec![r(0., 0., 1), r(3., 0., 1)]);
    }

    #[test]
    fn rows_roundtrip() {
        let rows = vec![r(0., 0., 0), r(1., 0., 0), r(0., 1., 1), r(-4., 2., 1)];
        let s = parse_stroke3(&rows, Point::new(0., 0.)).unwrap();
        assert_eq!(to_stroke3(&s), rows);
    }

    #[test]
    fn malformed_sequences() {
        assert!(matches!(
            parse_stroke3(&[], Point::new(0., 0.)),
            Err(FormatError::EmptyStroke3)
        ));
        assert!(matches!(
            parse_stroke3(&[r(0., 0., 1), r(1., 1., 0)], Point::new(0., 0.)),
            Err(FormatError::UnterminatedStroke(1))
        ));
    }

    #[test]
    fn text_roundtrip() {
        let s = Sketch::new(vec![
            Stroke::from(vec![(3., 4.), (5., 4.5)]),
            Stroke::from(vec![(-1., 0.25)]),
        ]);
        let text = format_stroke3_text(&s);
        assert!(text.starts_with("# origin 3 4\n"));
        assert_eq!(parse_stroke3_text(&text).unwrap(), s);
        assert!(parse_stroke3_text("1 2\n").is_err());
    }
}
