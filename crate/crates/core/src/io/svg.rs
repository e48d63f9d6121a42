//! Minimal SVG rendering of a sketch as polylines.

use std::fmt::Write;

use crate::sketch::Sketch;

const STROKE_WIDTH: f64 = 0.02;

/// Renders the region `[-extent, extent]²` with y pointing up.
pub fn sketch_to_svg(sketch: &Sketch, extent: f64) -> String {
    let size = 2.0 * extent;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{} {} {size} {size}\" width=\"256\" height=\"256\">\n",
        -extent, -extent
    );
    out.push_str(&format!("<rect x=\"{}\" y=\"{}\" width=\"{size}\" height=\"{size}\" fill=\"white\"/>\n", -extent, -extent));
    for stroke in &sketch.strokes {
        let pts: Vec<String> = stroke.points.iter().map(|p| format!("{:.4},{:.4}", p.x, -p.y)).collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"{STROKE_WIDTH}\" stroke-linecap=\"round\" stroke-linejoin=\"round\"/>",
            pts.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}
