//! `SDG1` binary cache.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "SDG1" version count
//! per sketch: stroke_count
//!             per stroke: point_count, then point_count × (x: f32, y: f32)
//!             label (0xFFFF_FFFF = none)
//! ```
//!
//! Coordinates are stored as `f32`; `source_id` is not stored.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::FormatError;
use crate::sketch::{Point, Sketch, Stroke};

pub const CACHE_MAGIC: [u8; 4] = *b"SDG1";
pub const CACHE_VERSION: u32 = 1;
const NO_LABEL: u32 = u32::MAX;

pub fn write_cache(sketches: &[Sketch], path: impl AsRef<Path>) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cache_to(sketches, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_cache_to(sketches: &[Sketch], w: &mut impl Write) -> Result<(), FormatError> {
    w.write_all(&CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&len_u32(sketches.len())?.to_le_bytes())?;
    for sketch in sketches {
        w.write_all(&len_u32(sketch.strokes.len())?.to_le_bytes())?;
        for stroke in &sketch.strokes {
            w.write_all(&len_u32(stroke.points.len())?.to_le_bytes())?;
            for p in &stroke.points {
                w.write_all(&(p.x as f32).to_le_bytes())?;
                w.write_all(&(p.y as f32).to_le_bytes())?;
            }
        }
        w.write_all(&sketch.label.unwrap_or(NO_LABEL).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<Vec<Sketch>, FormatError> {
    read_cache_from(&mut BufReader::new(File::open(path)?))
}

pub fn read_cache_from(r: &mut impl Read) -> Result<Vec<Sketch>, FormatError> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "header")?;
    if magic != CACHE_MAGIC {
        return Err(FormatError::BadMagic {
            expected: CACHE_MAGIC,
            found: magic,
        });
    }
    let version = read_u32(r, "version")?;
    if version != CACHE_VERSION {
        return Err(FormatError::VersionMismatch {
            expected: CACHE_VERSION,
            found: version,
        });
    }
    let count = read_u32(r, "sketch count")? as usize;
    let mut sketches = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let n_strokes = read_u32(r, "stroke count")? as usize;
        let mut strokes = Vec::with_capacity(n_strokes.min(1 << 16));
        for _ in 0..n_strokes {
            let n_points = read_u32(r, "point count")? as usize;
            let mut points = Vec::with_capacity(n_points.min(1 << 16));
            for _ in 0..n_points {
                let x = read_f32(r)?;
                let y = read_f32(r)?;
                points.push(Point::new(x as f64, y as f64));
            }
            strokes.push(Stroke::new(points));
        }
        let label = match read_u32(r, "label")? {
            NO_LABEL => None,
            l => Some(l),
        };
        sketches.push(Sketch {
            strokes,
            label,
            source_id: None,
        });
    }
    Ok(sketches)
}

fn len_u32(n: usize) -> Result<u32, FormatError> {
    u32::try_from(n).map_err(|_| FormatError::Invalid(format!("length {n} exceeds u32")))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<(), FormatError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => FormatError::Truncated(what),
        _ => FormatError::Io(e),
    })
}

fn read_u32(r: &mut impl Read, what: &'static str) -> Result<u32, FormatError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> Result<f32, FormatError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, "coordinates")?;
    Ok(f32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(sketches: &[Sketch]) -> Vec<Sketch> {
        let mut buf = Vec::new();
        write_cache_to(sketches, &mut buf).unwrap();
        read_cache_from(&mut buf.as_slice()).unwrap()
    }

    #[test]
    fn empty_is_header_only() {
        let mut buf = Vec::new();
        write_cache_to(&[], &mut buf).unwrap();
        assert_eq!(buf.len(), 12);
        assert_eq!(&buf[..4], b"SDG1");
        assert!(roundtrip(&[]).is_empty());
    }

    #[test]
    fn values_survive() {
        let s = vec![
            Sketch::new(vec![Stroke::from(vec![(0.5, -0.25), (1.0, 3.0)])]).with_label(7),
            Sketch::new(vec![Stroke::from(vec![(1e-3_f32 as f64, 2.0)]), Stroke::from(vec![(4., 4.)])]),
        ];
        assert_eq!(roundtrip(&s), s);
    }

    #[test]
    fn corrupted_header() {
        let mut buf = Vec::new();
        write_cache_to(&[Sketch::new(vec![Stroke::from(vec![(0., 0.)])])], &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_cache_from(&mut bad.as_slice()),
            Err(FormatError::BadMagic { .. })
        ));

        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(
            read_cache_from(&mut bad.as_slice()),
            Err(FormatError::VersionMismatch { found: 9, .. })
        ));

        let short = &buf[..buf.len() - 3];
        assert!(matches!(
            read_cache_from(&mut &short[..]),
            Err(FormatError::Truncated(_))
        ));
    }
}
