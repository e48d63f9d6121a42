//! Sketch file formats: QuickDraw ndjson, stroke-3 offsets and the `SDG1`
//! binary cache.

mod cache;
mod quickdraw;
mod stroke3;
mod svg;

pub use cache::{read_cache, read_cache_from, write_cache, write_cache_to, CACHE_MAGIC, CACHE_VERSION};
pub use quickdraw::{parse_quickdraw_ndjson, CategoryTable, NdjsonParse, RecordError};
pub use stroke3::{format_stroke3_text, parse_stroke3, parse_stroke3_text, to_stroke3, Stroke3Row};
pub use svg::sketch_to_svg;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("truncated file: {0}")]
    Truncated(&'static str),
    #[error("stroke-3 sequence is empty")]
    EmptyStroke3,
    #[error("stroke-3 sequence ends without a pen lift ({0} trailing rows)")]
    UnterminatedStroke(usize),
    #[error("line {line}: {message}")]
    Text { line: usize, message: String },
    #[error("invalid data: {0}")]
    Invalid(String),
}
