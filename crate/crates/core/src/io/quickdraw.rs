use std::collections::HashMap;

use serde::Deserialize;

use crate::sketch::{Point, Sketch, Stroke};

/// Maps QuickDraw `word` values to numeric labels.
#[derive(Debug, Clone, Default)]
pub struct CategoryTable {
    names: Vec<String>,
    index: HashMap<String, u32>,
    growable: bool,
}

impl CategoryTable {
    /// A fixed table; unknown words are record errors.
    pub fn fixed<S: AsRef<str>>(names: &[S]) -> Self {
        let mut table = Self::default();
        for n in names {
            table.insert(n.as_ref());
        }
        table
    }

    /// A table that assigns the next free label to every new word.
    pub fn growable() -> Self {
        Self {
            growable: true,
            ..Self::default()
        }
    }

    fn insert(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn lookup(&mut self, name: &str) -> Option<u32> {
        match self.index.get(name) {
            Some(&id) => Some(id),
            None if self.growable => Some(self.insert(name)),
            None => None,
        }
    }

    pub fn name(&self, label: u32) -> Option<&str> {
        self.names.get(label as usize).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// A record that could not be turned into a sketch.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct NdjsonParse {
    pub sketches: Vec<Sketch>,
    pub errors: Vec<RecordError>,
    /// Records with an empty `drawing` array.
    pub skipped_empty: usize,
}

#[derive(Deserialize)]
struct Record {
    word: Option<String>,
    key_id: Option<serde_json::Value>,
    drawing: Option<Vec<Vec<Vec<f64>>>>,
}

/// Parses QuickDraw ndjson (simplified or raw; raw timestamps are dropped).
///
/// A malformed line is reported in [`NdjsonParse::errors`] and never aborts
/// the rest of the input.
pub fn parse_quickdraw_ndjson(text: &str, categories: &mut CategoryTable) -> NdjsonParse {
    let mut out = NdjsonParse::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(line, line_no, categories) {
            Ok(Some(sketch)) => out.sketches.push(sketch),
            Ok(None) => out.skipped_empty += 1,
            Err(message) => out.errors.push(RecordError {
                line: line_no,
                message,
            }),
        }
    }
    out
}

fn parse_record(
    line: &str,
    line_no: usize,
    categories: &mut CategoryTable,
) -> Result<Option<Sketch>, String> {
    let record: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let drawing = record.drawing.ok_or("missing field `drawing`")?;
    let word = record.word.ok_or("missing field `word`")?;
    if drawing.is_empty() {
        return Ok(None);
    }
    let label = categories
        .lookup(&word)
        .ok_or_else(|| format!("unknown category `{word}`"))?;

    let mut strokes = Vec::with_capacity(drawing.len());
    for (si, arrays) in drawing.into_iter().enumerate() {
        if arrays.len() < 2 {
            return Err(format!("stroke {si}: expected x and y arrays"));
        }
        let (xs, ys) = (&arrays[0], &arrays[1]);
        if xs.len() != ys.len() {
            return Err(format!(
                "stroke {si}: x/y length mismatch ({} vs {})",
                xs.len(),
                ys.len()
            ));
        }
        if xs.is_empty() {
            return Err(format!("stroke {si}: no points"));
        }
        strokes.push(Stroke::new(
            xs.iter().zip(ys).map(|(&x, &y)| Point::new(x, y)).collect(),
        ));
    }

    let source_id = match record.key_id {
        Some(serde_json::Value::String(s)) => s,
        Some(v) => v.to_string(),
        None => format!("line:{line_no}"),
    };
    Ok(Some(Sketch {
        strokes,
        label: Some(label),
        source_id: Some(source_id),
    }))
}
