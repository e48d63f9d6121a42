use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
    pub wall_ms: u64,
}

/// JSON-lines metrics log. The first line is a flat object echoing the
/// effective configuration (`"kind": "config"` plus one string per key);
/// every following line is a [`MetricRecord`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub header: Vec<(String, String)>,
    pub records: Vec<MetricRecord>,
}

impl MetricsLog {
    pub fn with_header(header: Vec<(String, String)>) -> Self {
        Self {
            header,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, epoch: usize, split: &str, metric: &str, value: f64, wall_ms: u64) {
        self.records.push(MetricRecord {
            epoch,
            split: split.to_owned(),
            metric: metric.to_owned(),
            value,
            wall_ms,
        });
    }

    /// Values of one series in epoch order.
    pub fn series(&self, split: &str, metric: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.split == split && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn last(&self, split: &str, metric: &str) -> Option<f64> {
        self.series(split, metric).last().copied()
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut head = serde_json::Map::new();
        head.insert("kind".into(), "config".into());
        for (k, v) in &self.header {
            head.insert(k.clone(), v.clone().into());
        }
        writeln!(w, "{}", serde_json::Value::Object(head))?;
        for r in &self.records {
            writeln!(w, "{}", serde_json::to_string(r).map_err(std::io::Error::other)?)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_from(r: impl BufRead) -> std::io::Result<Self> {
        let mut log = MetricsLog::default();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |e: serde_json::Error| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1));
            let v: serde_json::Value = serde_json::from_str(&line).map_err(bad)?;
            if v.get("kind").and_then(|k| k.as_str()) == Some("config") {
                if let Some(obj) = v.as_object() {
                    log.header = obj
                        .iter()
                        .filter(|(k, _)| *k != "kind")
                        .map(|(k, v)| (k.clone(), v.as_str().unwrap_or_default().to_owned()))
                        .collect();
                }
            } else {
                log.records.push(serde_json::from_value(v).map_err(bad)?);
            }
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut log = MetricsLog::with_header(vec![("seed".into(), "7".into())]);
        log.push(1, "train", "loss", 0.125, 0);
        log.push(1, "val", "accuracy", 0.5, 3);
        let text = log.to_text();
        assert!(text.lines().nth(1).unwrap().starts_with("{\"epoch\":1,\"split\":\"train\""));
        let back = MetricsLog::read_from(text.as_bytes()).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.series("val", "accuracy"), vec![0.5]);
    }
}
