//! TSV parsing and the dense-feature transform.
//!
//! Line layout: `<label>\t<I1..In_dense>\t<C1..Cn_cat>`, tab-separated, an
//! empty field meaning missing, no header.

use super::{Record, Schema};
use crate::error::{CtrError, Result};

/// Counters from one parse pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParseStats {
    pub parsed: usize,
    pub skipped: usize,
}

/// Parses lines into records. Malformed lines (wrong field count, bad label,
/// unparseable dense value) are counted and skipped; more than 1% skipped is
/// an ingestion error.
pub fn parse_tsv<I, S>(lines: I, schema: &Schema) -> Result<(Vec<Record>, ParseStats)>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut records = Vec::new();
    let mut stats = ParseStats::default();
    let expected = 1 + schema.n_dense + schema.n_cat;

    for line in lines {
        let line = line.as_ref();
        if line.is_empty() {
            continue;
        }
        match parse_line(line, schema, expected) {
            Some(rec) => {
                records.push(rec);
                stats.parsed += 1;
            }
            None => stats.skipped += 1,
        }
    }

    let total = stats.parsed + stats.skipped;
    if total > 0 && stats.skipped as f64 > 0.01 * total as f64 {
        return Err(CtrError::Ingest(format!(
            "{} of {} lines malformed (more than 1%)",
            stats.skipped, total
        )));
    }
    Ok((records, stats))
}

fn parse_line(line: &str, schema: &Schema, expected: usize) -> Option<Record> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != expected {
        return None;
    }
    let label: u8 = match fields[0] {
        "0" => 0,
        "1" => 1,
        _ => return None,
    };
    let mut dense = Vec::with_capacity(schema.n_dense);
    for &f in &fields[1..1 + schema.n_dense] {
        if f.is_empty() {
            dense.push(None);
        } else {
            dense.push(Some(f.parse::<i64>().ok()?));
        }
    }
    let categorical = fields[1 + schema.n_dense..]
        .iter()
        .map(|&f| {
            if f.is_empty() {
                None
            } else {
                Some(f.to_string())
            }
        })
        .collect();
    Some(Record {
        label,
        dense,
        categorical,
    })
}

/// Serializes a record back to its TSV line (inverse of [`parse_tsv`]).
pub fn to_tsv_line(rec: &Record) -> String {
    let mut parts = Vec::with_capacity(1 + rec.dense.len() + rec.categorical.len());
    parts.push(rec.label.to_string());
    for d in &rec.dense {
        parts.push(d.map(|v| v.to_string()).unwrap_or_default());
    }
    for c in &rec.categorical {
        parts.push(c.clone().unwrap_or_default());
    }
    parts.join("\t")
}

/// Continuous-feature transform: missing or negative becomes 0, otherwise
/// `ln(1 + x)`.
pub fn transform_dense(raw: Option<i64>) -> f64 {
    match raw {
        None => 0.0,
        Some(v) if v < 0 => 0.0,
        Some(v) => (1.0 + v as f64).ln(),
    }
}
