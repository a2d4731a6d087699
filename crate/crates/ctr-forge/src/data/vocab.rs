//! Per-field categorical vocabularies with frequency pruning, deterministic
//! overflow hashing, and the reserved OOV index 0.

use super::Record;
use crate::error::{CtrError, Result};
use std::collections::HashMap;
use std::io::{BufRead, Write};

const FILE_HEADER: &str = "CTRVOCAB v1";

/// Token-to-index maps, one per categorical field. Index 0 is reserved for
/// out-of-vocabulary and missing values; no token ever maps to 0.
#[derive(Debug, Clone, Default)]
pub struct FeatureVocab {
    fields: Vec<HashMap<String, u32>>,
    bucket_counts: Vec<usize>,
}

impl FeatureVocab {
    /// One pass over training records (never test records): per field,
    /// tokens with frequency >= `min_freq` get indices 1..=K in descending
    /// frequency order, ties broken lexicographically. Tokens ranked beyond
    /// `bucket_cap` hash into [1, bucket_cap] with FNV-1a 64.
    pub fn build(records: &[Record], n_cat: usize, min_freq: usize, bucket_cap: usize) -> Self {
        assert!(min_freq >= 1 && bucket_cap >= 1);
        let mut fields = Vec::with_capacity(n_cat);
        let mut bucket_counts = Vec::with_capacity(n_cat);

        for f in 0..n_cat {
            let mut freq: HashMap<&str, usize> = HashMap::new();
            for rec in records {
                if let Some(tok) = rec.categorical.get(f).and_then(|t| t.as_deref()) {
                    *freq.entry(tok).or_insert(0) += 1;
                }
            }
            let mut ranked: Vec<(&str, usize)> =
                freq.into_iter().filter(|&(_, c)| c >= min_freq).collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

            let mut map = HashMap::with_capacity(ranked.len());
            for (rank, (tok, _)) in ranked.iter().enumerate() {
                let index = if rank < bucket_cap {
                    (rank + 1) as u32
                } else {
                    (fnv1a64(tok.as_bytes()) % bucket_cap as u64 + 1) as u32
                };
                map.insert(tok.to_string(), index);
            }
            let bucket_count = map.values().max().copied().unwrap_or(0) as usize;
            fields.push(map);
            bucket_counts.push(bucket_count);
        }

        FeatureVocab {
            fields,
            bucket_counts,
        }
    }

    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    /// Highest index in use for a field; the embedding table needs
    /// `bucket_count(f) + 1` rows (row 0 is OOV).
    pub fn bucket_count(&self, field: usize) -> usize {
        self.bucket_counts[field]
    }

    pub fn bucket_counts(&self) -> &[usize] {
        &self.bucket_counts
    }

    /// Index for a token; unseen or missing tokens map to 0.
    pub fn lookup(&self, field: usize, token: Option<&str>) -> u32 {
        match token {
            Some(tok) => self.fields[field].get(tok).copied().unwrap_or(0),
            None => 0,
        }
    }

    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{FILE_HEADER}")?;
        for (f, map) in self.fields.iter().enumerate() {
            let mut entries: Vec<(&String, &u32)> = map.iter().collect();
            entries.sort();
            for (tok, idx) in entries {
                writeln!(w, "{f}\t{tok}\t{idx}")?;
            }
        }
        Ok(())
    }

    pub fn load(r: &mut impl BufRead, n_cat: usize) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| CtrError::Parse("empty vocab file".into()))?;
        if header != FILE_HEADER {
            return Err(CtrError::Parse(format!(
                "bad vocab header `{header}` (want `{FILE_HEADER}`)"
            )));
        }
        let mut fields = vec![HashMap::new(); n_cat];
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (f, tok, idx) = (parts.next(), parts.next(), parts.next());
            let (f, tok, idx) = match (f, tok, idx) {
                (Some(f), Some(tok), Some(idx)) => (f, tok, idx),
                _ => return Err(CtrError::Parse(format!("bad vocab line `{line}`"))),
            };
            let f: usize = f
                .parse()
                .map_err(|_| CtrError::Parse(format!("bad field id `{f}`")))?;
            let idx: u32 = idx
                .parse()
                .map_err(|_| CtrError::Parse(format!("bad index `{idx}`")))?;
            if f >= n_cat {
                return Err(CtrError::Parse(format!(
                    "field id {f} out of range (schema has {n_cat} categorical fields)"
                )));
            }
            if idx == 0 {
                return Err(CtrError::Parse("index 0 is reserved for OOV".into()));
            }
            fields[f].insert(tok.to_string(), idx);
        }
        let bucket_counts = fields
            .iter()
            .map(|m| m.values().max().copied().unwrap_or(0) as usize)
            .collect();
        Ok(FeatureVocab {
            fields,
            bucket_counts,
        })
    }
}

/// FNV-1a, 64-bit. Stable across runs and platforms, unlike std's hasher.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
