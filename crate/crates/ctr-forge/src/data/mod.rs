//! Criteo-format ingestion, vocabularies, sampling, splits, and batches.

mod batch;
mod parse;
mod sample;
pub mod synthetic;
mod vocab;

pub use batch::{batches, Batch, BatchIter};
pub use parse::{parse_tsv, to_tsv_line, transform_dense, ParseStats};
pub use sample::{split, stratified_sample};
pub use vocab::FeatureVocab;

/// Field layout of a record stream. The public Criteo dump is 13 dense +
/// 26 categorical; synthetic sets use whatever they were generated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schema {
    pub n_dense: usize,
    pub n_cat: usize,
}

impl Schema {
    pub const CRITEO: Schema = Schema {
        n_dense: 13,
        n_cat: 26,
    };

    pub fn new(n_dense: usize, n_cat: usize) -> Self {
        Schema { n_dense, n_cat }
    }

    /// Total model fields: every dense and categorical column becomes one
    /// embedded field.
    pub fn n_fields(&self) -> usize {
        self.n_dense + self.n_cat
    }
}

/// One labeled example. Empty slots are `None` (missing).
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub label: u8,
    pub dense: Vec<Option<i64>>,
    pub categorical: Vec<Option<String>>,
}

impl Record {
    pub fn new(label: u8, dense: Vec<Option<i64>>, categorical: Vec<Option<String>>) -> Self {
        debug_assert!(label <= 1);
        Record {
            label,
            dense,
            categorical,
        }
    }

    pub fn matches(&self, schema: &Schema) -> bool {
        self.dense.len() == schema.n_dense && self.categorical.len() == schema.n_cat
    }
}

/// Positive-label fraction of a record slice.
pub fn positive_rate(records: &[Record]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.label == 1).count() as f64 / records.len() as f64
}
