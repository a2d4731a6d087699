//! Mini-batch assembly: vocab lookup, dense transform, seeded shuffling.

use super::{transform_dense, FeatureVocab, Record, Schema};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A fixed-size group of transformed examples.
///
/// `cat_idx` is `len x n_cat` (row-major), `dense_val` is `len x n_dense`,
/// labels are 0.0/1.0.
#[derive(Debug, Clone)]
pub struct Batch {
    pub len: usize,
    pub schema: Schema,
    pub cat_idx: Vec<u32>,
    pub dense_val: Vec<f64>,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn from_records(records: &[&Record], schema: &Schema, vocab: &FeatureVocab) -> Batch {
        let len = records.len();
        let mut cat_idx = Vec::with_capacity(len * schema.n_cat);
        let mut dense_val = Vec::with_capacity(len * schema.n_dense);
        let mut labels = Vec::with_capacity(len);
        for rec in records {
            debug_assert!(rec.matches(schema));
            for f in 0..schema.n_cat {
                cat_idx.push(vocab.lookup(f, rec.categorical[f].as_deref()));
            }
            for d in 0..schema.n_dense {
                dense_val.push(transform_dense(rec.dense[d]));
            }
            labels.push(rec.label as f64);
        }
        Batch {
            len,
            schema: *schema,
            cat_idx,
            dense_val,
            labels,
        }
    }

    #[inline]
    pub fn cat(&self, example: usize, field: usize) -> u32 {
        self.cat_idx[example * self.schema.n_cat + field]
    }

    #[inline]
    pub fn dense(&self, example: usize, field: usize) -> f64 {
        self.dense_val[example * self.schema.n_dense + field]
    }
}

/// Iterator over mini-batches. The final partial batch is emitted. With a
/// shuffle seed the visit order is a seeded permutation; without one the
/// input order is preserved.
pub struct BatchIter<'a> {
    records: &'a [Record],
    order: Vec<usize>,
    schema: Schema,
    vocab: &'a FeatureVocab,
    batch_size: usize,
    cursor: usize,
}

impl<'a> Iterator for BatchIter<'a> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let picked: Vec<&Record> = self.order[self.cursor..end]
            .iter()
            .map(|&i| &self.records[i])
            .collect();
        self.cursor = end;
        Some(Batch::from_records(&picked, &self.schema, self.vocab))
    }
}

pub fn batches<'a>(
    records: &'a [Record],
    schema: &Schema,
    vocab: &'a FeatureVocab,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> BatchIter<'a> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..records.len()).collect();
    if let Some(seed) = shuffle_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    BatchIter {
        records,
        order,
        schema: *schema,
        vocab,
        batch_size,
        cursor: 0,
    }
}
