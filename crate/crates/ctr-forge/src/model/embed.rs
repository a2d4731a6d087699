//! Embedding lookup: one D-dimensional row per field per example.
//!
//! Categorical fields select a table row by index (row 0 is the trainable
//! OOV row); dense fields contribute their transformed value times a
//! per-field scaling vector. The stacked result is X0, laid out example-major
//! as a (B*N) x D matrix with categorical fields first.

use crate::data::Batch;
use crate::error::{CtrError, Result};
use crate::numerics::{BackwardCtx, GradTape, Matrix, NodeId, ParamId, ParamSet, TapeOp};

pub(crate) struct EmbedOp {
    pub out: NodeId,
    pub emb_cat: Vec<ParamId>,
    pub emb_dense: Vec<ParamId>,
    pub cat_idx: Vec<u32>,
    pub dense_val: Vec<f64>,
    pub n_cat: usize,
    pub n_dense: usize,
}

impl EmbedOp {
    fn n_fields(&self) -> usize {
        self.n_cat + self.n_dense
    }
}

impl TapeOp for EmbedOp {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (_, g, _, params) = ctx.open(self.out);
        let g = g.clone();
        let n = self.n_fields();
        let batch = g.rows() / n;
        for b in 0..batch {
            for f in 0..self.n_cat {
                let idx = self.cat_idx[b * self.n_cat + f] as usize;
                let g_row = g.row(b * n + f);
                let table = params.grad_mut(self.emb_cat[f]);
                let dst = table.row_mut(idx);
                for (d, gv) in dst.iter_mut().zip(g_row) {
                    *d += gv;
                }
            }
            for f in 0..self.n_dense {
                let val = self.dense_val[b * self.n_dense + f];
                if val == 0.0 {
                    continue;
                }
                let g_row = g.row(b * n + (self.n_cat + f));
                let vec = params.grad_mut(self.emb_dense[f]);
                let dst = vec.row_mut(0);
                for (d, gv) in dst.iter_mut().zip(g_row) {
                    *d += val * gv;
                }
            }
        }
    }
}

/// Records the embedding lookup for a whole batch, producing X0 stacked as
/// (B*N) x D. Errors if any categorical index is outside its field's table.
pub fn embed_batch(
    tape: &mut GradTape,
    params: &ParamSet,
    emb_cat: &[ParamId],
    emb_dense: &[ParamId],
    batch: &Batch,
) -> Result<NodeId> {
    let n_cat = batch.schema.n_cat;
    let n_dense = batch.schema.n_dense;
    let n = n_cat + n_dense;
    debug_assert_eq!(emb_cat.len(), n_cat);
    debug_assert_eq!(emb_dense.len(), n_dense);

    let embed_dim = if n_cat > 0 {
        params.value(emb_cat[0]).cols()
    } else {
        params.value(emb_dense[0]).cols()
    };
    let mut x0 = Matrix::zeros(batch.len * n, embed_dim);

    for b in 0..batch.len {
        for f in 0..n_cat {
            let idx = batch.cat(b, f) as usize;
            let table = params.value(emb_cat[f]);
            if idx >= table.rows() {
                return Err(CtrError::Lookup {
                    field: f,
                    index: idx as u32,
                    bound: table.rows(),
                });
            }
            x0.row_mut(b * n + f).copy_from_slice(table.row(idx));
        }
        for f in 0..n_dense {
            let val = batch.dense(b, f);
            let vec = params.value(emb_dense[f]);
            let dst = x0.row_mut(b * n + (n_cat + f));
            for (o, &s) in dst.iter_mut().zip(vec.row(0)) {
                *o = val * s;
            }
        }
    }

    Ok(tape.push(x0, |out| {
        Box::new(EmbedOp {
            out,
            emb_cat: emb_cat.to_vec(),
            emb_dense: emb_dense.to_vec(),
            cat_idx: batch.cat_idx.clone(),
            dense_val: batch.dense_val.clone(),
            n_cat,
            n_dense,
        })
    }))
}

/// Copies one example's N x D block out of a stacked batch matrix.
pub(crate) fn example_block(stacked: &Matrix, example: usize, rows_per_example: usize) -> Matrix {
    let mut out = Matrix::zeros(rows_per_example, stacked.cols());
    for r in 0..rows_per_example {
        out.row_mut(r)
            .copy_from_slice(stacked.row(example * rows_per_example + r));
    }
    out
}
