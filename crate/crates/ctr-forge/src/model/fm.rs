//! Factorization-machine head: first-order weights plus pairwise
//! latent-vector interactions over the shared field embeddings.
//!
//! The pairwise term uses the O(n*k) identity
//! `1/2 * sum_d [ (sum_i e_id)^2 - sum_i e_id^2 ]` over the value-scaled
//! embedding rows e_i (the rows of X0), which equals the literal
//! `sum_{i<j} <e_i, e_j>` double loop kept alongside as an oracle.

use crate::data::Batch;
use crate::numerics::{dot, BackwardCtx, GradTape, Matrix, NodeId, ParamId, ParamSet, TapeOp};

/// O(n*k) pairwise interaction of one example's scaled embedding rows.
pub fn second_order_fast(x0: &Matrix) -> f64 {
    let mut acc = 0.0;
    for d in 0..x0.cols() {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..x0.rows() {
            let e = x0.get(i, d);
            sum += e;
            sum_sq += e * e;
        }
        acc += sum * sum - sum_sq;
    }
    0.5 * acc
}

/// Literal O(n^2*k) double loop over row pairs. Oracle for
/// [`second_order_fast`].
pub fn second_order_naive(x0: &Matrix) -> f64 {
    let mut acc = 0.0;
    for i in 0..x0.rows() {
        for j in (i + 1)..x0.rows() {
            acc += dot(x0.row(i), x0.row(j));
        }
    }
    acc
}

/// First-order score of one example: `w0 + sum_f w_f[idx_f] + sum_f w_f*val_f`.
fn linear_score(
    params: &ParamSet,
    w0: ParamId,
    w_cat: &[ParamId],
    w_dense: &[ParamId],
    batch: &Batch,
    example: usize,
) -> f64 {
    let mut y = params.value(w0).get(0, 0);
    for (f, &id) in w_cat.iter().enumerate() {
        let idx = batch.cat(example, f) as usize;
        y += params.value(id).get(idx, 0);
    }
    for (f, &id) in w_dense.iter().enumerate() {
        y += params.value(id).get(0, 0) * batch.dense(example, f);
    }
    y
}

pub(crate) struct FmLinearOp {
    pub out: NodeId,
    pub w0: ParamId,
    pub w_cat: Vec<ParamId>,
    pub w_dense: Vec<ParamId>,
    pub cat_idx: Vec<u32>,
    pub dense_val: Vec<f64>,
    pub n_cat: usize,
    pub n_dense: usize,
}

impl TapeOp for FmLinearOp {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (_, g, _, params) = ctx.open(self.out);
        let g = g.clone();
        let batch = g.rows();
        for b in 0..batch {
            let gb = g.get(b, 0);
            if gb == 0.0 {
                continue;
            }
            params.grad_mut(self.w0).data_mut()[0] += gb;
            for (f, &id) in self.w_cat.iter().enumerate() {
                let idx = self.cat_idx[b * self.n_cat + f] as usize;
                params.grad_mut(id).row_mut(idx)[0] += gb;
            }
            for (f, &id) in self.w_dense.iter().enumerate() {
                let val = self.dense_val[b * self.n_dense + f];
                params.grad_mut(id).data_mut()[0] += gb * val;
            }
        }
    }
}

/// First-order head over a batch (this alone is the LR head): B x 1.
pub fn fm_linear_batch(
    tape: &mut GradTape,
    params: &ParamSet,
    w0: ParamId,
    w_cat: &[ParamId],
    w_dense: &[ParamId],
    batch: &Batch,
) -> NodeId {
    let mut y = Matrix::zeros(batch.len, 1);
    for b in 0..batch.len {
        y.set(b, 0, linear_score(params, w0, w_cat, w_dense, batch, b));
    }
    let (w_cat, w_dense) = (w_cat.to_vec(), w_dense.to_vec());
    tape.push(y, |out| {
        Box::new(FmLinearOp {
            out,
            w0,
            w_cat,
            w_dense,
            cat_idx: batch.cat_idx.clone(),
            dense_val: batch.dense_val.clone(),
            n_cat: batch.schema.n_cat,
            n_dense: batch.schema.n_dense,
        })
    })
}

pub(crate) struct FmPairwiseOp {
    pub x0: NodeId,
    pub out: NodeId,
    pub n_fields: usize,
}

impl TapeOp for FmPairwiseOp {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (nodes, g, adj, _) = ctx.open(self.out);
        let x0 = &nodes[self.x0.0];
        let n = self.n_fields;
        let dim = x0.cols();
        let batch = g.rows();
        let x0_adj = &mut adj[self.x0.0];
        // d/d e_id of the pairwise term is (S_d - e_id).
        for b in 0..batch {
            let gb = g.get(b, 0);
            if gb == 0.0 {
                continue;
            }
            for d in 0..dim {
                let mut col_sum = 0.0;
                for i in 0..n {
                    col_sum += x0.get(b * n + i, d);
                }
                for i in 0..n {
                    let e = x0.get(b * n + i, d);
                    let cur = x0_adj.get(b * n + i, d);
                    x0_adj.set(b * n + i, d, cur + gb * (col_sum - e));
                }
            }
        }
    }
}

/// Pairwise interaction term per example from stacked X0: B x 1.
pub fn fm_pairwise_batch(
    tape: &mut GradTape,
    x0: NodeId,
    batch_len: usize,
    n_fields: usize,
) -> NodeId {
    let x0_val = tape.value(x0);
    let mut y = Matrix::zeros(batch_len, 1);
    for b in 0..batch_len {
        let block = super::embed::example_block(x0_val, b, n_fields);
        y.set(b, 0, second_order_fast(&block));
    }
    tape.push(y, |out| Box::new(FmPairwiseOp { x0, out, n_fields }))
}

/// Full FM score per example, computed without a tape: first-order part plus
/// the fast pairwise identity on the scaled embedding rows.
pub fn fm_forward(
    params: &ParamSet,
    w0: ParamId,
    w_cat: &[ParamId],
    w_dense: &[ParamId],
    emb_cat: &[ParamId],
    emb_dense: &[ParamId],
    batch: &Batch,
) -> Vec<f64> {
    fm_values(
        params,
        w0,
        w_cat,
        w_dense,
        emb_cat,
        emb_dense,
        batch,
        second_order_fast,
    )
}

/// Literal double-sum evaluation of the FM score. Oracle for [`fm_forward`].
pub fn fm_naive(
    params: &ParamSet,
    w0: ParamId,
    w_cat: &[ParamId],
    w_dense: &[ParamId],
    emb_cat: &[ParamId],
    emb_dense: &[ParamId],
    batch: &Batch,
) -> Vec<f64> {
    fm_values(
        params,
        w0,
        w_cat,
        w_dense,
        emb_cat,
        emb_dense,
        batch,
        second_order_naive,
    )
}

#[allow(clippy::too_many_arguments)]
fn fm_values(
    params: &ParamSet,
    w0: ParamId,
    w_cat: &[ParamId],
    w_dense: &[ParamId],
    emb_cat: &[ParamId],
    emb_dense: &[ParamId],
    batch: &Batch,
    pairwise: impl Fn(&Matrix) -> f64,
) -> Vec<f64> {
    (0..batch.len)
        .map(|b| {
            let x0 = scaled_rows(params, emb_cat, emb_dense, batch, b);
            linear_score(params, w0, w_cat, w_dense, batch, b) + pairwise(&x0)
        })
        .collect()
}

/// One example's value-scaled embedding rows (its X0 block), tape-free.
pub fn scaled_rows(
    params: &ParamSet,
    emb_cat: &[ParamId],
    emb_dense: &[ParamId],
    batch: &Batch,
    example: usize,
) -> Matrix {
    let n = batch.schema.n_cat + batch.schema.n_dense;
    let dim = if !emb_cat.is_empty() {
        params.value(emb_cat[0]).cols()
    } else {
        params.value(emb_dense[0]).cols()
    };
    let mut x0 = Matrix::zeros(n, dim);
    for (f, &id) in emb_cat.iter().enumerate() {
        let idx = batch.cat(example, f) as usize;
        x0.row_mut(f).copy_from_slice(params.value(id).row(idx));
    }
    for (f, &id) in emb_dense.iter().enumerate() {
        let val = batch.dense(example, f);
        let dst = x0.row_mut(batch.schema.n_cat + f);
        for (o, &s) in dst.iter_mut().zip(params.value(id).row(0)) {
            *o = val * s;
        }
    }
    x0
}
