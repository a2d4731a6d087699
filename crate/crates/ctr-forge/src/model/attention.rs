//! Pre-posed multi-head self-attention over the field embeddings, with a
//! residual connection and row-wise layer normalization.
//!
//! Per head: `softmax(X Wq (X Wk)^T / sqrt(d_k)) X Wv`; heads concatenate
//! and project back through Wo, the input is added back, and each row is
//! layer-normalized with a learned gain and bias.

use crate::error::Result;
use crate::numerics::{dot, BackwardCtx, GradTape, Matrix, NodeId, ParamId, ParamSet, TapeOp};

pub const LN_EPS: f64 = 1e-8;

/// Row-wise softmax, shifted by the row max.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Per-head projection weights.
pub struct HeadWeights<'a> {
    pub wq: &'a Matrix,
    pub wk: &'a Matrix,
    pub wv: &'a Matrix,
}

/// Intermediates of one example's attention pass, exposed for inspection.
pub struct AttnCache {
    /// Per-head projected values X*Wv.
    pub values: Vec<Matrix>,
    /// Per-head softmax weight rows (each row sums to 1).
    pub weights: Vec<Matrix>,
    /// Concatenated head outputs before the output projection.
    pub concat: Matrix,
}

/// Scaled dot-product attention with Q = K = V = x, concatenation over
/// heads, and the output projection. Returns the pre-residual output.
pub fn attention_forward(
    x: &Matrix,
    heads: &[HeadWeights<'_>],
    wo: &Matrix,
) -> Result<(Matrix, AttnCache)> {
    let n = x.rows();
    let d_k = heads[0].wq.cols();
    let scale = 1.0 / (d_k as f64).sqrt();

    let mut values = Vec::with_capacity(heads.len());
    let mut weights = Vec::with_capacity(heads.len());
    let mut concat = Matrix::zeros(n, heads.len() * d_k);
    for (h, head) in heads.iter().enumerate() {
        let q = x.matmul(head.wq)?;
        let k = x.matmul(head.wk)?;
        let v = x.matmul(head.wv)?;
        let mut scores = q.matmul(&k.transpose())?;
        scores.scale(scale);
        let a = softmax_rows(&scores);
        let o = a.matmul(&v)?;
        for r in 0..n {
            concat.row_mut(r)[h * d_k..(h + 1) * d_k].copy_from_slice(o.row(r));
        }
        values.push(v);
        weights.push(a);
    }
    let out = concat.matmul(wo)?;
    Ok((
        out,
        AttnCache {
            values,
            weights,
            concat,
        },
    ))
}

/// Layer normalization of one row with population variance:
/// `(row - mean) / sqrt(var + eps) * gain + bias`.
pub fn layer_norm(row: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv_sigma = 1.0 / (var + eps).sqrt();
    row.iter()
        .zip(gain.iter().zip(bias))
        .map(|(&v, (&g, &b))| (v - mean) * inv_sigma * g + b)
        .collect()
}

pub fn layer_norm_rows(x: &Matrix, gain: &[f64], bias: &[f64], eps: f64) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        out.row_mut(r)
            .copy_from_slice(&layer_norm(x.row(r), gain, bias, eps));
    }
    out
}

/// The whole block on one example: attention, residual add, layer norm.
pub fn mha_forward(
    x: &Matrix,
    heads: &[HeadWeights<'_>],
    wo: &Matrix,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> Result<Matrix> {
    let (attn, _) = attention_forward(x, heads, wo)?;
    let mut res = attn;
    res.add_assign(x);
    Ok(layer_norm_rows(&res, gain, bias, eps))
}

pub(crate) struct AttnOp {
    pub x: NodeId,
    pub wq: Vec<ParamId>,
    pub wk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    pub wo: ParamId,
    pub out: NodeId,
    pub n_fields: usize,
}

impl TapeOp for AttnOp {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (nodes, g, adj, params) = ctx.open(self.out);
        let g = g.clone();
        let n = self.n_fields;
        let batch = g.rows() / n;
        let n_heads = self.wq.len();
        let d_k = params.value(self.wq[0]).cols();
        let scale = 1.0 / (d_k as f64).sqrt();
        let wo = params.value(self.wo).clone();
        let wqs: Vec<Matrix> = self.wq.iter().map(|&id| params.value(id).clone()).collect();
        let wks: Vec<Matrix> = self.wk.iter().map(|&id| params.value(id).clone()).collect();
        let wvs: Vec<Matrix> = self.wv.iter().map(|&id| params.value(id).clone()).collect();

        for b in 0..batch {
            let x = super::embed::example_block(&nodes[self.x.0], b, n);
            let gy = super::embed::example_block(&g, b, n);

            // Recompute the forward intermediates; cheaper than caching them
            // across the whole batch.
            let heads: Vec<HeadWeights<'_>> = (0..n_heads)
                .map(|h| HeadWeights {
                    wq: &wqs[h],
                    wk: &wks[h],
                    wv: &wvs[h],
                })
                .collect();
            let (_, cache) = attention_forward(&x, &heads, &wo).expect("forward shapes hold");

            // Output projection.
            let grad_wo = cache.concat.transpose().matmul(&gy).expect("shape");
            params.grad_mut(self.wo).add_assign(&grad_wo);
            let gc = gy.matmul(&wo.transpose()).expect("shape");

            let mut gx = Matrix::zeros(n, x.cols());
            for h in 0..n_heads {
                let mut go = Matrix::zeros(n, d_k);
                for r in 0..n {
                    go.row_mut(r)
                        .copy_from_slice(&gc.row(r)[h * d_k..(h + 1) * d_k]);
                }
                let a = &cache.weights[h];
                let v = &cache.values[h];
                let q = x.matmul(&wqs[h]).expect("shape");
                let k = x.matmul(&wks[h]).expect("shape");

                let ga = go.matmul(&v.transpose()).expect("shape");
                let gv = a.transpose().matmul(&go).expect("shape");

                // Softmax rows: gs = a ∘ (ga - <ga, a>), then the 1/sqrt(d_k)
                // scaling of the scores.
                let mut gs = Matrix::zeros(n, n);
                for r in 0..n {
                    let dot_ga_a = dot(ga.row(r), a.row(r));
                    let gs_row = gs.row_mut(r);
                    for c in 0..n {
                        gs_row[c] = a.get(r, c) * (ga.get(r, c) - dot_ga_a) * scale;
                    }
                }

                let gq = gs.matmul(&k).expect("shape");
                let gk = gs.transpose().matmul(&q).expect("shape");

                params
                    .grad_mut(self.wq[h])
                    .add_assign(&x.transpose().matmul(&gq).expect("shape"));
                params
                    .grad_mut(self.wk[h])
                    .add_assign(&x.transpose().matmul(&gk).expect("shape"));
                params
                    .grad_mut(self.wv[h])
                    .add_assign(&x.transpose().matmul(&gv).expect("shape"));

                gx.add_assign(&gq.matmul(&wqs[h].transpose()).expect("shape"));
                gx.add_assign(&gk.matmul(&wks[h].transpose()).expect("shape"));
                gx.add_assign(&gv.matmul(&wvs[h].transpose()).expect("shape"));
            }
            for r in 0..n {
                let dst = adj[self.x.0].row_mut(b * n + r);
                for (d, gv) in dst.iter_mut().zip(gx.row(r)) {
                    *d += gv;
                }
            }
        }
    }
}

/// Pre-residual multi-head attention over a stacked batch.
#[allow(clippy::too_many_arguments)]
pub fn attention_batch(
    tape: &mut GradTape,
    params: &ParamSet,
    x: NodeId,
    wq: &[ParamId],
    wk: &[ParamId],
    wv: &[ParamId],
    wo: ParamId,
    batch_len: usize,
    n_fields: usize,
) -> Result<NodeId> {
    let dim = tape.value(x).cols();
    let mut out = Matrix::zeros(batch_len * n_fields, dim);
    {
        let wqs: Vec<&Matrix> = wq.iter().map(|&id| params.value(id)).collect();
        let wks: Vec<&Matrix> = wk.iter().map(|&id| params.value(id)).collect();
        let wvs: Vec<&Matrix> = wv.iter().map(|&id| params.value(id)).collect();
        let wo_val = params.value(wo);
        for b in 0..batch_len {
            let block = super::embed::example_block(tape.value(x), b, n_fields);
            let heads: Vec<HeadWeights<'_>> = (0..wq.len())
                .map(|h| HeadWeights {
                    wq: wqs[h],
                    wk: wks[h],
                    wv: wvs[h],
                })
                .collect();
            let (y, _) = attention_forward(&block, &heads, wo_val)?;
            for r in 0..n_fields {
                out.row_mut(b * n_fields + r).copy_from_slice(y.row(r));
            }
        }
    }
    let (wq, wk, wv) = (wq.to_vec(), wk.to_vec(), wv.to_vec());
    Ok(tape.push(out, |out_id| {
        Box::new(AttnOp {
            x,
            wq,
            wk,
            wv,
            wo,
            out: out_id,
            n_fields,
        })
    }))
}

pub(crate) struct LayerNormOp {
    pub x: NodeId,
    pub gain: ParamId,
    pub bias: ParamId,
    pub out: NodeId,
    pub eps: f64,
}

impl TapeOp for LayerNormOp {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (nodes, g, adj, params) = ctx.open(self.out);
        let x = &nodes[self.x.0];
        let dim = x.cols();
        let d = dim as f64;
        let gain = params.value(self.gain).row(0).to_vec();
        let mut grad_gain = vec![0.0; dim];
        let mut grad_bias = vec![0.0; dim];

        for r in 0..x.rows() {
            let row = x.row(r);
            let gy = g.row(r);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv_sigma = 1.0 / (var + self.eps).sqrt();

            // u = gain ∘ gy; gx = (u - mean(u) - xhat * mean(u ∘ xhat)) / sigma
            let mut mean_u = 0.0;
            let mut mean_ux = 0.0;
            for c in 0..dim {
                let xhat = (row[c] - mean) * inv_sigma;
                let u = gain[c] * gy[c];
                mean_u += u;
                mean_ux += u * xhat;
                grad_gain[c] += gy[c] * xhat;
                grad_bias[c] += gy[c];
            }
            mean_u /= d;
            mean_ux /= d;

            let dst = adj[self.x.0].row_mut(r);
            for c in 0..dim {
                let xhat = (row[c] - mean) * inv_sigma;
                dst[c] += (gain[c] * gy[c] - mean_u - xhat * mean_ux) * inv_sigma;
            }
        }

        for c in 0..dim {
            params.grad_mut(self.gain).row_mut(0)[c] += grad_gain[c];
            params.grad_mut(self.bias).row_mut(0)[c] += grad_bias[c];
        }
    }
}

/// Row-wise layer norm over a stacked batch.
pub fn layer_norm_batch(
    tape: &mut GradTape,
    params: &ParamSet,
    x: NodeId,
    gain: ParamId,
    bias: ParamId,
    eps: f64,
) -> NodeId {
    let out = layer_norm_rows(
        tape.value(x),
        params.value(gain).row(0),
        params.value(bias).row(0),
        eps,
    );
    tape.push(out, |out_id| {
        Box::new(LayerNormOp {
            x,
            gain,
            bias,
            out: out_id,
            eps,
        })
    })
}
