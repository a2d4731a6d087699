//! Compressed interaction network.
//!
//! Layer k maps X^{k-1} (H_{k-1} x D) to X^k (H_k x D) through
//! `X^k[h] = sum_{i,j} W^{k,h}[i,j] * (X^{k-1}[i] ∘ X0[j])`, with ∘ the
//! elementwise product along the embedding axis. Each layer's filters are
//! stored flattened as one (H_k, H_{k-1}*N) matrix whose row h is W^{k,h}
//! in (i, j) -> i*N + j order, so the layer is a single matrix product
//! against the stacked pairwise products. Sum pooling collapses every row
//! to a scalar and concatenates across layers.

use crate::error::{CtrError, Result};
use crate::numerics::{BackwardCtx, GradTape, Matrix, NodeId, ParamId, ParamSet, TapeOp};

/// Stacked elementwise products z[(i*N + j), d] = xp[i,d] * x0[j,d].
fn pair_products(x_prev: &Matrix, x0: &Matrix) -> Matrix {
    let (h_prev, dim) = x_prev.shape();
    let n = x0.rows();
    let mut z = Matrix::zeros(h_prev * n, dim);
    for i in 0..h_prev {
        let xp_row = x_prev.row(i);
        for j in 0..n {
            let x0_row = x0.row(j);
            let dst = z.row_mut(i * n + j);
            for d in 0..dim {
                dst[d] = xp_row[d] * x0_row[d];
            }
        }
    }
    z
}

fn layer_forward(x_prev: &Matrix, x0: &Matrix, filter: &Matrix) -> Result<Matrix> {
    let z = pair_products(x_prev, x0);
    if filter.cols() != z.rows() {
        return Err(CtrError::Shape {
            op: "cin_layer",
            a_rows: filter.rows(),
            a_cols: filter.cols(),
            b_rows: z.rows(),
            b_cols: z.cols(),
        });
    }
    filter.matmul(&z)
}

/// All hidden layers for one example. `filters[k]` must be
/// (H_k, H_{k-1} * N) with H_0 = N.
pub fn cin_forward(x0: &Matrix, filters: &[&Matrix]) -> Result<Vec<Matrix>> {
    let mut outputs = Vec::with_capacity(filters.len());
    let mut prev = x0.clone();
    for filter in filters {
        let next = layer_forward(&prev, x0, filter)?;
        outputs.push(next.clone());
        prev = next;
    }
    Ok(outputs)
}

/// Sum pooling plus concatenation: p+ = [p^1 .. p^L] with p^k_i the row sums
/// of X^k. Length is the sum of the layer sizes.
pub fn cin_pool(layers: &[Matrix]) -> Vec<f64> {
    let mut p = Vec::with_capacity(layers.iter().map(|m| m.rows()).sum());
    for layer in layers {
        for r in 0..layer.rows() {
            p.push(layer.row(r).iter().sum());
        }
    }
    p
}

pub(crate) struct CinLayerOp {
    pub x_prev: NodeId,
    pub x0: NodeId,
    pub filter: ParamId,
    pub out: NodeId,
    pub n_fields: usize,
    pub h_prev: usize,
    pub h_out: usize,
}

impl TapeOp for CinLayerOp {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (nodes, g, adj, params) = ctx.open(self.out);
        let g = g.clone();
        let n = self.n_fields;
        let dim = nodes[self.x0.0].cols();
        let batch = g.rows() / self.h_out;
        let filter = params.value(self.filter).clone();

        let mut grad_filter = Matrix::zeros(filter.rows(), filter.cols());
        for b in 0..batch {
            let xp = super::embed::example_block(&nodes[self.x_prev.0], b, self.h_prev);
            let x0 = super::embed::example_block(&nodes[self.x0.0], b, n);
            let gb = super::embed::example_block(&g, b, self.h_out);

            let z = pair_products(&xp, &x0);
            // dL/dW += G * Z^T
            grad_filter.add_assign(&gb.matmul(&z.transpose()).expect("shapes fixed by forward"));
            // dL/dZ = W^T * G, then split back through the product.
            let gz = filter
                .transpose()
                .matmul(&gb)
                .expect("shapes fixed by forward");
            for i in 0..self.h_prev {
                for j in 0..n {
                    let gz_row = gz.row(i * n + j);
                    for d in 0..dim {
                        let gv = gz_row[d];
                        if gv == 0.0 {
                            continue;
                        }
                        let cur = adj[self.x_prev.0].get(b * self.h_prev + i, d);
                        adj[self.x_prev.0].set(b * self.h_prev + i, d, cur + gv * x0.get(j, d));
                        let cur0 = adj[self.x0.0].get(b * n + j, d);
                        adj[self.x0.0].set(b * n + j, d, cur0 + gv * xp.get(i, d));
                    }
                }
            }
        }
        params.grad_mut(self.filter).add_assign(&grad_filter);
    }
}

/// One CIN layer over a stacked batch: (B*H_prev) x D -> (B*H_out) x D.
pub fn cin_layer_batch(
    tape: &mut GradTape,
    params: &ParamSet,
    x_prev: NodeId,
    x0: NodeId,
    filter: ParamId,
    batch_len: usize,
    n_fields: usize,
) -> Result<NodeId> {
    let filter_val = params.value(filter);
    let h_out = filter_val.rows();
    let h_prev = filter_val.cols() / n_fields;
    let dim = tape.value(x0).cols();

    let mut out = Matrix::zeros(batch_len * h_out, dim);
    for b in 0..batch_len {
        let xp = super::embed::example_block(tape.value(x_prev), b, h_prev);
        let x0_block = super::embed::example_block(tape.value(x0), b, n_fields);
        let y = layer_forward(&xp, &x0_block, filter_val)?;
        for r in 0..h_out {
            out.row_mut(b * h_out + r).copy_from_slice(y.row(r));
        }
    }

    Ok(tape.push(out, |out_id| {
        Box::new(CinLayerOp {
            x_prev,
            x0,
            filter,
            out: out_id,
            n_fields,
            h_prev,
            h_out,
        })
    }))
}

pub(crate) struct CinPoolOp {
    pub layers: Vec<NodeId>,
    pub sizes: Vec<usize>,
    pub out: NodeId,
}

impl TapeOp for CinPoolOp {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (_, g, adj, _) = ctx.open(self.out);
        let g = g.clone();
        let batch = g.rows();
        for b in 0..batch {
            let mut offset = 0;
            for (layer, &h) in self.layers.iter().zip(&self.sizes) {
                for i in 0..h {
                    let gv = g.get(b, offset + i);
                    if gv == 0.0 {
                        continue;
                    }
                    let row = adj[layer.0].row_mut(b * h + i);
                    for v in row {
                        *v += gv;
                    }
                }
                offset += h;
            }
        }
    }
}

/// Pooled vector per example: B x (sum of layer sizes).
pub fn cin_pool_batch(
    tape: &mut GradTape,
    layers: &[NodeId],
    sizes: &[usize],
    batch_len: usize,
) -> NodeId {
    let total: usize = sizes.iter().sum();
    let mut p = Matrix::zeros(batch_len, total);
    for b in 0..batch_len {
        let mut offset = 0;
        for (&layer, &h) in layers.iter().zip(sizes) {
            let vals = tape.value(layer);
            for i in 0..h {
                p.set(b, offset + i, vals.row(b * h + i).iter().sum());
            }
            offset += h;
        }
    }
    let layers = layers.to_vec();
    let sizes = sizes.to_vec();
    tape.push(p, |out| Box::new(CinPoolOp { layers, sizes, out }))
}
