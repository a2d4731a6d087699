//! Dense layers with ReLU; the deep branch consuming the (flattened)
//! attention output. Every layer, including the last, applies ReLU; the
//! fusion unit supplies the only sigmoid.

use crate::numerics::{BackwardCtx, GradTape, Matrix, NodeId, ParamId, ParamSet, TapeOp};

pub(crate) struct AffineOp {
    pub x: NodeId,
    pub w: ParamId,
    pub b: ParamId,
    pub out: NodeId,
}

impl TapeOp for AffineOp {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (nodes, g, adj, params) = ctx.open(self.out);
        let x = &nodes[self.x.0];
        let g = g.clone();

        let grad_w = x.transpose().matmul(&g).expect("shape fixed by forward");
        params.grad_mut(self.w).add_assign(&grad_w);
        {
            let grad_b = params.grad_mut(self.b);
            for r in 0..g.rows() {
                for (dst, gv) in grad_b.row_mut(0).iter_mut().zip(g.row(r)) {
                    *dst += gv;
                }
            }
        }
        let gx = g
            .matmul(&params.value(self.w).transpose())
            .expect("shape fixed by forward");
        adj[self.x.0].add_assign(&gx);
    }
}

/// `x (B x in) * W (in x out) + bias`, bias broadcast over rows.
pub fn affine(tape: &mut GradTape, params: &ParamSet, x: NodeId, w: ParamId, b: ParamId) -> NodeId {
    let mut y = tape
        .value(x)
        .matmul(params.value(w))
        .expect("dnn layer width mismatch");
    let bias = params.value(b);
    for r in 0..y.rows() {
        for (v, &bv) in y.row_mut(r).iter_mut().zip(bias.row(0)) {
            *v += bv;
        }
    }
    tape.push(y, |out| Box::new(AffineOp { x, w, b, out }))
}

pub(crate) struct ReluOp {
    pub x: NodeId,
    pub out: NodeId,
}

impl TapeOp for ReluOp {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (nodes, g, adj, _) = ctx.open(self.out);
        let x = &nodes[self.x.0];
        let dst = adj[self.x.0].data_mut();
        for i in 0..dst.len() {
            if x.data()[i] > 0.0 {
                dst[i] += g.data()[i];
            }
        }
    }
}

pub fn relu(tape: &mut GradTape, x: NodeId) -> NodeId {
    let mut y = tape.value(x).clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    tape.push(y, |out| Box::new(ReluOp { x, out }))
}

/// The full deep branch on the tape: alternating affine + ReLU.
pub fn dnn_batch(
    tape: &mut GradTape,
    params: &ParamSet,
    input: NodeId,
    layers: &[(ParamId, ParamId)],
) -> (NodeId, Vec<NodeId>) {
    let mut activations = Vec::with_capacity(layers.len());
    let mut cur = input;
    for &(w, b) in layers {
        let pre = affine(tape, params, cur, w, b);
        cur = relu(tape, pre);
        activations.push(cur);
    }
    (cur, activations)
}

/// Tape-free per-example evaluation; `layers` are (W, bias-row) pairs.
pub fn dnn_forward(input: &[f64], layers: &[(&Matrix, &Matrix)]) -> Vec<f64> {
    let mut cur = input.to_vec();
    for (w, b) in layers {
        let mut next = b.row(0).to_vec();
        for (i, &xi) in cur.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (j, nv) in next.iter_mut().enumerate() {
                *nv += xi * w.get(i, j);
            }
        }
        for v in &mut next {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        cur = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let w = Matrix::randn(4, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let b = Matrix::zeros(1, 3);
        let out = dnn_forward(&[0.0; 4], &[(&w, &b)]);
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn identity_layer_passes_positive_input_through() {
        let w = Matrix::identity(3);
        let b = Matrix::zeros(1, 3);
        let out = dnn_forward(&[1.0, 2.5, 0.5], &[(&w, &b)]);
        assert_eq!(out, vec![1.0, 2.5, 0.5]);
    }

    #[test]
    fn matches_explicit_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..50 {
            let d_in = rng.gen_range(1..6);
            let d_h = rng.gen_range(1..6);
            let d_out = rng.gen_range(1..6);
            let w1 = Matrix::randn(d_in, d_h, 1.0, &mut rng);
            let b1 = Matrix::randn(1, d_h, 1.0, &mut rng);
            let w2 = Matrix::randn(d_h, d_out, 1.0, &mut rng);
            let b2 = Matrix::randn(1, d_out, 1.0, &mut rng);
            let input: Vec<f64> = (0..d_in).map(|_| rng.gen_range(-2.0..2.0)).collect();

            let got = dnn_forward(&input, &[(&w1, &b1), (&w2, &b2)]);

            // Explicit transcription.
            let mut h = vec![0.0; d_h];
            for j in 0..d_h {
                let mut acc = b1.get(0, j);
                for i in 0..d_in {
                    acc += input[i] * w1.get(i, j);
                }
                h[j] = acc.max(0.0);
            }
            let mut y = vec![0.0; d_out];
            for j in 0..d_out {
                let mut acc = b2.get(0, j);
                for (i, &hv) in h.iter().enumerate() {
                    acc += hv * w2.get(i, j);
                }
                y[j] = acc.max(0.0);
            }

            for (a, b) in got.iter().zip(&y) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
