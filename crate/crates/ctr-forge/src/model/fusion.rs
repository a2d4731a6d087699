//! Fusion output unit: one sigmoid over the summed branch contributions,
//! plus the training loss.

use crate::metrics::PROB_CLAMP;
use crate::numerics::{BackwardCtx, GradTape, Matrix, NodeId, ParamId, ParamSet, TapeOp};

/// Logits are clamped here before the sigmoid, keeping probabilities
/// strictly inside (0, 1) and the loss logs finite.
pub const LOGIT_CLAMP: f64 = 30.0;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Clamped-sigmoid probability for one fused logit.
pub fn squash(logit: f64) -> f64 {
    sigmoid(logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
}

/// The output unit on one example:
/// `sigmoid(w_fm * y_head + <w_cin, p_plus> + <w_dnn, x_dnn> + b)`.
pub fn fuse_predict(
    y_head: f64,
    p_plus: &[f64],
    x_dnn: &[f64],
    w_fm: f64,
    w_cin: &[f64],
    w_dnn: &[f64],
    b: f64,
) -> f64 {
    let mut logit = w_fm * y_head + b;
    logit += p_plus.iter().zip(w_cin).map(|(p, w)| p * w).sum::<f64>();
    logit += x_dnn.iter().zip(w_dnn).map(|(x, w)| x * w).sum::<f64>();
    squash(logit)
}

pub(crate) struct FusionOp {
    pub y_head: NodeId,
    pub p_plus: NodeId,
    pub x_dnn: NodeId,
    pub w_fm: ParamId,
    pub w_cin: ParamId,
    pub w_dnn: ParamId,
    pub b: ParamId,
    pub out: NodeId,
}

impl TapeOp for FusionOp {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (nodes, g, adj, params) = ctx.open(self.out);
        let g = g.clone();
        let batch = g.rows();
        let y_head = &nodes[self.y_head.0];
        let p_plus = &nodes[self.p_plus.0];
        let x_dnn = &nodes[self.x_dnn.0];
        let w_fm = params.value(self.w_fm).get(0, 0);
        let w_cin = params.value(self.w_cin).clone();
        let w_dnn = params.value(self.w_dnn).clone();

        let mut g_wfm = 0.0;
        let mut g_b = 0.0;
        let mut g_wcin = vec![0.0; w_cin.rows()];
        let mut g_wdnn = vec![0.0; w_dnn.rows()];
        for bi in 0..batch {
            let gb = g.get(bi, 0);
            if gb == 0.0 {
                continue;
            }
            g_wfm += gb * y_head.get(bi, 0);
            g_b += gb;
            adj[self.y_head.0].row_mut(bi)[0] += gb * w_fm;
            for i in 0..w_cin.rows() {
                g_wcin[i] += gb * p_plus.get(bi, i);
                adj[self.p_plus.0].row_mut(bi)[i] += gb * w_cin.get(i, 0);
            }
            for i in 0..w_dnn.rows() {
                g_wdnn[i] += gb * x_dnn.get(bi, i);
                adj[self.x_dnn.0].row_mut(bi)[i] += gb * w_dnn.get(i, 0);
            }
        }
        params.grad_mut(self.w_fm).data_mut()[0] += g_wfm;
        params.grad_mut(self.b).data_mut()[0] += g_b;
        for (i, v) in g_wcin.into_iter().enumerate() {
            params.grad_mut(self.w_cin).row_mut(i)[0] += v;
        }
        for (i, v) in g_wdnn.into_iter().enumerate() {
            params.grad_mut(self.w_dnn).row_mut(i)[0] += v;
        }
    }
}

/// Fused logits over a batch: B x 1.
#[allow(clippy::too_many_arguments)]
pub fn fusion_batch(
    tape: &mut GradTape,
    params: &ParamSet,
    y_head: NodeId,
    p_plus: NodeId,
    x_dnn: NodeId,
    w_fm: ParamId,
    w_cin: ParamId,
    w_dnn: ParamId,
    b: ParamId,
) -> NodeId {
    let batch = tape.value(y_head).rows();
    let w_fm_v = params.value(w_fm).get(0, 0);
    let b_v = params.value(b).get(0, 0);
    let mut logits = Matrix::zeros(batch, 1);
    for bi in 0..batch {
        let mut logit = w_fm_v * tape.value(y_head).get(bi, 0) + b_v;
        logit += tape
            .value(p_plus)
            .row(bi)
            .iter()
            .zip(params.value(w_cin).data())
            .map(|(p, w)| p * w)
            .sum::<f64>();
        logit += tape
            .value(x_dnn)
            .row(bi)
            .iter()
            .zip(params.value(w_dnn).data())
            .map(|(x, w)| x * w)
            .sum::<f64>();
        logits.set(bi, 0, logit);
    }
    tape.push(logits, |out| {
        Box::new(FusionOp {
            y_head,
            p_plus,
            x_dnn,
            w_fm,
            w_cin,
            w_dnn,
            b,
            out,
        })
    })
}

pub(crate) struct SigmoidOp {
    pub x: NodeId,
    pub out: NodeId,
}

impl TapeOp for SigmoidOp {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (nodes, g, adj, _) = ctx.open(self.out);
        let x = &nodes[self.x.0];
        let dst = adj[self.x.0].data_mut();
        for i in 0..dst.len() {
            let logit = x.data()[i];
            // Clamped logits contribute zero gradient by construction.
            if logit.abs() < LOGIT_CLAMP {
                let pv = sigmoid(logit);
                dst[i] += g.data()[i] * pv * (1.0 - pv);
            }
        }
    }
}

/// Elementwise clamped sigmoid.
pub fn sigmoid_batch(tape: &mut GradTape, x: NodeId) -> NodeId {
    let mut p = tape.value(x).clone();
    for v in p.data_mut() {
        *v = squash(*v);
    }
    tape.push(p, |out| Box::new(SigmoidOp { x, out }))
}

pub(crate) struct BceLossOp {
    pub probs: NodeId,
    pub labels: Vec<f64>,
    pub out: NodeId,
}

impl TapeOp for BceLossOp {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (nodes, g, adj, _) = ctx.open(self.out);
        let gv = g.get(0, 0);
        let probs = &nodes[self.probs.0];
        let inv_n = 1.0 / self.labels.len() as f64;
        let dst = adj[self.probs.0].data_mut();
        for (i, &y) in self.labels.iter().enumerate() {
            let p = probs.data()[i];
            // Inside the clamp window the derivative of -[y ln p + (1-y) ln(1-p)]
            // is (p - y) / (p (1 - p)); outside it the loss is flat in p.
            if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
                dst[i] += gv * inv_n * (p - y) / (p * (1.0 - p));
            }
        }
    }
}

/// Mean binary cross-entropy over the batch (probabilities clamped into
/// [1e-7, 1 - 1e-7] before the logs): a 1x1 node.
pub fn bce_loss_batch(tape: &mut GradTape, probs: NodeId, labels: &[f64]) -> NodeId {
    let p = tape.value(probs);
    debug_assert_eq!(p.rows(), labels.len());
    let mut acc = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let pv = p.data()[i].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        acc += y * pv.ln() + (1.0 - y) * (1.0 - pv).ln();
    }
    let loss = -acc / labels.len() as f64;
    let labels = labels.to_vec();
    tape.push(Matrix::full(1, 1, loss), |out| {
        Box::new(BceLossOp { probs, labels, out })
    })
}
