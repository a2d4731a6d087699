//! The network: an embedding lookup feeding an FM (or plain linear) head,
//! the compressed interaction network, and a multi-head attention + DNN
//! branch, fused through a single sigmoid output unit.

pub mod attention;
pub mod checkpoint;
pub mod cin;
pub mod dnn;
pub mod embed;
pub mod fm;
pub mod fusion;

mod gradcheck;

pub use gradcheck::{grad_check, tiny_batch, tiny_config};

use crate::data::Batch;
use crate::error::{CtrError, Result};
use crate::numerics::{GradTape, Matrix, NodeId, ParamId, ParamSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which first-order head feeds the fusion unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstOrderHead {
    /// Full factorization machine: linear plus pairwise latent interactions.
    Fm,
    /// Linear-only head (the plain-xDeepFM configuration).
    Lr,
}

/// Named ablation presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    /// The full model.
    None,
    /// LR head, no attention: plain xDeepFM.
    XDeepFm,
    /// FM head, no attention, CIN fusion weight frozen at zero: DeepFM-like.
    DeepFm,
    /// LR head with CIN and DNN fusion weights frozen at zero: first-order
    /// signal only.
    FirstOrder,
}

impl AblationMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AblationMode::None),
            "xdeepfm" => Ok(AblationMode::XDeepFm),
            "deepfm" => Ok(AblationMode::DeepFm),
            _ => Err(CtrError::Arg(format!(
                "unknown ablation `{s}` (expected none, xdeepfm, or deepfm)"
            ))),
        }
    }
}

/// Structure of the network. Dense features are embedded like categorical
/// ones (a value-scaled vector per field), so every branch sees all
/// `n_cat + n_dense` fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_cat_fields: usize,
    pub n_dense_fields: usize,
    pub embed_dim: usize,
    pub cin_layers: Vec<usize>,
    pub num_heads: usize,
    pub dnn_layers: Vec<usize>,
    pub use_attention: bool,
    pub first_order_head: FirstOrderHead,
    /// Keep the CIN fusion weight at zero (branch computed but inert).
    pub freeze_cin_weight: bool,
    /// Keep the DNN fusion weight at zero.
    pub freeze_dnn_weight: bool,
    /// Parameter-initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_cat_fields: 26,
            n_dense_fields: 13,
            embed_dim: 8,
            cin_layers: vec![128, 128],
            num_heads: 2,
            dnn_layers: vec![256, 128],
            use_attention: true,
            first_order_head: FirstOrderHead::Fm,
            freeze_cin_weight: false,
            freeze_dnn_weight: false,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn n_fields(&self) -> usize {
        self.n_cat_fields + self.n_dense_fields
    }

    /// Per-head key width; heads split the embedding dimension evenly.
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn apply_ablation(&mut self, mode: AblationMode) {
        match mode {
            AblationMode::None => {
                self.use_attention = true;
                self.first_order_head = FirstOrderHead::Fm;
                self.freeze_cin_weight = false;
                self.freeze_dnn_weight = false;
            }
            AblationMode::XDeepFm => {
                self.use_attention = false;
                self.first_order_head = FirstOrderHead::Lr;
                self.freeze_cin_weight = false;
                self.freeze_dnn_weight = false;
            }
            AblationMode::DeepFm => {
                self.use_attention = false;
                self.first_order_head = FirstOrderHead::Fm;
                self.freeze_cin_weight = true;
                self.freeze_dnn_weight = false;
            }
            AblationMode::FirstOrder => {
                self.use_attention = false;
                self.first_order_head = FirstOrderHead::Lr;
                self.freeze_cin_weight = true;
                self.freeze_dnn_weight = true;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fields() == 0 {
            return Err(CtrError::Arg("model needs at least one field".into()));
        }
        if self.embed_dim == 0 {
            return Err(CtrError::Arg("embed_dim must be positive".into()));
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(CtrError::Arg(format!(
                "num_heads ({}) must divide embed_dim ({})",
                self.num_heads, self.embed_dim
            )));
        }
        if self.cin_layers.is_empty() || self.cin_layers.contains(&0) {
            return Err(CtrError::Arg("cin_layers must be positive".into()));
        }
        if self.dnn_layers.is_empty() || self.dnn_layers.contains(&0) {
            return Err(CtrError::Arg("dnn_layers must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct AttnIds {
    pub wq: Vec<ParamId>,
    pub wk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    pub wo: ParamId,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct ParamIds {
    pub emb_cat: Vec<ParamId>,
    pub emb_dense: Vec<ParamId>,
    pub fm_w0: ParamId,
    pub fm_w_cat: Vec<ParamId>,
    pub fm_w_dense: Vec<ParamId>,
    pub cin: Vec<ParamId>,
    pub attn: Option<AttnIds>,
    pub dnn: Vec<(ParamId, ParamId)>,
    pub fuse_fm: ParamId,
    pub fuse_cin: ParamId,
    pub fuse_dnn: ParamId,
    pub fuse_b: ParamId,
}

/// Every learnable tensor of the model, plus the config that shaped them.
#[derive(Debug)]
pub struct ModelParams {
    pub set: ParamSet,
    pub config: ModelConfig,
    /// Bucket count per categorical field at init time; embedding tables
    /// have `bucket + 1` rows (row 0 is the trainable OOV row).
    pub cat_vocab_sizes: Vec<usize>,
    pub(crate) ids: ParamIds,
}

/// Initialization: embeddings and projection/DNN weights from
/// Normal(0, 0.01^2); biases, w0, first-order weights, and fusion weights
/// at zero (making the initial prediction exactly 0.5); layer-norm gain
/// at one.
const INIT_STD: f64 = 0.01;

impl ModelParams {
    pub fn init(config: &ModelConfig, cat_vocab_sizes: &[usize]) -> Result<ModelParams> {
        config.validate()?;
        if cat_vocab_sizes.len() != config.n_cat_fields {
            return Err(CtrError::Arg(format!(
                "got {} vocab sizes for {} categorical fields",
                cat_vocab_sizes.len(),
                config.n_cat_fields
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut set = ParamSet::new();
        let d = config.embed_dim;
        let n = config.n_fields();

        let emb_cat: Vec<ParamId> = cat_vocab_sizes
            .iter()
            .enumerate()
            .map(|(f, &v)| {
                set.register(
                    format!("embed.c{f}"),
                    Matrix::randn(v + 1, d, INIT_STD, &mut rng),
                )
            })
            .collect();
        let emb_dense: Vec<ParamId> = (0..config.n_dense_fields)
            .map(|f| {
                set.register(
                    format!("embed.d{f}"),
                    Matrix::randn(1, d, INIT_STD, &mut rng),
                )
            })
            .collect();

        let fm_w0 = set.register("fm.w0", Matrix::zeros(1, 1));
        let fm_w_cat: Vec<ParamId> = cat_vocab_sizes
            .iter()
            .enumerate()
            .map(|(f, &v)| set.register(format!("fm.w.c{f}"), Matrix::zeros(v + 1, 1)))
            .collect();
        let fm_w_dense: Vec<ParamId> = (0..config.n_dense_fields)
            .map(|f| set.register(format!("fm.w.d{f}"), Matrix::zeros(1, 1)))
            .collect();

        let mut cin = Vec::with_capacity(config.cin_layers.len());
        let mut h_prev = n;
        for (k, &h) in config.cin_layers.iter().enumerate() {
            cin.push(set.register(
                format!("cin.l{k}"),
                Matrix::randn(h, h_prev * n, INIT_STD, &mut rng),
            ));
            h_prev = h;
        }

        let attn = if config.use_attention {
            let d_k = config.head_dim();
            let mut wq = Vec::new();
            let mut wk = Vec::new();
            let mut wv = Vec::new();
            for h in 0..config.num_heads {
                wq.push(set.register(
                    format!("attn.h{h}.wq"),
                    Matrix::randn(d, d_k, INIT_STD, &mut rng),
                ));
                wk.push(set.register(
                    format!("attn.h{h}.wk"),
                    Matrix::randn(d, d_k, INIT_STD, &mut rng),
                ));
                wv.push(set.register(
                    format!("attn.h{h}.wv"),
                    Matrix::randn(d, d_k, INIT_STD, &mut rng),
                ));
            }
            let wo = set.register(
                "attn.wo",
                Matrix::randn(config.num_heads * d_k, d, INIT_STD, &mut rng),
            );
            let ln_gain = set.register("ln.gain", Matrix::full(1, d, 1.0));
            let ln_bias = set.register("ln.bias", Matrix::zeros(1, d));
            Some(AttnIds {
                wq,
                wk,
                wv,
                wo,
                ln_gain,
                ln_bias,
            })
        } else {
            None
        };

        let mut dnn = Vec::with_capacity(config.dnn_layers.len());
        let mut width = n * d;
        for (l, &next) in config.dnn_layers.iter().enumerate() {
            let w = set.register(
                format!("dnn.l{l}.w"),
                Matrix::randn(width, next, INIT_STD, &mut rng),
            );
            let b = set.register(format!("dnn.l{l}.b"), Matrix::zeros(1, next));
            dnn.push((w, b));
            width = next;
        }

        let sum_h: usize = config.cin_layers.iter().sum();
        let fuse_fm = set.register("fusion.w_fm", Matrix::zeros(1, 1));
        let fuse_cin = set.register("fusion.w_cin", Matrix::zeros(sum_h, 1));
        let fuse_dnn = set.register(
            "fusion.w_dnn",
            Matrix::zeros(*config.dnn_layers.last().unwrap(), 1),
        );
        let fuse_b = set.register("fusion.b", Matrix::zeros(1, 1));

        Ok(ModelParams {
            set,
            config: config.clone(),
            cat_vocab_sizes: cat_vocab_sizes.to_vec(),
            ids: ParamIds {
                emb_cat,
                emb_dense,
                fm_w0,
                fm_w_cat,
                fm_w_dense,
                cin,
                attn,
                dnn,
                fuse_fm,
                fuse_cin,
                fuse_dnn,
                fuse_b,
            },
        })
    }

    /// Parameter ids the optimizer may update (frozen fusion weights are
    /// skipped, which keeps them at their zero initialization).
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.set
            .ids()
            .filter(|&id| {
                !(self.config.freeze_cin_weight && id == self.ids.fuse_cin
                    || self.config.freeze_dnn_weight && id == self.ids.fuse_dnn)
            })
            .collect()
    }

    /// The tensor names this config should own, in registration order. The
    /// census test checks the live set against this list: every learnable
    /// symbol appears exactly once.
    pub fn expected_names(config: &ModelConfig, cat_vocab_sizes: &[usize]) -> Vec<String> {
        let mut names = Vec::new();
        for f in 0..cat_vocab_sizes.len() {
            names.push(format!("embed.c{f}"));
        }
        for f in 0..config.n_dense_fields {
            names.push(format!("embed.d{f}"));
        }
        names.push("fm.w0".into());
        for f in 0..cat_vocab_sizes.len() {
            names.push(format!("fm.w.c{f}"));
        }
        for f in 0..config.n_dense_fields {
            names.push(format!("fm.w.d{f}"));
        }
        for k in 0..config.cin_layers.len() {
            names.push(format!("cin.l{k}"));
        }
        if config.use_attention {
            for h in 0..config.num_heads {
                names.push(format!("attn.h{h}.wq"));
                names.push(format!("attn.h{h}.wk"));
                names.push(format!("attn.h{h}.wv"));
            }
            names.push("attn.wo".into());
            names.push("ln.gain".into());
            names.push("ln.bias".into());
        }
        for l in 0..config.dnn_layers.len() {
            names.push(format!("dnn.l{l}.w"));
            names.push(format!("dnn.l{l}.b"));
        }
        names.push("fusion.w_fm".into());
        names.push("fusion.w_cin".into());
        names.push("fusion.w_dnn".into());
        names.push("fusion.b".into());
        names
    }
}

/// Node handles into one recorded forward pass, plus the tape itself.
#[derive(Debug)]
pub struct ForwardTrace {
    pub tape: GradTape,
    /// Stacked (B*N) x D embedding matrix.
    pub x0: NodeId,
    /// Per-layer CIN outputs, stacked (B*H_k) x D.
    pub cin_layers: Vec<NodeId>,
    /// Pooled CIN vector per example, B x sum(H_k).
    pub p_plus: NodeId,
    /// Post-residual, post-layer-norm attention output (when enabled).
    pub attn_out: Option<NodeId>,
    /// Output of each DNN layer, B x width.
    pub dnn_activations: Vec<NodeId>,
    /// First-order branch value per example, B x 1.
    pub y_head: NodeId,
    /// Fused logits, B x 1.
    pub logits: NodeId,
    /// Final probabilities, B x 1, strictly inside (0, 1).
    pub probs: NodeId,
}

impl ForwardTrace {
    pub fn probabilities(&self) -> Vec<f64> {
        self.tape.value(self.probs).data().to_vec()
    }

    /// One example's N x D embedding block.
    pub fn x0_of(&self, example: usize, n_fields: usize) -> Matrix {
        embed::example_block(self.tape.value(self.x0), example, n_fields)
    }
}

/// Runs the composed network over a batch, recording every step on a fresh
/// tape. Returns per-example probabilities plus the trace.
pub fn forward(batch: &Batch, params: &ModelParams) -> Result<(Vec<f64>, ForwardTrace)> {
    let cfg = &params.config;
    if batch.schema.n_cat != cfg.n_cat_fields || batch.schema.n_dense != cfg.n_dense_fields {
        return Err(CtrError::Arg(format!(
            "batch schema ({} cat, {} dense) does not match model ({}, {})",
            batch.schema.n_cat, batch.schema.n_dense, cfg.n_cat_fields, cfg.n_dense_fields
        )));
    }
    let n = cfg.n_fields();
    let ids = &params.ids;
    let mut tape = GradTape::new();

    let x0 = embed::embed_batch(&mut tape, &params.set, &ids.emb_cat, &ids.emb_dense, batch)?;

    // First-order branch.
    let linear = fm::fm_linear_batch(
        &mut tape,
        &params.set,
        ids.fm_w0,
        &ids.fm_w_cat,
        &ids.fm_w_dense,
        batch,
    );
    let y_head = match cfg.first_order_head {
        FirstOrderHead::Fm => {
            let pairwise = fm::fm_pairwise_batch(&mut tape, x0, batch.len, n);
            tape.add(linear, pairwise)
        }
        FirstOrderHead::Lr => linear,
    };

    // CIN branch.
    let mut cin_nodes = Vec::with_capacity(ids.cin.len());
    let mut prev = x0;
    for &filter in &ids.cin {
        let next = cin::cin_layer_batch(&mut tape, &params.set, prev, x0, filter, batch.len, n)?;
        cin_nodes.push(next);
        prev = next;
    }
    let p_plus = cin::cin_pool_batch(&mut tape, &cin_nodes, &cfg.cin_layers, batch.len);

    // Deep branch, over the attention output when enabled, else over the
    // raw embeddings.
    let (dnn_src, attn_out) = if cfg.use_attention {
        let attn = ids.attn.as_ref().expect("attention params exist");
        let raw = attention::attention_batch(
            &mut tape,
            &params.set,
            x0,
            &attn.wq,
            &attn.wk,
            &attn.wv,
            attn.wo,
            batch.len,
            n,
        )?;
        let residual = tape.add(raw, x0);
        let normed = attention::layer_norm_batch(
            &mut tape,
            &params.set,
            residual,
            attn.ln_gain,
            attn.ln_bias,
            attention::LN_EPS,
        );
        (normed, Some(normed))
    } else {
        (x0, None)
    };
    let flat = tape.reshape(dnn_src, batch.len, n * cfg.embed_dim);
    let (x_dnn, dnn_activations) = dnn::dnn_batch(&mut tape, &params.set, flat, &ids.dnn);

    let logits = fusion::fusion_batch(
        &mut tape,
        &params.set,
        y_head,
        p_plus,
        x_dnn,
        ids.fuse_fm,
        ids.fuse_cin,
        ids.fuse_dnn,
        ids.fuse_b,
    );
    let probs = fusion::sigmoid_batch(&mut tape, logits);

    let trace = ForwardTrace {
        tape,
        x0,
        cin_layers: cin_nodes,
        p_plus,
        attn_out,
        dnn_activations,
        y_head,
        logits,
        probs,
    };
    Ok((trace.probabilities(), trace))
}

/// Forward pass plus the mean-BCE loss node against the batch labels.
pub fn forward_loss(batch: &Batch, params: &ModelParams) -> Result<(NodeId, ForwardTrace)> {
    let (_, mut trace) = forward(batch, params)?;
    let loss = fusion::bce_loss_batch(&mut trace.tape, trace.probs, &batch.labels);
    Ok((loss, trace))
}

#[cfg(test)]
mod tests;
