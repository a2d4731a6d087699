//! Reverse-mode differentiation tape.
//!
//! A forward pass executes eagerly and records each differentiable operation
//! as a step holding the ids of its input/output value buffers (and any
//! parameters it touched). `backward` replays the steps in exact reverse
//! order, accumulating adjoints per node and gradients into the [`ParamSet`].
//!
//! Steps are recorded at layer granularity: heavy model blocks register one
//! step with a hand-derived vector-Jacobian product instead of thousands of
//! scalar ops. A few generic elementwise steps live here so small scalar
//! computations can be taped directly.

use super::matrix::Matrix;
use super::param::{ParamId, ParamSet};
use crate::error::{CtrError, Result};

/// Handle to a value buffer on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// One recorded differentiable operation.
pub trait TapeOp {
    /// Propagate the adjoint of this op's output into its inputs and params.
    fn backward(&self, ctx: &mut BackwardCtx<'_>);
}

/// View handed to each step during the reverse sweep.
pub struct BackwardCtx<'a> {
    nodes: &'a [Matrix],
    adjoints: &'a mut [Matrix],
    params: &'a mut ParamSet,
}

impl<'a> BackwardCtx<'a> {
    /// Splits the context at `out`: forward values, the (read-only) adjoint
    /// of `out`, mutable adjoints of every earlier node, and the parameters.
    ///
    /// Tape order guarantees all inputs of a step have ids below its output,
    /// so the lower slice is indexable by every input id.
    pub fn open(&mut self, out: NodeId) -> (&[Matrix], &Matrix, &mut [Matrix], &mut ParamSet) {
        let (lower, upper) = self.adjoints.split_at_mut(out.0);
        (self.nodes, &upper[0], lower, self.params)
    }
}

/// The ordered log of executed differentiable operations.
#[derive(Default)]
pub struct GradTape {
    nodes: Vec<Matrix>,
    steps: Vec<Box<dyn TapeOp>>,
}

impl std::fmt::Debug for GradTape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GradTape")
            .field("nodes", &self.nodes.len())
            .field("steps", &self.steps.len())
            .finish()
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded steps.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0]
    }

    /// Node without a step: a constant with respect to differentiation.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.alloc(value)
    }

    pub(crate) fn alloc(&mut self, value: Matrix) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(value);
        id
    }

    pub(crate) fn record(&mut self, op: Box<dyn TapeOp>) {
        self.steps.push(op);
    }

    /// Allocates the output node, then records the step built from its id.
    pub fn push(&mut self, value: Matrix, make: impl FnOnce(NodeId) -> Box<dyn TapeOp>) -> NodeId {
        let out = self.alloc(value);
        self.record(make(out));
        out
    }

    /// Copies a parameter value onto the tape as a leaf node; its adjoint
    /// flows into the parameter's gradient on backward.
    pub fn param_node(&mut self, params: &ParamSet, param: ParamId) -> NodeId {
        self.push(params.value(param).clone(), |out| {
            Box::new(ParamLeaf { out, param })
        })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.nodes[a.0].clone();
        v.add_assign(&self.nodes[b.0]);
        self.push(v, |out| Box::new(AddOp { a, b, out }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = &self.nodes[a.0];
        let bv = &self.nodes[b.0];
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        let v = Matrix::from_vec(av.rows(), av.cols(), data);
        self.push(v, |out| Box::new(MulOp { a, b, out }))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let mut v = self.nodes[x.0].clone();
        v.scale(c);
        self.push(v, |out| Box::new(ScaleOp { x, c, out }))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x.0].sum();
        self.push(Matrix::full(1, 1, s), |out| Box::new(SumAllOp { x, out }))
    }

    /// Same data, new dimensions. Element count must match.
    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let xv = &self.nodes[x.0];
        assert_eq!(xv.rows() * xv.cols(), rows * cols, "reshape numel mismatch");
        let v = Matrix::from_vec(rows, cols, xv.data().to_vec());
        self.push(v, |out| Box::new(ReshapeOp { x, out }))
    }

    /// Reverse sweep seeding the adjoint of `loss` (a 1x1 node) with
    /// `loss_seed`. Parameter gradients accumulate; call `zero_grads` between
    /// passes if accumulation across passes is not wanted.
    pub fn backward(&mut self, loss: NodeId, loss_seed: f64, params: &mut ParamSet) -> Result<()> {
        if self.steps.is_empty() {
            return Err(CtrError::Usage(
                "backward called without a recorded forward pass".into(),
            ));
        }
        let loss_val = &self.nodes[loss.0];
        if loss_val.shape() != (1, 1) {
            return Err(CtrError::Usage(format!(
                "backward seed node must be 1x1, got {}x{}",
                loss_val.rows(),
                loss_val.cols()
            )));
        }
        let mut adjoints: Vec<Matrix> = self
            .nodes
            .iter()
            .map(|n| Matrix::zeros(n.rows(), n.cols()))
            .collect();
        adjoints[loss.0].set(0, 0, loss_seed);
        let mut ctx = BackwardCtx {
            nodes: &self.nodes,
            adjoints: &mut adjoints,
            params,
        };
        for step in self.steps.iter().rev() {
            step.backward(&mut ctx);
        }
        Ok(())
    }
}

struct ParamLeaf {
    out: NodeId,
    param: ParamId,
}

impl TapeOp for ParamLeaf {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (_, g, _, params) = ctx.open(self.out);
        let g = g.clone();
        params.grad_mut(self.param).add_assign(&g);
    }
}

struct AddOp {
    a: NodeId,
    b: NodeId,
    out: NodeId,
}

impl TapeOp for AddOp {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (_, g, adj, _) = ctx.open(self.out);
        let g = g.clone();
        adj[self.a.0].add_assign(&g);
        adj[self.b.0].add_assign(&g);
    }
}

struct MulOp {
    a: NodeId,
    b: NodeId,
    out: NodeId,
}

impl TapeOp for MulOp {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (nodes, g, adj, _) = ctx.open(self.out);
        let av = &nodes[self.a.0];
        let bv = &nodes[self.b.0];
        for i in 0..g.data().len() {
            let gi = g.data()[i];
            adj[self.a.0].data_mut()[i] += gi * bv.data()[i];
            adj[self.b.0].data_mut()[i] += gi * av.data()[i];
        }
    }
}

struct ScaleOp {
    x: NodeId,
    c: f64,
    out: NodeId,
}

impl TapeOp for ScaleOp {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (_, g, adj, _) = ctx.open(self.out);
        let g = g.clone();
        adj[self.x.0].add_scaled(&g, self.c);
    }
}

struct SumAllOp {
    x: NodeId,
    out: NodeId,
}

impl TapeOp for SumAllOp {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (_, g, adj, _) = ctx.open(self.out);
        let gv = g.get(0, 0);
        for v in adj[self.x.0].data_mut() {
            *v += gv;
        }
    }
}

struct ReshapeOp {
    x: NodeId,
    out: NodeId,
}

impl TapeOp for ReshapeOp {
    fn backward(&self, ctx: &mut BackwardCtx<'_>) {
        let (_, g, adj, _) = ctx.open(self.out);
        let x_adj = adj[self.x.0].data_mut();
        for (xa, gi) in x_adj.iter_mut().zip(g.data()) {
            *xa += gi;
        }
    }
}
