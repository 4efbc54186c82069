//! Tape-based reverse-mode automatic differentiation over 2-D `f64` tensors.
//!
//! A [`Graph`] records every operation in creation order, which is already a
//! topological order, so the backward pass is a single reverse sweep that
//! visits each node once and accumulates into its parents. Parameters are
//! read from a [`ParamStore`] and materialised at most once per graph.
//!
//! Binary element-wise ops broadcast a dimension of extent 1 against the
//! other operand (row vectors, column vectors and 1x1 scalars).

mod checkpoint;
mod gradcheck;
mod gru;
mod ops;
mod optim;
mod params;

use alloc::vec;
use alloc::vec::Vec;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, Coordinate, GradCheckOptions, GradCheckReport};
pub use gru::{gru_cell, GruParams};
pub use optim::{cosine_lr, sgd_step, OptimState, SgdConfig};
pub use params::{Grads, ParamId, ParamStore};

use crate::matrix::Matrix;
use crate::{Error, Result};

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows = 0,
    Cols = 1,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>, Axis),
    Slice { src: Var, axis: Axis, start: usize },
    Sum(Var),
    Mean(Var),
    SumAxis(Var, Axis),
    MeanAxis(Var, Axis),
    GatherRows(Var, Vec<usize>),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Recip(Var),
    Softplus(Var),
    Softmax(Var, Axis),
    LogSoftmax(Var, Axis),
    LayerNorm { src: Var, inv_std: Vec<f64> },
    Interp1d(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

static EMPTY_STORE: ParamStore = ParamStore::new();

/// One forward computation. Confined to a single thread; build a fresh graph
/// per sample.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl Default for Graph<'static> {
    fn default() -> Self {
        Self::detached()
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    /// A graph with no parameters; inputs are created with [`Graph::input`].
    pub fn detached() -> Graph<'static> {
        Graph::new(&EMPTY_STORE)
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), [1, 1]);
        m.as_slice()[0]
    }

    pub(crate) fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant: receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked (useful for probing inputs).
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// The node holding parameter `id`; created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let value = self.store.value(id).clone();
        let v = self.push(value, Op::Param, true);
        self.param_vars[id.index()] = Some(v);
        v
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_shape = self.shape(output);
        if out_shape != [1, 1] {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: out_shape,
                rhs: [1, 1],
            });
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(Matrix::scalar(1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { nodes: grads })
    }
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Parameter gradients aligned with the graph's store; unused parameters
    /// get zeros.
    pub fn param_grads(&self, graph: &Graph<'_>) -> Grads {
        let store = graph.store();
        let values = store
            .iter()
            .map(|(id, _, value)| match graph.param_vars[id.index()].and_then(|v| self.wrt(v)) {
                Some(g) => g.clone(),
                None => Matrix::zeros(value.rows(), value.cols()),
            })
            .collect();
        Grads::from_values(values)
    }
}
