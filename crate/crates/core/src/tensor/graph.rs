//! Wengert-list reverse-mode autodiff.
//!
//! A [`Graph`] is an arena of immutable nodes; a [`Tensor`] is a handle into
//! it. Every operation computes its value eagerly and records an [`Op`] so the
//! list stays topologically ordered. `backward` walks the list once in
//! reverse, building each vector-Jacobian product *out of the same recorded
//! primitives*: the returned gradients are themselves differentiable tensors,
//! which is what lets an attack differentiate a gradient-matching loss with
//! respect to a dummy input (gradient-of-gradient).

use std::cell::RefCell;
use std::rc::Rc;

use super::kernels::ConvGeom;
use super::ops;
use crate::error::{Error, Result};

/// Recorded operation. Payloads are input node ids plus static attributes.
#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Exp(usize),
    Ln(usize),
    Recip(usize),
    Sigmoid(usize),
    Softplus(usize),
    Tanh(usize),
    /// Hard step forward, ATan surrogate backward.
    SpikeStep { v: usize, alpha: f64 },
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    SumAll(usize),
    /// Sum over axis 0 of a matrix: [m,n] -> [n].
    SumRows(usize),
    /// Tile a vector [n] into [rows,n].
    BroadcastRow { v: usize },
    /// Fill a buffer of the output shape with a scalar's value.
    FillLike { s: usize },
    Im2Col { x: usize, geom: ConvGeom },
    Col2Im { cols: usize, geom: ConvGeom },
    ColsToNchw { cols: usize, b: usize, f: usize, oh: usize, ow: usize },
    NchwToCols { x: usize, b: usize, f: usize, oh: usize, ow: usize },
    AvgPool2(usize),
    UpsamplePool2(usize),
    /// Select block `index` along the outermost axis.
    SliceOuter { x: usize, index: usize },
    /// Embed into a zero tensor of `outer` blocks at position `index`.
    PadOuter { x: usize, index: usize },
}

impl Op {
    fn inputs(&self) -> [Option<usize>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => [Some(a), Some(b)],
            Scale(a, _) | Shift(a) | Exp(a) | Ln(a) | Recip(a) | Sigmoid(a)
            | Softplus(a) | Tanh(a) | Transpose(a) | Reshape(a) | SumAll(a) | SumRows(a)
            | AvgPool2(a) | UpsamplePool2(a) => [Some(a), None],
            SpikeStep { v, .. } => [Some(v), None],
            BroadcastRow { v, .. } => [Some(v), None],
            FillLike { s } => [Some(s), None],
            Im2Col { x, .. } | NchwToCols { x, .. } | SliceOuter { x, .. }
            | PadOuter { x, .. } => [Some(x), None],
            Col2Im { cols, .. } | ColsToNchw { cols, .. } => [Some(cols), None],
        }
    }
}

pub(crate) struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
    pub data: Rc<Vec<f64>>,
    pub requires_grad: bool,
    /// Populated for targets by the most recent backward pass (replaced, never
    /// accumulated across passes).
    pub grad: Option<Rc<Vec<f64>>>,
}

/// Shared, growable tape. Cloning is a cheap handle copy.
#[derive(Clone)]
pub struct Graph {
    pub(crate) nodes: Rc<RefCell<Vec<Node>>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Rc::new(RefCell::new(Vec::new())) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, op: Op, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        self.push_rc(op, shape, Rc::new(data), requires_grad)
    }

    pub(crate) fn push_rc(&self, op: Op, shape: Vec<usize>, data: Rc<Vec<f64>>, requires_grad: bool) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { op, shape, data, requires_grad, grad: None });
        Tensor { graph: self.clone(), id }
    }

    /// New differentiable or constant leaf.
    pub fn leaf(&self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        self.leaf_rc(Rc::new(data), shape, requires_grad)
    }

    /// Leaf sharing an existing buffer (no copy).
    pub fn leaf_rc(&self, data: Rc<Vec<f64>>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::dimension(format!(
                "leaf shape {:?} does not describe a buffer of {} values",
                shape,
                data.len()
            )));
        }
        Ok(self.push_rc(Op::Leaf, shape.to_vec(), data, requires_grad))
    }

    pub fn constant(&self, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        self.leaf(data, shape, false)
    }

    pub fn scalar(&self, value: f64) -> Tensor {
        self.push(Op::Leaf, vec![1], vec![value], false)
    }

    fn same_graph(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }
}

/// Handle to one node of a [`Graph`].
#[derive(Clone)]
pub struct Tensor {
    pub(crate) graph: Graph,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let nodes = self.graph.nodes.borrow();
        let node = &nodes[self.id];
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &node.shape)
            .field("requires_grad", &node.requires_grad)
            .finish()
    }
}

impl Tensor {
    /// The graph this tensor lives on.
    pub fn graph(&self) -> Graph {
        self.graph.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.graph.nodes.borrow()[self.id].data.len()
    }

    pub fn data(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.graph.nodes.borrow()[self.id].data)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.graph.nodes.borrow()[self.id].data.as_ref().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let nodes = self.graph.nodes.borrow();
        let node = &nodes[self.id];
        assert_eq!(node.data.len(), 1, "item() on non-scalar tensor");
        node.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Gradient buffer left by the most recent backward pass targeting this
    /// tensor, if any.
    pub fn grad(&self) -> Option<Rc<Vec<f64>>> {
        self.graph.nodes.borrow()[self.id].grad.clone()
    }

    pub(crate) fn expect_same_graph(&self, other: &Tensor) -> Result<()> {
        if self.graph.same_graph(&other.graph) {
            Ok(())
        } else {
            Err(Error::usage("tensors belong to different graphs"))
        }
    }

    /// Reverse pass from this scalar, producing gradients for every
    /// `requires_grad` leaf in the graph.
    pub fn backward(&self) -> Result<Gradients> {
        let leaves: Vec<Tensor> = {
            let nodes = self.graph.nodes.borrow();
            (0..nodes.len())
                .filter(|&id| matches!(nodes[id].op, Op::Leaf) && nodes[id].requires_grad)
                .map(|id| Tensor { graph: self.graph.clone(), id })
                .collect()
        };
        self.backward_wrt(&leaves)
    }

    /// Reverse pass restricted to the given targets. Paths that cannot reach a
    /// target are skipped entirely, which keeps second-order passes cheap.
    ///
    /// The produced gradient tensors are recorded on the same graph, so they
    /// can be used to build further differentiable expressions.
    pub fn backward_wrt(&self, targets: &[Tensor]) -> Result<Gradients> {
        if self.numel() != 1 {
            return Err(Error::usage("backward root must be a scalar tensor"));
        }
        for t in targets {
            self.expect_same_graph(t)?;
        }

        let root = self.id;
        let frontier = root + 1;

        // needs[i]: node i lies on a path from the root down to some target.
        let mut needs = vec![false; frontier];
        let mut rg = vec![false; frontier];
        {
            let nodes = self.graph.nodes.borrow();
            for t in targets {
                if t.id < frontier {
                    needs[t.id] = true;
                }
            }
            for id in 0..frontier {
                rg[id] = nodes[id].requires_grad;
                if !needs[id] {
                    needs[id] = nodes[id]
                        .op
                        .inputs()
                        .into_iter()
                        .flatten()
                        .any(|inp| needs[inp]);
                }
            }
        }

        let target_set: Vec<usize> = targets.iter().map(|t| t.id).collect();
        let mut slot: Vec<Option<Tensor>> = vec![None; frontier];
        slot[root] = Some(self.graph.scalar(1.0));

        for id in (0..frontier).rev() {
            if !needs[id] || !rg[id] {
                continue;
            }
            let Some(gy) = slot[id].clone() else { continue };
            let op = self.graph.nodes.borrow()[id].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            let contributions = vjp(&self.graph, id, &op, &gy)?;
            for (inp, gin) in contributions {
                if !needs[inp] || !rg[inp] {
                    continue;
                }
                slot[inp] = Some(match slot[inp].take() {
                    None => gin,
                    Some(prev) => prev.add(&gin)?,
                });
            }
        }

        // Targets untouched by the root read as zero, not as absent.
        let mut out = Gradients { graph: self.graph.clone(), slot: Vec::new() };
        for (&tid, t) in target_set.iter().zip(targets) {
            let g = match slot[tid].clone() {
                Some(g) => g,
                None => {
                    let shape = t.shape();
                    let n: usize = shape.iter().product();
                    self.graph.constant(vec![0.0; n], &shape)?
                }
            };
            self.graph.nodes.borrow_mut()[tid].grad = Some(g.data());
            out.slot.push((tid, g.id));
        }
        Ok(out)
    }
}

/// Gradients returned by a backward pass, addressable by target tensor.
pub struct Gradients {
    graph: Graph,
    slot: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `t`.
    pub fn wrt(&self, t: &Tensor) -> Result<Tensor> {
        self.slot
            .iter()
            .find(|(tid, _)| *tid == t.id)
            .map(|&(_, gid)| Tensor { graph: self.graph.clone(), id: gid })
            .ok_or_else(|| Error::usage("tensor was not a target of this backward pass"))
    }
}

/// Per-op vector-Jacobian products, expressed with recorded primitives so the
/// results stay differentiable. Returns (input id, gradient) pairs.
fn vjp(graph: &Graph, out_id: usize, op: &Op, gy: &Tensor) -> Result<Vec<(usize, Tensor)>> {
    let t = |id: usize| Tensor { graph: graph.clone(), id };
    let out = t(out_id);
    let pairs = match *op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(a, gy.clone()), (b, gy.clone())],
        Op::Sub(a, b) => vec![(a, gy.clone()), (b, gy.scale(-1.0))],
        Op::Mul(a, b) => vec![(a, gy.mul(&t(b))?), (b, gy.mul(&t(a))?)],
        Op::Scale(a, c) => vec![(a, gy.scale(c))],
        Op::Shift(a) => vec![(a, gy.clone())],
        Op::Exp(a) => vec![(a, gy.mul(&out)?)],
        Op::Ln(a) => vec![(a, gy.mul(&t(a).recip())?)],
        // d(1/x)/dx = -1/x^2 = -out^2
        Op::Recip(a) => vec![(a, gy.mul(&out.mul(&out)?.scale(-1.0))?)],
        // s' = s(1-s)
        Op::Sigmoid(a) => {
            let one_minus = out.scale(-1.0).shift(1.0);
            vec![(a, gy.mul(&out.mul(&one_minus)?)?)]
        }
        Op::Softplus(a) => vec![(a, gy.mul(&t(a).sigmoid())?)],
        // d tanh = 1 - out^2
        Op::Tanh(a) => {
            let one_minus_sq = out.mul(&out)?.scale(-1.0).shift(1.0);
            vec![(a, gy.mul(&one_minus_sq)?)]
        }
        // Surrogate factor alpha / (2 (1 + ((pi/2) alpha v)^2)); itself smooth,
        // so second-order passes differentiate it rather than the step.
        Op::SpikeStep { v, alpha } => {
            let scaled = t(v).scale(std::f64::consts::FRAC_PI_2 * alpha);
            let denom = scaled.mul(&scaled)?.shift(1.0);
            let factor = denom.recip().scale(alpha / 2.0);
            vec![(v, gy.mul(&factor)?)]
        }
        Op::MatMul(a, b) => {
            let ga = gy.matmul(&t(b).transpose()?)?;
            let gb = t(a).transpose()?.matmul(gy)?;
            vec![(a, ga), (b, gb)]
        }
        Op::Transpose(a) => vec![(a, gy.transpose()?)],
        Op::Reshape(a) => {
            let shape = t(a).shape();
            vec![(a, gy.reshape(&shape)?)]
        }
        Op::SumAll(a) => {
            let shape = t(a).shape();
            vec![(a, ops::fill_like(gy, &shape)?)]
        }
        Op::SumRows(a) => {
            let rows = t(a).shape()[0];
            vec![(a, ops::broadcast_row(gy, rows)?)]
        }
        Op::BroadcastRow { v } => vec![(v, gy.sum_rows()?)],
        Op::FillLike { s } => vec![(s, gy.sum_all())],
        Op::Im2Col { x, geom } => vec![(x, ops::col2im_op(gy, geom)?)],
        Op::Col2Im { cols, geom } => vec![(cols, ops::im2col_op(gy, geom)?)],
        Op::ColsToNchw { cols, b, f, oh, ow } => vec![(cols, ops::nchw_to_cols(gy, b, f, oh, ow)?)],
        Op::NchwToCols { x, b, f, oh, ow } => vec![(x, ops::cols_to_nchw(gy, b, f, oh, ow)?)],
        Op::AvgPool2(a) => vec![(a, ops::upsample_pool2(gy)?)],
        Op::UpsamplePool2(a) => vec![(a, ops::avg_pool2(gy)?)],
        Op::SliceOuter { x, index } => {
            let outer = t(x).shape()[0];
            vec![(x, ops::pad_outer(gy, index, outer)?)]
        }
        Op::PadOuter { x, index } => vec![(x, ops::slice_outer(gy, index)?)],
    };
    Ok(pairs)
}
