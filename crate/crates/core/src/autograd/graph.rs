//! Eagerly recorded compute graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so operand ids always precede the
//! id of the node that consumes them and the node list is already a
//! topological order. A graph lives for one forward/backward pass.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::params::{ParamId, ParamStore};
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};
use crate::losses::{self, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which part of the model produced a node. Used for structural checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    Input,
    VisionEncoder,
    LanguageEncoder,
    Lora,
    Adapter,
    Fusion,
    Head,
    Loss,
}

impl Scope {
    pub fn is_encoder(self) -> bool {
        matches!(self, Scope::VisionEncoder | Scope::LanguageEncoder)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    /// Row-broadcast bias add: `x[n×c] + b[c]`.
    AddBias(NodeId, NodeId),
    Scale(NodeId, f64),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    },
    Softmax(NodeId),
    Transpose(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
    },
    SliceRows {
        x: NodeId,
        start: usize,
        len: usize,
    },
    Sum(NodeId),
    /// smooth-L1 + λ·(1 − GIoU) of a 4-element prediction against a fixed box.
    BoxLoss {
        pred: NodeId,
        target: BBox,
        lambda: f64,
        beta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    AddBias,
    Scale,
    LayerNorm,
    Softmax,
    Transpose,
    ConcatCols,
    ConcatRows,
    SliceCols,
    SliceRows,
    Sum,
    BoxLoss,
}

/// Values a local derivative rule needs to keep alive for the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reads {
    Nothing,
    AllOperands,
    /// Only the operand at this position.
    Operand(usize),
    /// The op's own output.
    Output,
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Scale(..) => OpKind::Scale,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Softmax(_) => OpKind::Softmax,
            Op::Transpose(_) => OpKind::Transpose,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::Sum(_) => OpKind::Sum,
            Op::BoxLoss { .. } => OpKind::BoxLoss,
        }
    }

    pub fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => {
                vec![*a, *b]
            }
            Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Scale(a, _)
            | Op::Softmax(a)
            | Op::Transpose(a)
            | Op::Sum(a) => vec![*a],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
            Op::SliceCols { x, .. } | Op::SliceRows { x, .. } => vec![*x],
            Op::BoxLoss { pred, .. } => vec![*pred],
        }
    }
}

impl OpKind {
    /// Fixed read-set table used by the retained-activation metric.
    ///
    /// | op                 | reads              |
    /// |--------------------|--------------------|
    /// | matmul, mul        | both operands      |
    /// | relu, sigmoid      | input              |
    /// | layer_norm         | input and gamma    |
    /// | softmax            | output             |
    /// | box loss           | prediction         |
    /// | everything else    | nothing            |
    pub fn reads(self) -> &'static [Reads] {
        match self {
            OpKind::MatMul | OpKind::Mul => &[Reads::AllOperands],
            OpKind::Relu | OpKind::Sigmoid | OpKind::BoxLoss => &[Reads::Operand(0)],
            OpKind::LayerNorm => &[Reads::Operand(0), Reads::Operand(1)],
            OpKind::Softmax => &[Reads::Output],
            _ => &[Reads::Nothing],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeafInfo {
    pub param: Option<ParamId>,
    pub trainable: bool,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub value: Tensor,
    pub scope: Scope,
    pub leaf: Option<LeafInfo>,
    requires_grad: bool,
}

impl Node {
    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    fn is_param(&self) -> bool {
        matches!(self.leaf, Some(LeafInfo { param: Some(_), .. }))
    }
}

/// Gradients of trainable leaves, keyed by node id.
#[derive(Debug, Clone, Default)]
pub struct GradStore {
    grads: BTreeMap<NodeId, Tensor>,
    params: BTreeMap<ParamId, NodeId>,
}

impl GradStore {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|n| self.grads.get(n))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeId, &Tensor)> {
        self.grads.iter()
    }

    /// Parameter gradients in ascending parameter order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|(p, n)| self.grads.get(n).map(|g| (*p, g)))
    }
}

#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    scope: Scope,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            scope: Scope::Input,
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    /// Runs `f` with every node it records tagged as `scope`.
    pub fn with_scope<T>(&mut self, scope: Scope, f: impl FnOnce(&mut Graph) -> T) -> T {
        let prev = std::mem::replace(&mut self.scope, scope);
        let out = f(self);
        self.scope = prev;
        out
    }

    /// `(operand, consumer)` pairs for every recorded op.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes().flat_map(|(id, n)| {
            n.op.operands().into_iter().map(move |o| (o, id))
        })
    }

    pub fn trainable_leaves(&self) -> BTreeSet<NodeId> {
        self.nodes()
            .filter(|(_, n)| matches!(n.leaf, Some(LeafInfo { trainable: true, .. })))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn param_node(&self, id: ParamId) -> Option<NodeId> {
        self.param_nodes.get(&id).copied()
    }

    fn push_leaf(&mut self, value: Tensor, info: LeafInfo) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            scope: self.scope,
            leaf: Some(info),
            requires_grad: info.trainable,
        });
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(
            value,
            LeafInfo {
                param: None,
                trainable: false,
            },
        )
    }

    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> NodeId {
        self.push_leaf(
            value,
            LeafInfo {
                param: None,
                trainable,
            },
        )
    }

    /// Inserts a parameter as a leaf. Repeated calls return the same node, so
    /// gradient contributions from every use of a shared parameter sum.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let p = store.get(id);
        let n = self.push_leaf(
            p.value.clone(),
            LeafInfo {
                param: Some(id),
                trainable: p.trainable,
            },
        );
        self.param_nodes.insert(id, n);
        n
    }

    fn record(&mut self, op: Op) -> Result<NodeId> {
        let value = eval_op(&op, &self.nodes)?;
        let requires_grad = op
            .operands()
            .iter()
            .any(|o| self.nodes[o.0].requires_grad);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            scope: self.scope,
            leaf: None,
            requires_grad,
        });
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Mul(a, b))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sigmoid(a))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.record(Op::AddBias(x, bias))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.record(Op::Scale(x, factor))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        self.record(Op::LayerNorm { x, gamma, beta, eps })
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Softmax(x))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Transpose(x))
    }

    /// Column concatenation. A single part is returned unchanged; zero-width
    /// operands are expressed by leaving them out of `parts`.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        match parts {
            [] => Err(Error::Contract("concat of zero tensors".into())),
            [one] => Ok(*one),
            _ => self.record(Op::ConcatCols(parts.to_vec())),
        }
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        match parts {
            [] => Err(Error::Contract("concat of zero tensors".into())),
            [one] => Ok(*one),
            _ => self.record(Op::ConcatRows(parts.to_vec())),
        }
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.record(Op::SliceCols { x, start, len })
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.record(Op::SliceRows { x, start, len })
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Sum(x))
    }

    /// Sums several same-shaped nodes left to right.
    pub fn add_n(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let (first, rest) = parts
            .split_first()
            .ok_or_else(|| Error::Contract("sum of zero tensors".into()))?;
        rest.iter().try_fold(*first, |acc, &p| self.add(acc, p))
    }

    pub fn box_loss(&mut self, pred: NodeId, target: BBox, lambda: f64, beta: f64) -> Result<NodeId> {
        self.record(Op::BoxLoss {
            pred,
            target,
            lambda,
            beta,
        })
    }

    /// Re-evaluates every recorded op from the stored leaf values.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut replayed: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let value = match n.op {
                Op::Leaf => n.value.clone(),
                ref op => eval_op(op, &replayed)?,
            };
            replayed.push(Node {
                value,
                ..n.clone()
            });
        }
        Ok(replayed.into_iter().map(|n| n.value).collect())
    }

    /// Reverse-mode pass from a scalar loss. Only trainable leaves receive
    /// entries; frozen leaves and constants never do.
    pub fn backward(&self, loss: NodeId) -> Result<GradStore> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        let mut out = GradStore::default();
        if !self.nodes[loss.0].requires_grad {
            return Ok(out);
        }
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(info) = node.leaf {
                if info.trainable {
                    let id = NodeId(i);
                    out.grads
                        .insert(id, Tensor::new(node.value.shape().to_vec(), g)?);
                    if let Some(p) = info.param {
                        out.params.insert(p, id);
                    }
                }
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
        }
        Ok(out)
    }

    fn propagate(&self, op: &Op, out_value: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            let n = &nodes[id.0];
            if !n.requires_grad {
                return;
            }
            let buf = grads[id.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(buf);
        };
        let val = |id: NodeId| &nodes[id.0].value;

        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(a).dims2();
                let n = val(b).cols();
                acc(a, &mut |buf| tensor::matmul_nt_acc(g, val(b).data(), buf, m, k, n));
                acc(b, &mut |buf| tensor::matmul_tn_acc(val(a).data(), g, buf, m, k, n));
            }
            Op::Add(a, b) => {
                acc(a, &mut |buf| add_into(buf, g));
                acc(b, &mut |buf| add_into(buf, g));
            }
            Op::Sub(a, b) => {
                acc(a, &mut |buf| add_into(buf, g));
                acc(b, &mut |buf| buf.iter_mut().zip(g).for_each(|(o, v)| *o -= v));
            }
            Op::Mul(a, b) => {
                acc(a, &mut |buf| {
                    for ((o, gv), bv) in buf.iter_mut().zip(g).zip(val(b).data()) {
                        *o += gv * bv;
                    }
                });
                acc(b, &mut |buf| {
                    for ((o, gv), av) in buf.iter_mut().zip(g).zip(val(a).data()) {
                        *o += gv * av;
                    }
                });
            }
            Op::Relu(a) => acc(a, &mut |buf| {
                for ((o, gv), x) in buf.iter_mut().zip(g).zip(val(a).data()) {
                    // derivative at exactly zero is taken as zero
                    if *x > 0.0 {
                        *o += gv;
                    }
                }
            }),
            Op::Sigmoid(a) => acc(a, &mut |buf| {
                for ((o, gv), y) in buf.iter_mut().zip(g).zip(out_value.data()) {
                    *o += gv * y * (1.0 - y);
                }
            }),
            Op::AddBias(x, b) => {
                acc(x, &mut |buf| add_into(buf, g));
                let c = val(b).len();
                acc(b, &mut |buf| {
                    for row in g.chunks(c) {
                        add_into(buf, row);
                    }
                });
            }
            Op::Scale(x, f) => acc(x, &mut |buf| {
                buf.iter_mut().zip(g).for_each(|(o, v)| *o += f * v)
            }),
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (r, c) = val(x).dims2();
                let xs = val(x).data();
                let gam = val(gamma).data();
                let mut xhat = vec![0.0; r * c];
                let mut inv_std = vec![0.0; r];
                for i in 0..r {
                    let row = &xs[i * c..(i + 1) * c];
                    let (mean, var) = mean_var(row);
                    let is = 1.0 / (var + eps).sqrt();
                    inv_std[i] = is;
                    for j in 0..c {
                        xhat[i * c + j] = (row[j] - mean) * is;
                    }
                }
                acc(x, &mut |buf| {
                    for i in 0..r {
                        let gr = &g[i * c..(i + 1) * c];
                        let xh = &xhat[i * c..(i + 1) * c];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let d = gr[j] * gam[j];
                            m1 += d;
                            m2 += d * xh[j];
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            let d = gr[j] * gam[j];
                            buf[i * c + j] += inv_std[i] * (d - m1 - xh[j] * m2);
                        }
                    }
                });
                acc(gamma, &mut |buf| {
                    for (gr, xh) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            buf[j] += gr[j] * xh[j];
                        }
                    }
                });
                acc(beta, &mut |buf| {
                    for gr in g.chunks(c) {
                        add_into(buf, gr);
                    }
                });
            }
            Op::Softmax(x) => {
                let c = out_value.cols();
                acc(x, &mut |buf| {
                    for ((o, gr), y) in buf.chunks_mut(c).zip(g.chunks(c)).zip(out_value.data().chunks(c)) {
                        let dot: f64 = gr.iter().zip(y).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            o[j] += y[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = val(x).dims2();
                acc(x, &mut |buf| {
                    for i in 0..r {
                        for j in 0..c {
                            buf[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::ConcatCols(ref parts) => {
                let total = out_value.cols();
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).dims2();
                    acc(p, &mut |buf| {
                        for i in 0..r {
                            add_into(
                                &mut buf[i * c..(i + 1) * c],
                                &g[i * total + offset..i * total + offset + c],
                            );
                        }
                    });
                    offset += c;
                }
            }
            Op::ConcatRows(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    acc(p, &mut |buf| add_into(buf, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::SliceCols { x, start, len } => {
                let (r, c) = val(x).dims2();
                acc(x, &mut |buf| {
                    for i in 0..r {
                        add_into(
                            &mut buf[i * c + start..i * c + start + len],
                            &g[i * len..(i + 1) * len],
                        );
                    }
                });
            }
            Op::SliceRows { x, start, len } => {
                let c = val(x).cols();
                acc(x, &mut |buf| add_into(&mut buf[start * c..(start + len) * c], g));
            }
            Op::Sum(x) => acc(x, &mut |buf| buf.iter_mut().for_each(|o| *o += g[0])),
            Op::BoxLoss {
                pred,
                target,
                lambda,
                beta,
            } => {
                let p = val(pred).data();
                let d = losses::rec_loss_grad([p[0], p[1], p[2], p[3]], &target, lambda, beta);
                acc(pred, &mut |buf| {
                    for j in 0..4 {
                        buf[j] += g[0] * d[j];
                    }
                });
            }
        }
    }

    /// Tensors that must be kept for the backward pass when `trainable`
    /// are the leaves requiring gradients.
    ///
    /// An op is retained-from when it lies on a directed path from a member
    /// of `trainable` to `loss`; its read-set (see [`OpKind::reads`]) is then
    /// kept. Parameter leaves are excluded: the count measures activations.
    pub fn retained_tensors(&self, loss: NodeId, trainable: &BTreeSet<NodeId>) -> Result<BTreeSet<NodeId>> {
        for id in trainable {
            let node = self
                .nodes
                .get(id.0)
                .ok_or_else(|| Error::Contract(format!("node {} not in graph", id.0)))?;
            if node.leaf.is_none() {
                return Err(Error::Contract(format!(
                    "trainable set contains non-leaf node {}",
                    id.0
                )));
            }
        }
        let n = loss.0 + 1;
        let mut from_trainable = vec![false; n];
        for i in 0..n {
            let node = &self.nodes[i];
            from_trainable[i] = trainable.contains(&NodeId(i))
                || node.op.operands().iter().any(|o| from_trainable[o.0]);
        }
        let mut to_loss = vec![false; n];
        to_loss[loss.0] = true;
        for i in (0..n).rev() {
            if to_loss[i] {
                for o in self.nodes[i].op.operands() {
                    to_loss[o.0] = true;
                }
            }
        }

        let mut kept = BTreeSet::new();
        let mut keep = |id: NodeId| {
            if !self.nodes[id.0].is_param() {
                kept.insert(id);
            }
        };
        for i in 0..n {
            let node = &self.nodes[i];
            if node.leaf.is_some() || !(from_trainable[i] && to_loss[i]) {
                continue;
            }
            let operands = node.op.operands();
            for r in node.op.kind().reads() {
                match *r {
                    Reads::Nothing => {}
                    Reads::AllOperands => operands.iter().for_each(|&o| keep(o)),
                    Reads::Operand(k) => keep(operands[k]),
                    Reads::Output => keep(NodeId(i)),
                }
            }
        }
        Ok(kept)
    }

    /// Total scalar elements of [`Graph::retained_tensors`].
    pub fn retained_activation_count(&self, loss: NodeId, trainable: &BTreeSet<NodeId>) -> Result<usize> {
        Ok(self
            .retained_tensors(loss, trainable)?
            .iter()
            .map(|id| self.nodes[id.0].value.len())
            .sum())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn mean_var(row: &[f64]) -> (f64, f64) {
    let c = row.len() as f64;
    let mean = row.iter().sum::<f64>() / c;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
    (mean, var)
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|v| f(*v)).collect())
}

fn eval_op(op: &Op, nodes: &[Node]) -> Result<Tensor> {
    let val = |id: NodeId| -> Result<&Tensor> {
        nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or_else(|| Error::Contract(format!("operand {} not recorded yet", id.0)))
    };
    match *op {
        Op::Leaf => Err(Error::Contract("leaves are not evaluated".into())),
        Op::MatMul(a, b) => tensor::matmul(val(a)?, val(b)?),
        Op::Add(a, b) => {
            let (a, b) = (val(a)?, val(b)?);
            same_shape("add", a, b)?;
            zip_map(a, b, |x, y| x + y)
        }
        Op::Sub(a, b) => {
            let (a, b) = (val(a)?, val(b)?);
            same_shape("sub", a, b)?;
            zip_map(a, b, |x, y| x - y)
        }
        Op::Mul(a, b) => {
            let (a, b) = (val(a)?, val(b)?);
            same_shape("mul", a, b)?;
            zip_map(a, b, |x, y| x * y)
        }
        Op::Relu(a) => map(val(a)?, |x| if x > 0.0 { x } else { 0.0 }),
        Op::Sigmoid(a) => map(val(a)?, tensor::sigmoid),
        Op::AddBias(x, b) => {
            let (x, b) = (val(x)?, val(b)?);
            let c = x.cols();
            if b.len() != c || x.shape().len() != 2 {
                return Err(Error::dim("add_bias", x.shape(), b.shape()));
            }
            let mut out = x.data().to_vec();
            for row in out.chunks_mut(c) {
                add_into(row, b.data());
            }
            Tensor::new(x.shape().to_vec(), out)
        }
        Op::Scale(x, f) => map(val(x)?, |v| v * f),
        Op::LayerNorm { x, gamma, beta, eps } => {
            if !(eps > 0.0) {
                return Err(Error::Contract(format!("layer_norm eps must be > 0, got {eps}")));
            }
            let (x, gam, bet) = (val(x)?, val(gamma)?, val(beta)?);
            let c = x.cols();
            if gam.len() != c || bet.len() != c {
                return Err(Error::dim("layer_norm", x.shape(), gam.shape()));
            }
            let mut out = x.data().to_vec();
            for row in out.chunks_mut(c) {
                let (mean, var) = mean_var(row);
                let is = 1.0 / (var + eps).sqrt();
                for j in 0..c {
                    row[j] = (row[j] - mean) * is * gam.data()[j] + bet.data()[j];
                }
            }
            Tensor::new(x.shape().to_vec(), out)
        }
        Op::Softmax(x) => Ok(tensor::softmax_rows(val(x)?)),
        Op::Transpose(x) => Ok(tensor::transpose(val(x)?)),
        Op::ConcatCols(ref parts) => {
            let first = val(parts[0])?;
            let r = first.rows();
            let mut widths = Vec::with_capacity(parts.len());
            for &p in parts {
                let t = val(p)?;
                if t.rows() != r || t.shape().len() != 2 {
                    return Err(Error::dim("concat_cols", first.shape(), t.shape()));
                }
                widths.push(t.cols());
            }
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(r * total);
            for i in 0..r {
                for &p in parts {
                    out.extend_from_slice(val(p)?.row(i));
                }
            }
            Tensor::matrix(r, total, out)
        }
        Op::ConcatRows(ref parts) => {
            let first = val(parts[0])?;
            let c = first.cols();
            let mut out = Vec::new();
            let mut rows = 0;
            for &p in parts {
                let t = val(p)?;
                if t.cols() != c {
                    return Err(Error::dim("concat_rows", first.shape(), t.shape()));
                }
                rows += t.rows();
                out.extend_from_slice(t.data());
            }
            Tensor::matrix(rows, c, out)
        }
        Op::SliceCols { x, start, len } => {
            let t = val(x)?;
            let (r, c) = t.dims2();
            if len == 0 || start + len > c {
                return Err(Error::dim("slice_cols", t.shape(), &[start, len]));
            }
            let mut out = Vec::with_capacity(r * len);
            for i in 0..r {
                out.extend_from_slice(&t.row(i)[start..start + len]);
            }
            Tensor::matrix(r, len, out)
        }
        Op::SliceRows { x, start, len } => {
            let t = val(x)?;
            let (r, c) = t.dims2();
            if len == 0 || start + len > r {
                return Err(Error::dim("slice_rows", t.shape(), &[start, len]));
            }
            Tensor::matrix(len, c, t.data()[start * c..(start + len) * c].to_vec())
        }
        Op::Sum(x) => Ok(Tensor::scalar(val(x)?.data().iter().sum())),
        Op::BoxLoss {
            pred,
            target,
            lambda,
            beta,
        } => {
            let p = val(pred)?;
            if p.len() != 4 {
                return Err(Error::dim("box_loss", p.shape(), &[4]));
            }
            let d = p.data();
            Ok(Tensor::scalar(losses::rec_loss_raw(
                [d[0], d[1], d[2], d[3]],
                &target,
                lambda,
                beta,
            )))
        }
    }
}
