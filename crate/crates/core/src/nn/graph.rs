//! Reverse-mode differentiation over a recorded tape of matrix ops.
//!
//! A [`Graph`] borrows a [`ParamStore`] for the duration of a forward pass.
//! Every op appends a node holding its output; [`Graph::backward`] walks the
//! tape in reverse from one or more seeded nodes and returns parameter
//! gradients, which the caller folds into the store with
//! [`ParamStore::accumulate`] once the graph is dropped.

use std::collections::HashMap;

use super::functional::{
    grouped_attention_backward, grouped_attention_forward, softmax_in_place, GroupLayout,
};
use super::matrix::{axpy, dot, Matrix};
use super::params::{ParamGrads, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Relu(NodeId),
    ConcatCols(Vec<NodeId>),
    GatherRows {
        x: NodeId,
        idx: Vec<usize>,
    },
    SoftmaxRows(NodeId),
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    GroupedAttention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        layout: GroupLayout,
        probs: Matrix,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Matrix>,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

/// Result of a backward pass.
pub struct Backward {
    pub params: ParamGrads,
    nodes: Vec<Option<Matrix>>,
}

impl Backward {
    /// Gradient with respect to an arbitrary node (inputs included).
    pub fn wrt(&self, node: NodeId) -> Option<&Matrix> {
        self.nodes[node.0].as_ref()
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(64),
            param_nodes: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param(p), None) => self.store.value(*p),
            (_, Some(v)) => v,
            _ => unreachable!("node without value"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, n);
        n
    }

    /// `x·Wᵀ + b` with `W` shaped `(out, in)` and `b` shaped `(1, out)`.
    pub fn linear(&mut self, x: NodeId, w: ParamId, b: ParamId) -> NodeId {
        let wn = self.param(w);
        let bn = self.param(b);
        let (xv, wv, bv) = (self.value(x), self.value(wn), self.value(bn));
        assert_eq!(
            xv.cols(),
            wv.cols(),
            "linear: input width {} vs weight in-dim {}",
            xv.cols(),
            wv.cols()
        );
        assert_eq!(bv.shape(), (1, wv.rows()), "linear: bias shape");
        let mut out = Matrix::zeros(xv.rows(), wv.rows());
        let bias = bv.row(0);
        for r in 0..xv.rows() {
            let xr = xv.row(r);
            let orow = out.row_mut(r);
            for (o, y) in orow.iter_mut().enumerate() {
                *y = dot(wv.row(o), xr) + bias[o];
            }
        }
        self.push(Op::Linear { x, w: wn, b: bn }, out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(Op::Add(a, b), out)
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let mut out = self.value(x).clone();
        out.scale(s);
        self.push(Op::Scale(x, s), out)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        self.push(Op::Tanh(x), out)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(Op::Relu(x), out)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + v.cols()].copy_from_slice(v.row(r));
            }
            off += v.cols();
        }
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    /// Output row `r` is input row `idx[r]`.
    pub fn gather_rows(&mut self, x: NodeId, idx: Vec<usize>) -> NodeId {
        let xv = self.value(x);
        let mut out = Matrix::zeros(idx.len(), xv.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(xv.row(i));
        }
        self.push(Op::GatherRows { x, idx }, out)
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(Op::SoftmaxRows(x), out)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self
            .value(a)
            .matmul(self.value(b))
            .expect("graph matmul shape");
        self.push(Op::MatMul(a, b), out)
    }

    /// `a·bᵀ`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self
            .value(a)
            .matmul_t(self.value(b))
            .expect("graph matmul_t shape");
        self.push(Op::MatMulT(a, b), out)
    }

    /// Scaled dot-product attention over independent groups packed row-wise.
    pub fn grouped_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        layout: GroupLayout,
    ) -> NodeId {
        let (out, probs) =
            grouped_attention_forward(self.value(q), self.value(k), self.value(v), layout);
        self.push(
            Op::GroupedAttention {
                q,
                k,
                v,
                layout,
                probs,
            },
            out,
        )
    }

    /// Attention probability rows recorded by a grouped-attention node.
    pub fn attention_probs(&self, node: NodeId) -> Option<&Matrix> {
        match &self.nodes[node.0].op {
            Op::GroupedAttention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Reverse pass from the given `(node, dLoss/dnode)` seeds.
    pub fn backward(&self, seeds: &[(NodeId, Matrix)]) -> Backward {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut max_seed = 0;
        for (n, g) in seeds {
            assert_eq!(
                g.shape(),
                self.value(*n).shape(),
                "seed shape must match node value"
            );
            acc(&mut grads, *n, g.clone());
            max_seed = max_seed.max(n.0);
        }

        for i in (0..=max_seed).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            match &self.nodes[i].op {
                Op::Input | Op::Param(_) => {}
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let dx = g.matmul(wv).expect("linear backward");
                    let mut dw = Matrix::zeros(wv.rows(), wv.cols());
                    let mut db = Matrix::zeros(1, wv.rows());
                    for r in 0..g.rows() {
                        let gr = g.row(r);
                        let xr = xv.row(r);
                        axpy(1.0, gr, db.row_mut(0));
                        for (o, &go) in gr.iter().enumerate() {
                            if go != 0.0 {
                                axpy(go, xr, dw.row_mut(o));
                            }
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g.clone());
                }
                Op::Scale(x, s) => {
                    let mut d = g.clone();
                    d.scale(*s);
                    acc(&mut grads, *x, d);
                }
                Op::Tanh(x) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let mut d = g.clone();
                    d.data_mut()
                        .iter_mut()
                        .zip(y.data())
                        .for_each(|(d, y)| *d *= 1.0 - y * y);
                    acc(&mut grads, *x, d);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut d = g.clone();
                    d.data_mut()
                        .iter_mut()
                        .zip(xv.data())
                        .for_each(|(d, &x)| {
                            if x <= 0.0 {
                                *d = 0.0
                            }
                        });
                    acc(&mut grads, *x, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let mut d = Matrix::zeros(g.rows(), pc);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + pc]);
                        }
                        off += pc;
                        acc(&mut grads, p, d);
                    }
                }
                Op::GatherRows { x, idx } => {
                    let xv = self.value(*x);
                    let mut d = Matrix::zeros(xv.rows(), xv.cols());
                    for (r, &src) in idx.iter().enumerate() {
                        axpy(1.0, g.row(r), d.row_mut(src));
                    }
                    acc(&mut grads, *x, d);
                }
                Op::SoftmaxRows(x) => {
                    let p = self.nodes[i].value.as_ref().unwrap();
                    let mut d = Matrix::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        let pr = p.row(r);
                        let gr = g.row(r);
                        let inner = dot(pr, gr);
                        for (c, dv) in d.row_mut(r).iter_mut().enumerate() {
                            *dv = pr[c] * (gr[c] - inner);
                        }
                    }
                    acc(&mut grads, *x, d);
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let da = g.matmul_t(bv).expect("matmul backward");
                    let db = av.transpose().matmul(&g).expect("matmul backward");
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let da = g.matmul(bv).expect("matmul_t backward");
                    let db = g.transpose().matmul(av).expect("matmul_t backward");
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::GroupedAttention {
                    q,
                    k,
                    v,
                    layout,
                    probs,
                } => {
                    let (dq, dk, dv) = grouped_attention_backward(
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        probs,
                        &g,
                        *layout,
                    );
                    acc(&mut grads, *q, dq);
                    acc(&mut grads, *k, dk);
                    acc(&mut grads, *v, dv);
                }
            }
            grads[i] = Some(g);
        }

        let mut params = ParamGrads::default();
        for (&pid, &node) in &self.param_nodes {
            if let Some(g) = &grads[node.0] {
                params.entries.push((pid, g.clone()));
            }
        }
        params.entries.sort_by_key(|(id, _)| *id);
        Backward {
            params,
            nodes: grads,
        }
    }
}

fn acc(grads: &mut [Option<Matrix>], node: NodeId, g: Matrix) {
    match &mut grads[node.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
