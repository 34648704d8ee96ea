//! Arena tape for reverse-mode gradients.
//!
//! Forward calls append nodes (inputs always have smaller ids), so the
//! backward pass is a single reverse sweep that visits each node once.
//! Parameters that never appear on the tape keep an empty gradient slot.

use crate::tensor::kernels;
use crate::tensor::params::{ParamId, ParamStore};

pub type NodeId = usize;

enum Op {
    Constant,
    GatherRow {
        param: ParamId,
        row: usize,
    },
    MatVec {
        w: ParamId,
        x: NodeId,
    },
    AddBias {
        b: ParamId,
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Tanh {
        x: NodeId,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    Mean {
        parts: Vec<NodeId>,
    },
    Dot {
        a: NodeId,
        b: NodeId,
    },
    Norm {
        a: NodeId,
    },
    CosPlus {
        a: NodeId,
        b: NodeId,
        raw_cos: f64,
        norm_a: f64,
        norm_b: f64,
    },
    SqErr {
        r: NodeId,
        target: f64,
    },
    SumScaled {
        terms: Vec<NodeId>,
        scale: f64,
    },
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Per-parameter gradient buffers, indexed by [`ParamId`]. Slots stay `None`
/// for parameters the recorded forward pass never read.
pub struct Grads {
    slots: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn new(n_params: usize) -> Self {
        Grads {
            slots: (0..n_params).map(|_| None).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots[id.index()].as_deref()
    }

    pub fn accumulate(&mut self, id: ParamId, offset: usize, g: &[f64]) {
        let slot = self.slot_mut(id, offset + g.len());
        for (s, v) in slot[offset..offset + g.len()].iter_mut().zip(g) {
            *s += v;
        }
    }

    fn slot_mut(&mut self, id: ParamId, min_len: usize) -> &mut Vec<f64> {
        let slot = self.slots[id.index()].get_or_insert_with(Vec::new);
        if slot.len() < min_len {
            slot.resize(min_len, 0.0);
        }
        slot
    }
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.len(), 1, "scalar node expected");
        self.nodes[id].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Constant)
    }

    /// One row of a parameter matrix as a vector node.
    pub fn gather_row(&mut self, param: ParamId, row: usize) -> NodeId {
        let t = self.store.get(param);
        assert!(row < t.rows(), "gather_row: row {} out of range", row);
        let value = t.row(row).to_vec();
        self.push(value, Op::GatherRow { param, row })
    }

    pub fn matvec(&mut self, w: ParamId, x: NodeId) -> NodeId {
        let t = self.store.get(w);
        let value = kernels::matvec(t.data(), t.rows(), t.cols(), &self.nodes[x].value);
        self.push(value, Op::MatVec { w, x })
    }

    pub fn add_bias(&mut self, b: ParamId, x: NodeId) -> NodeId {
        let t = self.store.get(b);
        let value = kernels::add(&self.nodes[x].value, t.data());
        self.push(value, Op::AddBias { b, x })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = kernels::add(&self.nodes[a].value, &self.nodes[b].value);
        self.push(value, Op::Add { a, b })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = kernels::tanh_vec(&self.nodes[x].value);
        self.push(value, Op::Tanh { x })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut value = Vec::new();
        for p in parts {
            value.extend_from_slice(&self.nodes[*p].value);
        }
        self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
        )
    }

    /// Componentwise mean of one or more equal-length nodes.
    pub fn mean(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "mean: empty node list");
        let rows: Vec<&[f64]> = parts.iter().map(|p| self.nodes[*p].value.as_slice()).collect();
        let dim = rows[0].len();
        let value = kernels::mean_rows(&rows, dim);
        self.push(
            value,
            Op::Mean {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = kernels::dot(&self.nodes[a].value, &self.nodes[b].value);
        self.push(vec![value], Op::Dot { a, b })
    }

    pub fn norm(&mut self, a: NodeId) -> NodeId {
        let value = kernels::norm(&self.nodes[a].value);
        self.push(vec![value], Op::Norm { a })
    }

    /// Truncated cosine. The gradient is the cosine gradient when the raw
    /// cosine is positive and exactly zero at or below the truncation
    /// boundary (and for zero-norm inputs).
    pub fn cos_plus(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let parts = kernels::cos_plus_parts(&self.nodes[a].value, &self.nodes[b].value);
        self.push(
            vec![parts.value],
            Op::CosPlus {
                a,
                b,
                raw_cos: parts.raw_cos,
                norm_a: parts.norm_a,
                norm_b: parts.norm_b,
            },
        )
    }

    pub fn sq_err(&mut self, r: NodeId, target: f64) -> NodeId {
        let d = self.scalar(r) - target;
        self.push(vec![d * d], Op::SqErr { r, target })
    }

    pub fn sum_scaled(&mut self, terms: &[NodeId], scale: f64) -> NodeId {
        let total: f64 = terms.iter().map(|t| self.scalar(*t)).sum();
        self.push(
            vec![total * scale],
            Op::SumScaled {
                terms: terms.to_vec(),
                scale,
            },
        )
    }

    /// W2 * tanh(W1 * x + b1) + b2 recorded on the tape.
    pub fn mlp2(
        &mut self,
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
        x: NodeId,
    ) -> NodeId {
        let pre = self.matvec(w1, x);
        let pre = self.add_bias(b1, pre);
        let hid = self.tanh(pre);
        let out = self.matvec(w2, hid);
        self.add_bias(b2, out)
    }

    /// Reverse sweep from a scalar loss node. Returns per-parameter gradients.
    pub fn backward(&self, loss: NodeId) -> Grads {
        assert_eq!(self.nodes[loss].value.len(), 1, "backward: loss must be scalar");
        let mut grads = Grads::new(self.store.len());
        let mut node_grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[loss] = Some(vec![1.0]);

        for id in (0..=loss).rev() {
            let g = match node_grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Constant => {}
                Op::GatherRow { param, row } => {
                    let cols = self.store.get(*param).cols();
                    grads.accumulate(*param, row * cols, &g);
                }
                Op::MatVec { w, x } => {
                    let t = self.store.get(*w);
                    let (rows, cols) = (t.rows(), t.cols());
                    let xv = &self.nodes[*x].value;
                    {
                        let slot = grads.slot_mut(*w, rows * cols);
                        for r in 0..rows {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            let drow = &mut slot[r * cols..(r + 1) * cols];
                            for (d, xc) in drow.iter_mut().zip(xv) {
                                *d += gr * xc;
                            }
                        }
                    }
                    let dx = node_grad(&mut node_grads, *x, cols);
                    let wd = t.data();
                    for r in 0..rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let wrow = &wd[r * cols..(r + 1) * cols];
                        for (d, wc) in dx.iter_mut().zip(wrow) {
                            *d += gr * wc;
                        }
                    }
                }
                Op::AddBias { b, x } => {
                    grads.accumulate(*b, 0, &g);
                    add_into(node_grad(&mut node_grads, *x, g.len()), &g);
                }
                Op::Add { a, b } => {
                    add_into(node_grad(&mut node_grads, *a, g.len()), &g);
                    add_into(node_grad(&mut node_grads, *b, g.len()), &g);
                }
                Op::Tanh { x } => {
                    let y = &self.nodes[id].value;
                    let dx = node_grad(&mut node_grads, *x, g.len());
                    for k in 0..g.len() {
                        dx[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[*p].value.len();
                        add_into(node_grad(&mut node_grads, *p, len), &g[off..off + len]);
                        off += len;
                    }
                }
                Op::Mean { parts } => {
                    let w = 1.0 / parts.len() as f64;
                    for p in parts {
                        let dp = node_grad(&mut node_grads, *p, g.len());
                        for k in 0..g.len() {
                            dp[k] += g[k] * w;
                        }
                    }
                }
                Op::Dot { a, b } => {
                    let g0 = g[0];
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let da = node_grad(&mut node_grads, *a, av.len());
                    for k in 0..av.len() {
                        da[k] += g0 * bv[k];
                    }
                    let db = node_grad(&mut node_grads, *b, bv.len());
                    for k in 0..bv.len() {
                        db[k] += g0 * av[k];
                    }
                }
                Op::Norm { a } => {
                    let n = self.nodes[id].value[0];
                    if n > 0.0 {
                        let g0 = g[0];
                        let av = &self.nodes[*a].value;
                        let da = node_grad(&mut node_grads, *a, av.len());
                        for k in 0..av.len() {
                            da[k] += g0 * av[k] / n;
                        }
                    }
                }
                Op::CosPlus {
                    a,
                    b,
                    raw_cos,
                    norm_a,
                    norm_b,
                } => {
                    // Zero gradient in the truncation zone, at the boundary
                    // and for zero-norm inputs.
                    if *raw_cos > 0.0 && *norm_a > 0.0 && *norm_b > 0.0 {
                        let g0 = g[0];
                        let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                        let inv = 1.0 / (norm_a * norm_b);
                        let da = node_grad(&mut node_grads, *a, av.len());
                        for k in 0..av.len() {
                            da[k] += g0 * (bv[k] * inv - raw_cos * av[k] / (norm_a * norm_a));
                        }
                        let db = node_grad(&mut node_grads, *b, bv.len());
                        for k in 0..bv.len() {
                            db[k] += g0 * (av[k] * inv - raw_cos * bv[k] / (norm_b * norm_b));
                        }
                    }
                }
                Op::SqErr { r, target } => {
                    let rv = self.nodes[*r].value[0];
                    let dr = node_grad(&mut node_grads, *r, 1);
                    dr[0] += g[0] * 2.0 * (rv - target);
                }
                Op::SumScaled { terms, scale } => {
                    for t in terms {
                        let dt = node_grad(&mut node_grads, *t, 1);
                        dt[0] += g[0] * scale;
                    }
                }
            }
        }
        grads
    }
}

fn node_grad(slots: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    slots[id].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
