//! Reverse-mode automatic differentiation over a per-example tape.
//!
//! Ops work on whole tensors (matrix-vector products, elementwise maps,
//! fused recurrent-cell preactivations) rather than scalars, so the tape
//! stays short even for long sequences. Node indices are topologically
//! ordered by construction: parents always precede children, and the
//! backward sweep is a single reverse pass.

use super::params::{Gradients, ParamId, ParameterStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// CELU activation with `alpha = 3`, capped at 6.
///
/// `min(celu(x, 3), 6)` where `celu(x, a) = max(0, x) + min(0, a*(exp(x/a)-1))`.
/// The output range is `(-3, 6]`.
pub fn celu_capped_scalar(x: f64) -> f64 {
    const ALPHA: f64 = 3.0;
    const CAP: f64 = 6.0;
    let celu = x.max(0.0) + (ALPHA * ((x / ALPHA).exp() - 1.0)).min(0.0);
    celu.min(CAP)
}

/// Derivative of [`celu_capped_scalar`]; the cap point takes the flat
/// branch's subgradient 0.
pub fn celu_capped_grad(x: f64) -> f64 {
    const ALPHA: f64 = 3.0;
    const CAP: f64 = 6.0;
    if x >= CAP {
        0.0
    } else if x >= 0.0 {
        1.0
    } else {
        (x / ALPHA).exp()
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    /// `W x + b` with `W: [m, n]`, `x: [n]`, `b: [m]`.
    Linear { w: NodeId, x: NodeId, b: NodeId },
    /// `W x + U h + b`, the fused recurrent preactivation.
    RecurLin {
        w: NodeId,
        x: NodeId,
        u: NodeId,
        h: NodeId,
        b: NodeId,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `a * x + c` with scalar constants; only the slope matters in backward.
    Affine { x: NodeId, a: f64 },
    Sigmoid(NodeId),
    CeluCapped(NodeId),
    /// `gate ⊙ on_true + (1 - gate) ⊙ on_false`.
    Lerp {
        gate: NodeId,
        on_true: NodeId,
        on_false: NodeId,
    },
    Concat(NodeId, NodeId),
    /// Row `row` of a rank-2 table (embedding lookup).
    Row { table: NodeId, row: usize },
    Sum(NodeId),
    /// `sum((a - b)^2)` as a scalar.
    SqErrSum(NodeId, NodeId),
    /// `-log softmax(logits)[target]` as a scalar.
    CrossEntropyLogits { logits: NodeId, target: usize },
    /// `0.5 * sum(mu^2 + sigma^2 - 1 - 2 ln sigma)` as a scalar.
    KlDiag { mu: NodeId, sigma: NodeId },
    /// `max(x - threshold, 0)` on a scalar.
    HingeAbove { x: NodeId, threshold: f64 },
    /// Weighted sum of scalar nodes.
    WeightedSum(Vec<(NodeId, f64)>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const => "const",
            Op::Param(_) => "param",
            Op::Linear { .. } => "linear",
            Op::RecurLin { .. } => "recur_lin",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::Sigmoid(_) => "sigmoid",
            Op::CeluCapped(_) => "celu_capped",
            Op::Lerp { .. } => "lerp",
            Op::Concat(..) => "concat",
            Op::Row { .. } => "row",
            Op::Sum(_) => "sum",
            Op::SqErrSum(..) => "sq_err_sum",
            Op::CrossEntropyLogits { .. } => "cross_entropy_logits",
            Op::KlDiag { .. } => "kl_diag",
            Op::HingeAbove { .. } => "hinge_above",
            Op::WeightedSum(_) => "weighted_sum",
        }
    }
}

enum Value {
    Owned(Tensor),
    FromStore(ParamId),
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Recording tape for one forward computation.
///
/// Borrows the parameter store read-only, so several tapes can run in
/// parallel over a shared store.
pub struct Tape<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
    check_finite: bool,
    grad_enabled: bool,
}

impl<'s> Tape<'s> {
    /// Tape with per-op finiteness checks, for tests and evaluation code.
    pub fn new(store: &'s ParameterStore) -> Self {
        Self::with_options(store, true, true)
    }

    /// Tape without per-op finiteness checks; the training loop uses this
    /// and validates loss and gradients once per step instead.
    pub fn fast(store: &'s ParameterStore) -> Self {
        Self::with_options(store, false, true)
    }

    /// Value-only tape for generation: nothing requires gradients.
    pub fn no_grad(store: &'s ParameterStore) -> Self {
        Self::with_options(store, false, false)
    }

    fn with_options(store: &'s ParameterStore, check_finite: bool, grad_enabled: bool) -> Self {
        Tape {
            store,
            nodes: Vec::with_capacity(256),
            param_nodes: vec![None; store.len()],
            check_finite,
            grad_enabled,
        }
    }

    pub fn store(&self) -> &ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tensor value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.nodes[id.0].value {
            Value::Owned(t) => t,
            Value::FromStore(p) => self.store.get(*p),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<NodeId> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Ok(id)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Leaf holding input data; never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Op::Const,
            requires_grad: false,
        });
        id
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> NodeId {
        self.constant(Tensor::vector(data))
    }

    /// Leaf for a trainable parameter; deduplicated per tape.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.index()] {
            return n;
        }
        let n = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value: Value::FromStore(id),
            op: Op::Param(id),
            requires_grad: self.grad_enabled,
        });
        self.param_nodes[id.index()] = Some(n);
        n
    }

    /// `W x + b`.
    pub fn linear(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (wt, xt, bt) = (self.value(w), self.value(x), self.value(b));
        let (m, n) = (wt.rows(), wt.cols());
        if xt.len() != n || bt.len() != m {
            return Err(Error::ShapeMismatch {
                op: "linear",
                expected: format!("x[{n}], b[{m}]"),
                got: format!("x[{}], b[{}]", xt.len(), bt.len()),
            });
        }
        let mut out = bt.data().to_vec();
        matvec_acc(wt.data(), xt.data(), &mut out, n);
        let rg = self.rg(w) || self.rg(x) || self.rg(b);
        self.push(Tensor::vector(out), Op::Linear { w, x, b }, rg)
    }

    /// `W x + U h + b`, the recurrent-gate preactivation.
    pub fn recur_lin(
        &mut self,
        w: NodeId,
        x: NodeId,
        u: NodeId,
        h: NodeId,
        b: NodeId,
    ) -> Result<NodeId> {
        let (wt, xt, ut, ht, bt) = (
            self.value(w),
            self.value(x),
            self.value(u),
            self.value(h),
            self.value(b),
        );
        let (m, n) = (wt.rows(), wt.cols());
        let p = ut.cols();
        if xt.len() != n || ut.rows() != m || ht.len() != p || bt.len() != m {
            return Err(Error::ShapeMismatch {
                op: "recur_lin",
                expected: format!("x[{n}], U[{m},*], h[{}], b[{m}]", ut.cols()),
                got: format!(
                    "x[{}], U[{},{}], h[{}], b[{}]",
                    xt.len(),
                    ut.rows(),
                    ut.cols(),
                    ht.len(),
                    bt.len()
                ),
            });
        }
        let mut out = bt.data().to_vec();
        matvec_acc(wt.data(), xt.data(), &mut out, n);
        matvec_acc(ut.data(), ht.data(), &mut out, p);
        let rg = self.rg(w) || self.rg(x) || self.rg(u) || self.rg(h) || self.rg(b);
        self.push(Tensor::vector(out), Op::RecurLin { w, x, u, h, b }, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = zip_map(self.value(a), self.value(b), "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = zip_map(self.value(a), self.value(b), "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = zip_map(self.value(a), self.value(b), "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// `a * x + c` elementwise with constants.
    pub fn affine(&mut self, x: NodeId, a: f64, c: f64) -> Result<NodeId> {
        let out = Tensor::vector(self.value(x).data().iter().map(|v| a * v + c).collect());
        let rg = self.rg(x);
        self.push(out, Op::Affine { x, a }, rg)
    }

    pub fn scale(&mut self, x: NodeId, a: f64) -> Result<NodeId> {
        self.affine(x, a, 0.0)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let out = Tensor::vector(self.value(x).data().iter().map(|&v| sigmoid_scalar(v)).collect());
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn celu_capped(&mut self, x: NodeId) -> Result<NodeId> {
        let out = Tensor::vector(
            self.value(x)
                .data()
                .iter()
                .map(|&v| celu_capped_scalar(v))
                .collect(),
        );
        let rg = self.rg(x);
        self.push(out, Op::CeluCapped(x), rg)
    }

    /// `gate ⊙ on_true + (1 - gate) ⊙ on_false`.
    pub fn lerp(&mut self, gate: NodeId, on_true: NodeId, on_false: NodeId) -> Result<NodeId> {
        let (g, t, f) = (self.value(gate), self.value(on_true), self.value(on_false));
        if g.len() != t.len() || g.len() != f.len() {
            return Err(Error::ShapeMismatch {
                op: "lerp",
                expected: format!("[{}]", g.len()),
                got: format!("[{}], [{}]", t.len(), f.len()),
            });
        }
        let out: Vec<f64> = g
            .data()
            .iter()
            .zip(t.data())
            .zip(f.data())
            .map(|((&z, &a), &b)| z * a + (1.0 - z) * b)
            .collect();
        let rg = self.rg(gate) || self.rg(on_true) || self.rg(on_false);
        self.push(
            Tensor::vector(out),
            Op::Lerp {
                gate,
                on_true,
                on_false,
            },
            rg,
        )
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let mut out = self.value(a).data().to_vec();
        out.extend_from_slice(self.value(b).data());
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::vector(out), Op::Concat(a, b), rg)
    }

    /// Row of a rank-2 table (embedding lookup).
    pub fn row(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        let t = self.value(table);
        let (rows, cols) = (t.rows(), t.cols());
        if row >= rows {
            return Err(Error::ShapeMismatch {
                op: "row",
                expected: format!("row < {rows}"),
                got: format!("{row}"),
            });
        }
        let out = t.data()[row * cols..(row + 1) * cols].to_vec();
        let rg = self.rg(table);
        self.push(Tensor::vector(out), Op::Row { table, row }, rg)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `sum((a - b)^2)` as a scalar.
    pub fn sq_err_sum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.len() != bt.len() {
            return Err(Error::ShapeMismatch {
                op: "sq_err_sum",
                expected: format!("[{}]", at.len()),
                got: format!("[{}]", bt.len()),
            });
        }
        let s: f64 = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::scalar(s), Op::SqErrSum(a, b), rg)
    }

    /// `mean((a - b)^2)` as a scalar.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let n = self.value(a).len() as f64;
        let s = self.sq_err_sum(a, b)?;
        self.scale(s, 1.0 / n)
    }

    /// Cross-entropy against `target` under `softmax(logits)`, in nats.
    pub fn cross_entropy_logits(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let l = self.value(logits).data();
        if target >= l.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_logits",
                expected: format!("target < {}", l.len()),
                got: format!("{target}"),
            });
        }
        let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(lse - l[target]),
            Op::CrossEntropyLogits { logits, target },
            rg,
        )
    }

    /// KL divergence between `N(mu, diag(sigma^2))` and the unit Gaussian.
    pub fn kl_diag(&mut self, mu: NodeId, sigma: NodeId) -> Result<NodeId> {
        let (m, s) = (self.value(mu), self.value(sigma));
        if m.len() != s.len() {
            return Err(Error::ShapeMismatch {
                op: "kl_diag",
                expected: format!("[{}]", m.len()),
                got: format!("[{}]", s.len()),
            });
        }
        if let Some((i, &v)) = s.data().iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(Error::NonPositiveSigma { index: i, value: v });
        }
        let kl: f64 = m
            .data()
            .iter()
            .zip(s.data())
            .map(|(&mu_j, &sig_j)| 0.5 * (mu_j * mu_j + sig_j * sig_j - 1.0 - 2.0 * sig_j.ln()))
            .sum();
        let rg = self.rg(mu) || self.rg(sigma);
        self.push(Tensor::scalar(kl), Op::KlDiag { mu, sigma }, rg)
    }

    /// `max(x - threshold, 0)` on a scalar node.
    pub fn hinge_above(&mut self, x: NodeId, threshold: f64) -> Result<NodeId> {
        let v = self.value(x).item();
        let rg = self.rg(x);
        self.push(
            Tensor::scalar((v - threshold).max(0.0)),
            Op::HingeAbove { x, threshold },
            rg,
        )
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: Vec<(NodeId, f64)>) -> Result<NodeId> {
        let mut s = 0.0;
        for (id, w) in &terms {
            s += w * self.value(*id).item();
        }
        let rg = terms.iter().any(|(id, _)| self.rg(*id));
        self.push(Tensor::scalar(s), Op::WeightedSum(terms), rg)
    }

    /// Reverse sweep from a scalar `loss` node; returns per-parameter
    /// gradients. Parameters the loss does not reach are absent (zero).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                expected: "scalar loss".into(),
                got: format!("[{}]", self.value(loss).len()),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::new(self.store.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if self.check_finite && !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteGradient { op: node.op.name() });
            }
            match &node.op {
                Op::Const => {}
                Op::Param(p) => {
                    let shape = self.store.get(*p).shape().to_vec();
                    out.insert(*p, Tensor::from_vec(&shape, g));
                }
                Op::Linear { w, x, b } => {
                    let (wt, xt) = (self.value(*w), self.value(*x));
                    let n = wt.cols();
                    if self.rg(*w) {
                        let gw = self.grad_buf(&mut grads, *w);
                        outer_acc(gw, &g, xt.data());
                    }
                    if self.rg(*x) {
                        let gx = self.grad_buf(&mut grads, *x);
                        matvec_t_acc(wt.data(), &g, gx, n);
                    }
                    if self.rg(*b) {
                        add_into(self.grad_buf(&mut grads, *b), &g);
                    }
                }
                Op::RecurLin { w, x, u, h, b } => {
                    let (wt, xt, ut, ht) = (
                        self.value(*w),
                        self.value(*x),
                        self.value(*u),
                        self.value(*h),
                    );
                    if self.rg(*w) {
                        outer_acc(self.grad_buf(&mut grads, *w), &g, xt.data());
                    }
                    if self.rg(*x) {
                        matvec_t_acc(wt.data(), &g, self.grad_buf(&mut grads, *x), wt.cols());
                    }
                    if self.rg(*u) {
                        outer_acc(self.grad_buf(&mut grads, *u), &g, ht.data());
                    }
                    if self.rg(*h) {
                        matvec_t_acc(ut.data(), &g, self.grad_buf(&mut grads, *h), ut.cols());
                    }
                    if self.rg(*b) {
                        add_into(self.grad_buf(&mut grads, *b), &g);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        add_into(self.grad_buf(&mut grads, *a), &g);
                    }
                    if self.rg(*b) {
                        add_into(self.grad_buf(&mut grads, *b), &g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        add_into(self.grad_buf(&mut grads, *a), &g);
                    }
                    if self.rg(*b) {
                        sub_into(self.grad_buf(&mut grads, *b), &g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let bt = self.value(*b).data();
                        let ga = self.grad_buf(&mut grads, *a);
                        for ((d, &gi), &bv) in ga.iter_mut().zip(&g).zip(bt) {
                            *d += gi * bv;
                        }
                    }
                    if self.rg(*b) {
                        let at = self.value(*a).data();
                        let gb = self.grad_buf(&mut grads, *b);
                        for ((d, &gi), &av) in gb.iter_mut().zip(&g).zip(at) {
                            *d += gi * av;
                        }
                    }
                }
                Op::Affine { x, a, .. } => {
                    if self.rg(*x) {
                        let gx = self.grad_buf(&mut grads, *x);
                        for (d, &gi) in gx.iter_mut().zip(&g) {
                            *d += a * gi;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    if self.rg(*x) {
                        let y = match &node.value {
                            Value::Owned(t) => t.data(),
                            Value::FromStore(_) => unreachable!(),
                        };
                        let gx = self.grad_buf(&mut grads, *x);
                        for ((d, &gi), &yv) in gx.iter_mut().zip(&g).zip(y) {
                            *d += gi * yv * (1.0 - yv);
                        }
                    }
                }
                Op::CeluCapped(x) => {
                    if self.rg(*x) {
                        let xv = self.value(*x).data();
                        let gx = self.grad_buf(&mut grads, *x);
                        for ((d, &gi), &v) in gx.iter_mut().zip(&g).zip(xv) {
                            *d += gi * celu_capped_grad(v);
                        }
                    }
                }
                Op::Lerp {
                    gate,
                    on_true,
                    on_false,
                } => {
                    let (gv, tv, fv) = (
                        self.value(*gate).data(),
                        self.value(*on_true).data(),
                        self.value(*on_false).data(),
                    );
                    if self.rg(*gate) {
                        let gg = self.grad_buf(&mut grads, *gate);
                        for (((d, &gi), (&t, &f)), _) in
                            gg.iter_mut().zip(&g).zip(tv.iter().zip(fv)).zip(gv)
                        {
                            *d += gi * (t - f);
                        }
                    }
                    if self.rg(*on_true) {
                        let gt = self.grad_buf(&mut grads, *on_true);
                        for ((d, &gi), &z) in gt.iter_mut().zip(&g).zip(gv) {
                            *d += gi * z;
                        }
                    }
                    if self.rg(*on_false) {
                        let gf = self.grad_buf(&mut grads, *on_false);
                        for ((d, &gi), &z) in gf.iter_mut().zip(&g).zip(gv) {
                            *d += gi * (1.0 - z);
                        }
                    }
                }
                Op::Concat(a, b) => {
                    let na = self.value(*a).len();
                    if self.rg(*a) {
                        add_into(self.grad_buf(&mut grads, *a), &g[..na]);
                    }
                    if self.rg(*b) {
                        add_into(self.grad_buf(&mut grads, *b), &g[na..]);
                    }
                }
                Op::Row { table, row } => {
                    if self.rg(*table) {
                        let cols = self.value(*table).cols();
                        let gt = self.grad_buf(&mut grads, *table);
                        add_into(&mut gt[row * cols..(row + 1) * cols], &g);
                    }
                }
                Op::Sum(x) => {
                    if self.rg(*x) {
                        let gx = self.grad_buf(&mut grads, *x);
                        for d in gx.iter_mut() {
                            *d += g[0];
                        }
                    }
                }
                Op::SqErrSum(a, b) => {
                    let (at, bt) = (self.value(*a).data(), self.value(*b).data());
                    if self.rg(*a) {
                        let ga = self.grad_buf(&mut grads, *a);
                        for ((d, &x), &y) in ga.iter_mut().zip(at).zip(bt) {
                            *d += 2.0 * (x - y) * g[0];
                        }
                    }
                    if self.rg(*b) {
                        let gb = self.grad_buf(&mut grads, *b);
                        for ((d, &x), &y) in gb.iter_mut().zip(at).zip(bt) {
                            *d -= 2.0 * (x - y) * g[0];
                        }
                    }
                }
                Op::CrossEntropyLogits { logits, target } => {
                    if self.rg(*logits) {
                        let l = self.value(*logits).data();
                        let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = l.iter().map(|v| (v - max).exp()).sum();
                        let gl = self.grad_buf(&mut grads, *logits);
                        for (i, (d, &v)) in gl.iter_mut().zip(l).enumerate() {
                            let p = (v - max).exp() / denom;
                            let onehot = if i == *target { 1.0 } else { 0.0 };
                            *d += g[0] * (p - onehot);
                        }
                    }
                }
                Op::KlDiag { mu, sigma } => {
                    if self.rg(*mu) {
                        let mv = self.value(*mu).data();
                        let gm = self.grad_buf(&mut grads, *mu);
                        for (d, &m) in gm.iter_mut().zip(mv) {
                            *d += g[0] * m;
                        }
                    }
                    if self.rg(*sigma) {
                        let sv = self.value(*sigma).data();
                        let gs = self.grad_buf(&mut grads, *sigma);
                        for (d, &s) in gs.iter_mut().zip(sv) {
                            *d += g[0] * (s - 1.0 / s);
                        }
                    }
                }
                Op::HingeAbove { x, threshold } => {
                    if self.rg(*x) {
                        let active = self.value(*x).item() > *threshold;
                        if active {
                            let gx = self.grad_buf(&mut grads, *x);
                            gx[0] += g[0];
                        }
                    }
                }
                Op::WeightedSum(terms) => {
                    for (id, w) in terms {
                        if self.rg(*id) {
                            let gt = self.grad_buf(&mut grads, *id);
                            gt[0] += g[0] * w;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    // Lazily allocated gradient buffer for a parent node. Uses raw access
    // to sidestep the borrow on `self` held by value lookups above.
    #[allow(clippy::mut_from_ref)]
    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> &'g mut Vec<f64> {
        let len = self.value(id).len();
        grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }
}

/// `out += W x` for row-major `W: [m, n]`.
fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64], n: usize) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(n)) {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// `out += W^T g` for row-major `W: [m, n]`, `g: [m]`, `out: [n]`.
fn matvec_t_acc(w: &[f64], g: &[f64], out: &mut [f64], n: usize) {
    for (row, &gi) in w.chunks_exact(n).zip(g) {
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += wv * gi;
        }
    }
}

/// `out += g ⊗ x` flattened row-major.
fn outer_acc(out: &mut [f64], g: &[f64], x: &[f64]) {
    let n = x.len();
    for (row, &gi) in out.chunks_exact_mut(n).zip(g) {
        for (o, &xv) in row.iter_mut().zip(x) {
            *o += gi * xv;
        }
    }
}

fn add_into(out: &mut [f64], g: &[f64]) {
    for (o, &v) in out.iter_mut().zip(g) {
        *o += v;
    }
}

fn sub_into(out: &mut [f64], g: &[f64]) {
    for (o, &v) in out.iter_mut().zip(g) {
        *o -= v;
    }
}

fn zip_map(a: &Tensor, b: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op,
            expected: format!("[{}]", a.len()),
            got: format!("[{}]", b.len()),
        });
    }
    Ok(Tensor::vector(
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    ))
}
