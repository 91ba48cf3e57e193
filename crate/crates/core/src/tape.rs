//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of a forward pass in execution order.
//! [`Tape::backward`] replays the records once, in strict reverse order,
//! accumulating adjoints; gradients for registered parameters are then
//! exported back into the owning [`ParamStore`].
//!
//! The tape is built fresh for every training step and dropped afterwards.
//! Only rank-1/rank-2 tensors are supported and broadcasting is limited to
//! scalars, which is all the models here need.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
#[allow(dead_code)] // some payloads exist only for Debug output
enum Op {
    /// Input value; `param` links the leaf to a store entry for grad export.
    Leaf { param: Option<ParamId> },
    /// `[m,k] x [k,n] -> [m,n]`
    Matmul(Var, Var),
    /// `[m,k] x [k] -> [m]`
    Matvec(Var, Var),
    /// `transpose([m,k]) x [m] -> [k]` (used for embedding-weighted mixtures)
    MatvecT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `mul * x + add`, scalar coefficients
    Affine { x: Var, mul: Real, add: Real },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    /// Concatenation of two rank-1 tensors.
    Concat(Var, Var),
    /// Row `i` of a rank-2 tensor (embedding lookup).
    Row(Var, usize),
    /// Sum of all elements -> scalar.
    Sum(Var),
    /// `-log softmax(logits)[target]` -> scalar, max-stabilized.
    SoftmaxCrossEntropy { logits: Var, target: usize },
    /// `softmax(x / temp)` over a rank-1 tensor.
    Softmax { x: Var, temp: Real },
    /// Elementwise maximum over a non-empty list of same-shape tensors.
    VecMax(Vec<Var>),
    /// Identity forward, zero adjoint.
    StopGrad(Var),
    /// `ln(max(x, floor))` elementwise.
    LnClamped { x: Var, floor: Real },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records one forward pass for reverse-mode differentiation.
pub struct Tape {
    nodes: Vec<Node>,
    param_cache: HashMap<ParamId, Var>,
    ran_backward: bool,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), param_cache: HashMap::new(), ran_backward: false, grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the backward target w.r.t. `v`. `None` before backward or
    /// for nodes that did not participate.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        #[cfg(debug_assertions)]
        {
            assert!(value.all_finite(), "non-finite value produced by {op:?}");
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: None }, false)
    }

    pub fn constant_scalar(&mut self, v: Real) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Differentiable input not tied to a parameter store (tests, probes).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: None }, true)
    }

    /// Register a store parameter on the tape. Repeated registrations of the
    /// same parameter return the same node so gradients accumulate naturally.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_cache.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf { param: Some(id) }, true);
        self.param_cache.insert(id, v);
        v
    }

    /// Register a store parameter as a frozen constant (no gradient).
    pub fn param_frozen(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.constant(store.value(id).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::Shape(format!(
                "matmul expects [m,k]x[k,n], got {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &ta.data()[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (l, &av) in arow.iter().enumerate() {
                let brow = &tb.data()[l * n..(l + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Matmul(a, b), rg))
    }

    /// Matrix-vector product `[m,k] x [k] -> [m]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (tw, tx) = (self.value(w), self.value(x));
        if tw.rank() != 2 || tx.rank() != 1 || tw.shape()[1] != tx.len() {
            return Err(Error::Shape(format!(
                "matvec expects [m,k]x[k], got {:?} x {:?}",
                tw.shape(),
                tx.shape()
            )));
        }
        let m = tw.shape()[0];
        let out: Vec<Real> = (0..m)
            .map(|i| tw.row(i).iter().zip(tx.data()).map(|(a, b)| a * b).sum())
            .collect();
        let rg = self.rg(w) || self.rg(x);
        Ok(self.push(Tensor::vector(out), Op::Matvec(w, x), rg))
    }

    /// Transposed matrix-vector product `transpose([m,k]) x [m] -> [k]`.
    pub fn matvec_t(&mut self, w: Var, x: Var) -> Result<Var> {
        let (tw, tx) = (self.value(w), self.value(x));
        if tw.rank() != 2 || tx.rank() != 1 || tw.shape()[0] != tx.len() {
            return Err(Error::Shape(format!(
                "matvec_t expects transpose([m,k]) x [m], got {:?} x {:?}",
                tw.shape(),
                tx.shape()
            )));
        }
        let k = tw.shape()[1];
        let mut out = vec![0.0; k];
        for (i, &xv) in tx.data().iter().enumerate() {
            for (o, &wv) in out.iter_mut().zip(tw.row(i)) {
                *o += xv * wv;
            }
        }
        let rg = self.rg(w) || self.rg(x);
        Ok(self.push(Tensor::vector(out), Op::MatvecT(w, x), rg))
    }

    fn elementwise_pair(&mut self, a: Var, b: Var, name: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{name} operands differ: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair(a, b, "add")?;
        let out: Vec<Real> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair(a, b, "sub")?;
        let out: Vec<Real> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair(a, b, "mul")?;
        let out: Vec<Real> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// `mul * x + add` with scalar coefficients.
    pub fn affine(&mut self, x: Var, mul: Real, add: Real) -> Var {
        let out: Vec<Real> = self.value(x).data().iter().map(|v| mul * v + add).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), out).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::Affine { x, mul, add }, rg)
    }

    pub fn scale(&mut self, x: Var, c: Real) -> Var {
        self.affine(x, c, 0.0)
    }

    /// `1 - x` elementwise.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    fn unary(&mut self, x: Var, f: impl Fn(Real) -> Real, op: Op) -> Var {
        let out: Vec<Real> = self.value(x).data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), out).expect("same shape");
        let rg = self.rg(x);
        self.push(t, op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Real::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    /// Identity value; gradients do not flow past it.
    pub fn stop_grad(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.push(t, Op::StopGrad(x), false)
    }

    /// `ln(max(x, floor))` elementwise; keeps saturated probabilities finite.
    pub fn ln_clamped(&mut self, x: Var, floor: Real) -> Var {
        let out: Vec<Real> = self.value(x).data().iter().map(|&v| v.max(floor).ln()).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), out).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::LnClamped { x, floor }, rg)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 1 || tb.rank() != 1 {
            return Err(Error::Shape("concat expects rank-1 operands".into()));
        }
        let mut out = ta.data().to_vec();
        out.extend_from_slice(tb.data());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::vector(out), Op::Concat(a, b), rg))
    }

    /// Row `i` of a rank-2 tensor, as a rank-1 tensor.
    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let tm = self.value(m);
        if tm.rank() != 2 {
            return Err(Error::Shape("row expects a rank-2 tensor".into()));
        }
        if i >= tm.shape()[0] {
            return Err(Error::Contract(format!("row {i} out of range for {:?}", tm.shape())));
        }
        let out = tm.row(i).to_vec();
        let rg = self.rg(m);
        Ok(self.push(Tensor::vector(out), Op::Row(m, i), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: Real = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `-log softmax(logits)[target]`, max-stabilized.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 1 {
            return Err(Error::Shape("softmax_cross_entropy expects rank-1 logits".into()));
        }
        if target >= t.len() {
            return Err(Error::Contract(format!(
                "target {target} out of range for {} logits",
                t.len()
            )));
        }
        let max = t.data().iter().cloned().fold(Real::NEG_INFINITY, Real::max);
        let log_sum: Real = t.data().iter().map(|&v| (v - max).exp()).sum::<Real>().ln();
        let loss = log_sum + max - t.data()[target];
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCrossEntropy { logits, target }, rg))
    }

    /// `softmax(x / temp)` over a rank-1 tensor.
    pub fn softmax(&mut self, x: Var, temp: Real) -> Result<Var> {
        if temp <= 0.0 {
            return Err(Error::Contract(format!("softmax temperature must be > 0, got {temp}")));
        }
        let t = self.value(x);
        if t.rank() != 1 {
            return Err(Error::Shape("softmax expects a rank-1 tensor".into()));
        }
        let scaled: Vec<Real> = t.data().iter().map(|&v| v / temp).collect();
        let max = scaled.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
        let exps: Vec<Real> = scaled.iter().map(|&v| (v - max).exp()).collect();
        let z: Real = exps.iter().sum();
        let probs: Vec<Real> = exps.iter().map(|&e| e / z).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::vector(probs), Op::Softmax { x, temp }, rg))
    }

    /// Elementwise maximum over a non-empty list of same-shape tensors.
    pub fn vec_max(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Contract("vec_max over empty list".into()))?;
        let shape = self.value(first).shape().to_vec();
        for &v in xs {
            if self.value(v).shape() != shape.as_slice() {
                return Err(Error::Shape("vec_max operands differ in shape".into()));
            }
        }
        let n = self.value(first).len();
        let mut out = self.value(first).data().to_vec();
        for &v in &xs[1..] {
            for (o, &cand) in out.iter_mut().zip(self.value(v).data()) {
                if cand > *o {
                    *o = cand;
                }
            }
        }
        let rg = xs.iter().any(|&v| self.rg(v));
        let t = Tensor::new(shape, out).expect("shape checked");
        debug_assert_eq!(t.len(), n);
        Ok(self.push(t, Op::VecMax(xs.to_vec()), rg))
    }

    fn add_grad(&mut self, v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Backpropagate from a scalar node. Visits tape records in strict
    /// reverse order exactly once and accumulates parameter gradients into
    /// `store` (marking them ready for the optimizer).
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.backward_multi(&[loss], store)
    }

    /// Backward from a sum of several scalar targets in a single sweep.
    pub fn backward_multi(&mut self, losses: &[Var], store: &mut ParamStore) -> Result<()> {
        if self.ran_backward {
            return Err(Error::Contract("backward already run on this tape".into()));
        }
        for &l in losses {
            if self.value(l).len() != 1 {
                return Err(Error::Contract(format!(
                    "backward target must be scalar, got shape {:?}",
                    self.value(l).shape()
                )));
            }
        }
        self.ran_backward = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        for &l in losses {
            self.add_grad(l, Tensor::scalar(1.0));
        }

        for i in (0..self.nodes.len()).rev() {
            if self.grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let g = self.grads[i].clone().expect("checked above");
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf { param } => {
                    if let Some(id) = param {
                        store.accumulate_grad(id, &g);
                    }
                }
                Op::Matmul(a, b) => {
                    let (m, k) = (self.value(a).shape()[0], self.value(a).shape()[1]);
                    let n = self.value(b).shape()[1];
                    if self.rg(a) {
                        // dA = dC * B^T
                        let mut da = vec![0.0; m * k];
                        for r in 0..m {
                            for c in 0..k {
                                let brow = self.value(b).row(c);
                                da[r * k + c] = g.row(r).iter().zip(brow).map(|(x, y)| x * y).sum();
                            }
                        }
                        self.add_grad(a, Tensor::new(vec![m, k], da).expect("shape"));
                    }
                    if self.rg(b) {
                        // dB = A^T * dC
                        let mut db = vec![0.0; k * n];
                        let ta = self.value(a).clone();
                        for r in 0..m {
                            for c in 0..k {
                                let av = ta.at2(r, c);
                                for j in 0..n {
                                    db[c * n + j] += av * g.at2(r, j);
                                }
                            }
                        }
                        self.add_grad(b, Tensor::new(vec![k, n], db).expect("shape"));
                    }
                }
                Op::Matvec(w, x) => {
                    let (m, k) = (self.value(w).shape()[0], self.value(w).shape()[1]);
                    if self.rg(w) {
                        let mut dw = vec![0.0; m * k];
                        let tx = self.value(x).clone();
                        for r in 0..m {
                            let gr = g.data()[r];
                            for (d, &xv) in dw[r * k..(r + 1) * k].iter_mut().zip(tx.data()) {
                                *d += gr * xv;
                            }
                        }
                        self.add_grad(w, Tensor::new(vec![m, k], dw).expect("shape"));
                    }
                    if self.rg(x) {
                        let mut dx = vec![0.0; k];
                        let tw = self.value(w).clone();
                        for r in 0..m {
                            let gr = g.data()[r];
                            for (d, &wv) in dx.iter_mut().zip(tw.row(r)) {
                                *d += gr * wv;
                            }
                        }
                        self.add_grad(x, Tensor::vector(dx));
                    }
                }
                Op::MatvecT(w, x) => {
                    let (m, k) = (self.value(w).shape()[0], self.value(w).shape()[1]);
                    if self.rg(w) {
                        let mut dw = vec![0.0; m * k];
                        let tx = self.value(x).clone();
                        for r in 0..m {
                            let xv = tx.data()[r];
                            for (d, &gv) in dw[r * k..(r + 1) * k].iter_mut().zip(g.data()) {
                                *d += xv * gv;
                            }
                        }
                        self.add_grad(w, Tensor::new(vec![m, k], dw).expect("shape"));
                    }
                    if self.rg(x) {
                        let tw = self.value(w).clone();
                        let dx: Vec<Real> = (0..m)
                            .map(|r| tw.row(r).iter().zip(g.data()).map(|(a, b)| a * b).sum())
                            .collect();
                        self.add_grad(x, Tensor::vector(dx));
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(a) {
                        self.add_grad(a, g.clone());
                    }
                    if self.rg(b) {
                        self.add_grad(b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(a) {
                        self.add_grad(a, g.clone());
                    }
                    if self.rg(b) {
                        let neg: Vec<Real> = g.data().iter().map(|v| -v).collect();
                        self.add_grad(b, Tensor::new(g.shape().to_vec(), neg).expect("shape"));
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(a) {
                        let da: Vec<Real> =
                            g.data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
                        self.add_grad(a, Tensor::new(g.shape().to_vec(), da).expect("shape"));
                    }
                    if self.rg(b) {
                        let db: Vec<Real> =
                            g.data().iter().zip(self.value(a).data()).map(|(x, y)| x * y).collect();
                        self.add_grad(b, Tensor::new(g.shape().to_vec(), db).expect("shape"));
                    }
                }
                Op::Affine { x, mul, .. } => {
                    let dx: Vec<Real> = g.data().iter().map(|v| mul * v).collect();
                    self.add_grad(x, Tensor::new(g.shape().to_vec(), dx).expect("shape"));
                }
                Op::Sigmoid(x) => {
                    let dx: Vec<Real> = g
                        .data()
                        .iter()
                        .zip(self.nodes[i].value.data())
                        .map(|(gv, &s)| gv * s * (1.0 - s))
                        .collect();
                    self.add_grad(x, Tensor::new(g.shape().to_vec(), dx).expect("shape"));
                }
                Op::Tanh(x) => {
                    let dx: Vec<Real> = g
                        .data()
                        .iter()
                        .zip(self.nodes[i].value.data())
                        .map(|(gv, &t)| gv * (1.0 - t * t))
                        .collect();
                    self.add_grad(x, Tensor::new(g.shape().to_vec(), dx).expect("shape"));
                }
                Op::Relu(x) => {
                    let dx: Vec<Real> = g
                        .data()
                        .iter()
                        .zip(self.value(x).data())
                        .map(|(gv, &v)| if v > 0.0 { *gv } else { 0.0 })
                        .collect();
                    self.add_grad(x, Tensor::new(g.shape().to_vec(), dx).expect("shape"));
                }
                Op::Concat(a, b) => {
                    let na = self.value(a).len();
                    if self.rg(a) {
                        self.add_grad(a, Tensor::vector(g.data()[..na].to_vec()));
                    }
                    if self.rg(b) {
                        self.add_grad(b, Tensor::vector(g.data()[na..].to_vec()));
                    }
                }
                Op::Row(m, r) => {
                    let shape = self.value(m).shape().to_vec();
                    let cols = shape[1];
                    let mut dm = Tensor::zeros(&shape);
                    dm.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(g.data());
                    self.add_grad(m, dm);
                }
                Op::Sum(x) => {
                    let n = self.value(x).len();
                    let gv = g.item();
                    self.add_grad(
                        x,
                        Tensor::new(self.value(x).shape().to_vec(), vec![gv; n]).expect("shape"),
                    );
                }
                Op::SoftmaxCrossEntropy { logits, target } => {
                    let t = self.value(logits);
                    let max = t.data().iter().cloned().fold(Real::NEG_INFINITY, Real::max);
                    let exps: Vec<Real> = t.data().iter().map(|&v| (v - max).exp()).collect();
                    let z: Real = exps.iter().sum();
                    let gv = g.item();
                    let mut dx: Vec<Real> = exps.iter().map(|&e| gv * e / z).collect();
                    dx[target] -= gv;
                    self.add_grad(logits, Tensor::vector(dx));
                }
                Op::Softmax { x, temp } => {
                    // dx = (p .* g - p * (p . g)) / temp
                    let p = self.nodes[i].value.data().to_vec();
                    let dot: Real = p.iter().zip(g.data()).map(|(a, b)| a * b).sum();
                    let dx: Vec<Real> =
                        p.iter().zip(g.data()).map(|(&pi, &gi)| pi * (gi - dot) / temp).collect();
                    self.add_grad(x, Tensor::vector(dx));
                }
                Op::VecMax(xs) => {
                    // Route each element's gradient to the first input that
                    // attains the maximum.
                    let out = self.nodes[i].value.data().to_vec();
                    for j in 0..out.len() {
                        let winner = xs
                            .iter()
                            .find(|&&v| self.value(v).data()[j] == out[j])
                            .copied()
                            .expect("max came from some input");
                        if self.rg(winner) {
                            let mut dg = Tensor::zeros(self.value(winner).shape());
                            dg.data_mut()[j] = g.data()[j];
                            self.add_grad(winner, dg);
                        }
                    }
                }
                Op::StopGrad(_) => {}
                Op::LnClamped { x, floor } => {
                    let dx: Vec<Real> = g
                        .data()
                        .iter()
                        .zip(self.value(x).data())
                        .map(|(gv, &v)| if v > floor { gv / v } else { 0.0 })
                        .collect();
                    self.add_grad(x, Tensor::new(g.shape().to_vec(), dx).expect("shape"));
                }
            }
        }
        store.mark_grads_ready();
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Real, b: Real, tol: Real) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn matmul_identity_passes_through() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::eye(2));
        let m = tape.constant(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let r = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(r).data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_zero_and_rectangular() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap());
        let r = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0]);

        let a = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.constant(Tensor::matrix(2, 1, vec![5.0, 6.0]).unwrap());
        let r = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(r).data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = tape.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn elementwise_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 1.0]));
        let s = tape.sigmoid(x);
        close(tape.value(s).data()[0], 0.5, 0.0);
        close(tape.value(s).data()[1], 0.7310585786, 1e-9);
        let t = tape.tanh(x);
        close(tape.value(t).data()[0], 0.0, 0.0);
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![3.0, 5.0]));
        let sum = tape.add(a, b).unwrap();
        assert_eq!(tape.value(sum).data(), &[4.0, 7.0]);
        let c = tape.constant(Tensor::vector(vec![1.0]));
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn cross_entropy_matches_scalar_oracles() {
        let mut tape = Tape::new();
        let uniform = tape.constant(Tensor::vector(vec![0.0; 4]));
        let l = tape.softmax_cross_entropy(uniform, 3).unwrap();
        close(tape.value(l).item(), (4.0 as Real).ln(), 1e-12);

        let sat = tape.constant(Tensor::vector(vec![1000.0, 0.0]));
        let l = tape.softmax_cross_entropy(sat, 0).unwrap();
        assert!(tape.value(l).item().is_finite());
        close(tape.value(l).item(), 0.0, 1e-9);

        let x = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let l = tape.softmax_cross_entropy(x, 2).unwrap();
        close(tape.value(l).item(), 0.40760596, 1e-7);

        assert!(tape.softmax_cross_entropy(x, 3).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones_and_square_is_2x() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let s = tape.sum(wv);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.grad(w).data(), &[1.0, 1.0]);

        store.zero_grads();
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let sq = tape.mul(wv, wv).unwrap();
        let s = tape.sum(sq);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.grad(w).data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_double_run() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        assert!(tape.backward(wv, &mut store).is_err());
        let s = tape.sum(wv);
        tape.backward(s, &mut store).unwrap();
        assert!(tape.backward(s, &mut store).is_err());
    }

    #[test]
    fn non_participating_leaves_get_zero_grad() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![1.0]));
        let unused = store.add("unused", Tensor::vector(vec![5.0]));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let s = tape.sum(wv);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.grad(unused).data(), &[0.0]);
    }

    #[test]
    fn stop_grad_blocks_flow() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![3.0]));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let frozen = tape.stop_grad(wv);
        let prod = tape.mul(wv, frozen).unwrap();
        let s = tape.sum(prod);
        tape.backward(s, &mut store).unwrap();
        // d/dw of w * const(3) = 3, not 2w = 6.
        assert_eq!(store.grad(w).data(), &[3.0]);
    }

    #[test]
    fn tape_replay_gives_identical_gradients() {
        let run = || {
            let mut store = ParamStore::new();
            let w = store.add("w", Tensor::vector(vec![0.3, -0.7, 0.2]));
            let mut tape = Tape::new();
            let wv = tape.param(&store, w);
            let t = tape.tanh(wv);
            let sq = tape.mul(t, t).unwrap();
            let s = tape.sum(sq);
            tape.backward(s, &mut store).unwrap();
            store.grad(w).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn softmax_temperature_limits() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![5.0, 1.0, -2.0]));
        let hot = tape.softmax(x, 1e6).unwrap();
        for &p in tape.value(hot).data() {
            close(p, 1.0 / 3.0, 1e-5);
        }
        let cold = tape.softmax(x, 0.01).unwrap();
        close(tape.value(cold).data()[0], 1.0, 1e-9);
        assert!(tape.softmax(x, 0.0).is_err());
    }

    #[test]
    fn vec_max_routes_gradient_to_winner() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(vec![1.0, 5.0]));
        let b = store.add("b", Tensor::vector(vec![2.0, 3.0]));
        let mut tape = Tape::new();
        let av = tape.param(&store, a);
        let bv = tape.param(&store, b);
        let m = tape.vec_max(&[av, bv]).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0, 5.0]);
        let s = tape.sum(m);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.grad(a).data(), &[0.0, 1.0]);
        assert_eq!(store.grad(b).data(), &[1.0, 0.0]);
    }
}
