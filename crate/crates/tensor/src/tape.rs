//! Reverse-mode autodiff over a linear operation tape.
//!
//! Ops append nodes in execution order, so the tape is already a topological
//! order and the backward sweep is a single reverse pass. The tape is cleared
//! by [`Tape::backward`] and rebuilt on the next step.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Handle to a value on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

enum Op<E> {
    Leaf,
    Constant,
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: E },
    Matmul { a: Var, b: Var },
    Transpose { a: Var },
    Reshape { a: Var },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    Softmax { a: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, eps: E },
    Relu { a: Var },
    Embedding { table: Var, ids: Vec<u32> },
    CrossEntropy { logits: Var, targets: Vec<u32>, ignore: u32, live: usize },
    Sum { a: Var },
    Mean { a: Var },
}

struct Node<E> {
    value: Tensor<E>,
    op: Op<E>,
    requires_grad: bool,
}

pub struct Tape<E> {
    nodes: Vec<Node<E>>,
    grad_enabled: bool,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grad_enabled: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    /// Run `f` with gradient recording disabled: every value produced inside
    /// is a parentless constant and contributes nothing to any backward pass.
    pub fn no_grad<R>(&mut self, f: impl FnOnce(&mut Self) -> R) -> R {
        let saved = self.grad_enabled;
        self.grad_enabled = false;
        let out = f(self);
        self.grad_enabled = saved;
        out
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Trainable leaf; its gradient is retained by `backward`.
    pub fn param(&mut self, t: &Tensor<E>) -> Var {
        let requires = self.grad_enabled;
        let op = if requires { Op::Leaf } else { Op::Constant };
        self.push(t.clone(), op, requires)
    }

    pub fn constant(&mut self, t: Tensor<E>) -> Var {
        self.push(t, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.id].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.id].requires_grad
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.id].requires_grad
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, requires: bool) -> Var {
        if self.grad_enabled {
            self.nodes.push(Node { value, op, requires_grad: requires });
        } else {
            self.nodes.push(Node { value, op: Op::Constant, requires_grad: false });
        }
        Var { id: self.nodes.len() - 1 }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::add(self.value(a), self.value(b))?;
        let r = self.req(a) || self.req(b);
        Ok(self.push(v, Op::Add { a, b }, r))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::mul(self.value(a), self.value(b))?;
        let r = self.req(a) || self.req(b);
        Ok(self.push(v, Op::Mul { a, b }, r))
    }

    pub fn scale(&mut self, a: Var, c: E) -> Var {
        let v = kernels::scale(self.value(a), c);
        let r = self.req(a);
        self.push(v, Op::Scale { a, c }, r)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        let r = self.req(a) || self.req(b);
        Ok(self.push(v, Op::Matmul { a, b }, r))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = kernels::transpose(self.value(a))?;
        let r = self.req(a);
        Ok(self.push(v, Op::Transpose { a }, r))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        let r = self.req(a);
        Ok(self.push(v, Op::Reshape { a }, r))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor<E>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = kernels::concat(&tensors, axis)?;
        let r = parts.iter().any(|&p| self.req(p));
        Ok(self.push(v, Op::Concat { parts: parts.to_vec(), axis }, r))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = kernels::slice(self.value(a), axis, start, len)?;
        let r = self.req(a);
        Ok(self.push(v, Op::Slice { a, axis, start }, r))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = kernels::softmax(self.value(a), axis)?;
        let r = self.req(a);
        Ok(self.push(v, Op::Softmax { a, axis }, r))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: E) -> Result<Var> {
        let v = kernels::layer_norm(self.value(x), self.value(gain), self.value(bias), eps)?;
        let r = self.req(x) || self.req(gain) || self.req(bias);
        Ok(self.push(v, Op::LayerNorm { x, gain, bias, eps }, r))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = kernels::relu(self.value(a));
        let r = self.req(a);
        self.push(v, Op::Relu { a }, r)
    }

    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let v = kernels::embedding_lookup(self.value(table), ids)?;
        let r = self.req(table);
        Ok(self.push(v, Op::Embedding { table, ids: ids.to_vec() }, r))
    }

    /// Mean negative log-likelihood over rows whose target is not `ignore`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], ignore: u32) -> Result<Var> {
        let (loss, live) = kernels::cross_entropy(self.value(logits), targets, ignore)?;
        let r = self.req(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), ignore, live },
            r,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(kernels::sum(self.value(a)));
        let r = self.req(a);
        self.push(v, Op::Sum { a }, r)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let v = Tensor::scalar(kernels::sum(self.value(a)) * E::from_f64(1.0 / n as f64));
        let r = self.req(a);
        self.push(v, Op::Mean { a }, r)
    }

    /// Reverse sweep from a scalar loss. Gradients of leaves created with
    /// [`Tape::param`] are retained in the result; interior buffers are
    /// released as the sweep passes them. The tape is reset afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<E>> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        if self.nodes[loss.id].value.numel() != 1 {
            return Err(Error::NonScalarLoss { shape: self.nodes[loss.id].value.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.id].requires_grad {
            grads[loss.id] = Some(Tensor::full(self.nodes[loss.id].value.shape().to_vec(), E::ONE));
            for i in (0..=loss.id).rev() {
                let Some(g) = grads[i].take() else { continue };
                if let Op::Leaf = self.nodes[i].op {
                    grads[i] = Some(g);
                    continue;
                }
                self.propagate(i, &g, &mut grads);
            }
        }
        self.nodes.clear();
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor<E>, grads: &mut [Option<Tensor<E>>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::Add { a, b } => {
                if self.req(*a) {
                    let buf = grad_buf(&mut grads[a.id], self.value(*a).shape());
                    for (d, &s) in buf.data_mut().iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
                if self.req(*b) {
                    let bshape = self.value(*b).shape().to_vec();
                    let buf = grad_buf(&mut grads[b.id], &bshape);
                    let inner = buf.numel();
                    for (idx, &s) in g.data().iter().enumerate() {
                        buf.data_mut()[idx % inner] += s;
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.req(*a) {
                    let vb = self.value(*b).data();
                    let buf = grad_buf(&mut grads[a.id], self.value(*a).shape());
                    for ((d, &s), &y) in buf.data_mut().iter_mut().zip(g.data()).zip(vb) {
                        *d += s * y;
                    }
                }
                if self.req(*b) {
                    let va = self.value(*a).data();
                    let buf = grad_buf(&mut grads[b.id], self.value(*b).shape());
                    for ((d, &s), &x) in buf.data_mut().iter_mut().zip(g.data()).zip(va) {
                        *d += s * x;
                    }
                }
            }
            Op::Scale { a, c } => {
                if self.req(*a) {
                    let buf = grad_buf(&mut grads[a.id], self.value(*a).shape());
                    for (d, &s) in buf.data_mut().iter_mut().zip(g.data()) {
                        *d += s * *c;
                    }
                }
            }
            Op::Matmul { a, b } => {
                if self.req(*a) {
                    let vb = self.value(*b);
                    let buf = grad_buf(&mut grads[a.id], self.value(*a).shape());
                    kernels::gemm_acc(buf, E::ONE, g, false, vb, true);
                }
                if self.req(*b) {
                    let va = self.value(*a);
                    let buf = grad_buf(&mut grads[b.id], self.value(*b).shape());
                    kernels::gemm_acc(buf, E::ONE, va, true, g, false);
                }
            }
            Op::Transpose { a } => {
                if self.req(*a) {
                    let gt = kernels::transpose(g).expect("transpose grad");
                    let buf = grad_buf(&mut grads[a.id], self.value(*a).shape());
                    for (d, &s) in buf.data_mut().iter_mut().zip(gt.data()) {
                        *d += s;
                    }
                }
            }
            Op::Reshape { a } => {
                if self.req(*a) {
                    let buf = grad_buf(&mut grads[a.id], self.value(*a).shape());
                    for (d, &s) in buf.data_mut().iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let mut start = 0;
                for &p in parts {
                    let len = self.value(p).shape()[*axis];
                    if self.req(p) {
                        let gp = kernels::slice(g, *axis, start, len).expect("concat grad slice");
                        let buf = grad_buf(&mut grads[p.id], self.value(p).shape());
                        for (d, &s) in buf.data_mut().iter_mut().zip(gp.data()) {
                            *d += s;
                        }
                    }
                    start += len;
                }
            }
            Op::Slice { a, axis, start } => {
                if self.req(*a) {
                    let ashape = self.value(*a).shape().to_vec();
                    let (outer, lane, inner) =
                        kernels::axis_split("slice", &ashape, *axis).expect("slice grad");
                    let len = out.shape()[*axis];
                    let buf = grad_buf(&mut grads[a.id], &ashape);
                    for o in 0..outer {
                        let src = &g.data()[o * len * inner..(o + 1) * len * inner];
                        let base = (o * lane + start) * inner;
                        let dst = &mut buf.data_mut()[base..base + len * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Softmax { a, axis } => {
                if self.req(*a) {
                    let (outer, lane, inner) =
                        kernels::axis_split("softmax", out.shape(), *axis).expect("softmax grad");
                    let y = out.data();
                    let buf = grad_buf(&mut grads[a.id], self.value(*a).shape());
                    for o in 0..outer {
                        for iidx in 0..inner {
                            let base = o * lane * inner + iidx;
                            let mut dot = E::ZERO;
                            for l in 0..lane {
                                let k = base + l * inner;
                                dot += g.data()[k] * y[k];
                            }
                            for l in 0..lane {
                                let k = base + l * inner;
                                buf.data_mut()[k] += y[k] * (g.data()[k] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let vx = self.value(*x);
                let vgain = self.value(*gain);
                let d = *vx.shape().last().unwrap();
                let rows = vx.numel() / d;
                let inv_d = E::from_f64(1.0 / d as f64);
                for r in 0..rows {
                    let xrow = &vx.data()[r * d..(r + 1) * d];
                    let grow = &g.data()[r * d..(r + 1) * d];
                    let mut mean = E::ZERO;
                    for &v in xrow {
                        mean += v;
                    }
                    mean = mean * inv_d;
                    let mut var = E::ZERO;
                    for &v in xrow {
                        let c = v - mean;
                        var += c * c;
                    }
                    var = var * inv_d;
                    let inv_std = E::ONE / (var + *eps).sqrt();
                    if self.req(*gain) || self.req(*bias) {
                        for j in 0..d {
                            let xhat = (xrow[j] - mean) * inv_std;
                            if self.req(*gain) {
                                grad_buf(&mut grads[gain.id], &[d]).data_mut()[j] += grow[j] * xhat;
                            }
                            if self.req(*bias) {
                                grad_buf(&mut grads[bias.id], &[d]).data_mut()[j] += grow[j];
                            }
                        }
                    }
                    if self.req(*x) {
                        let mut mean_h = E::ZERO;
                        let mut mean_hx = E::ZERO;
                        for j in 0..d {
                            let xhat = (xrow[j] - mean) * inv_std;
                            let h = grow[j] * vgain.data()[j];
                            mean_h += h;
                            mean_hx += h * xhat;
                        }
                        mean_h = mean_h * inv_d;
                        mean_hx = mean_hx * inv_d;
                        let buf = grad_buf(&mut grads[x.id], vx.shape());
                        for j in 0..d {
                            let xhat = (xrow[j] - mean) * inv_std;
                            let h = grow[j] * vgain.data()[j];
                            buf.data_mut()[r * d + j] += inv_std * (h - mean_h - xhat * mean_hx);
                        }
                    }
                }
            }
            Op::Relu { a } => {
                if self.req(*a) {
                    let va = self.value(*a).data();
                    let buf = grad_buf(&mut grads[a.id], self.value(*a).shape());
                    for ((d, &s), &x) in buf.data_mut().iter_mut().zip(g.data()).zip(va) {
                        if x > E::ZERO {
                            *d += s;
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if self.req(*table) {
                    let d = self.value(*table).shape()[1];
                    let tshape = self.value(*table).shape().to_vec();
                    let buf = grad_buf(&mut grads[table.id], &tshape);
                    for (row, &id) in ids.iter().enumerate() {
                        let src = &g.data()[row * d..(row + 1) * d];
                        let dst = &mut buf.data_mut()[id as usize * d..(id as usize + 1) * d];
                        for (x, &s) in dst.iter_mut().zip(src) {
                            *x += s;
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, ignore, live } => {
                if self.req(*logits) {
                    let vl = self.value(*logits);
                    let (_, v) = vl.dims2().expect("cross_entropy grad");
                    let scale = g.item() * E::from_f64(1.0 / *live as f64);
                    let buf = grad_buf(&mut grads[logits.id], vl.shape());
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue;
                        }
                        let row = &vl.data()[r * v..(r + 1) * v];
                        let mut m = row[0];
                        for &x in &row[1..] {
                            m = m.max(x);
                        }
                        let mut sum = E::ZERO;
                        for &x in row {
                            sum += (x - m).exp();
                        }
                        let dst = &mut buf.data_mut()[r * v..(r + 1) * v];
                        for j in 0..v {
                            let p = (row[j] - m).exp() / sum;
                            let delta = if j == t as usize { E::ONE } else { E::ZERO };
                            dst[j] += (p - delta) * scale;
                        }
                    }
                }
            }
            Op::Sum { a } => {
                if self.req(*a) {
                    let s = g.item();
                    let buf = grad_buf(&mut grads[a.id], self.value(*a).shape());
                    for d in buf.data_mut() {
                        *d += s;
                    }
                }
            }
            Op::Mean { a } => {
                if self.req(*a) {
                    let n = self.value(*a).numel();
                    let s = g.item() * E::from_f64(1.0 / n as f64);
                    let buf = grad_buf(&mut grads[a.id], self.value(*a).shape());
                    for d in buf.data_mut() {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn grad_buf<'a, E: Element>(slot: &'a mut Option<Tensor<E>>, shape: &[usize]) -> &'a mut Tensor<E> {
    slot.get_or_insert_with(|| Tensor::zeros(shape.to_vec()))
}

/// Parameter gradients produced by one backward sweep, indexed by the `Var`
/// handles of the leaves.
#[derive(Debug)]
pub struct Gradients<E> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<E>> {
        self.grads.get_mut(v.id).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_grad_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_fn(vec![3, 2], |i| i as f64);
        let xv = tape.param(&x);
        let loss = tape.sum(xv);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(xv).unwrap(), &Tensor::full(vec![3, 2], 1.0));
        assert!(tape.is_empty());
    }

    #[test]
    fn dot_grad_is_two_x() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_fn(vec![4], |i| i as f64 - 1.5);
        let xv = tape.param(&x);
        let sq = tape.mul(xv, xv).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(xv).unwrap();
        for (gi, xi) in g.data().iter().zip(x.data()) {
            assert!((gi - 2.0 * xi).abs() < 1e-12);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(&Tensor::zeros(vec![2, 2]));
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, Error::NonScalarLoss { .. }));
    }

    #[test]
    fn empty_tape_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(&Tensor::scalar(1.0));
        let _ = tape.backward(x).unwrap();
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, Error::EmptyTape));
    }

    #[test]
    fn no_grad_values_are_constants() {
        let mut tape = Tape::<f64>::new();
        let w = Tensor::from_fn(vec![3], |i| (i + 1) as f64);
        let wv = tape.param(&w);

        // z depends on w numerically but is produced under no_grad.
        let z = tape.no_grad(|t| {
            let a = t.scale(wv, 3.0);
            t.mul(a, wv).unwrap()
        });
        assert!(!tape.requires_grad(z));

        let y = tape.mul(wv, z).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(wv).unwrap();
        // d/dw of w * const(3w^2 evaluated) = the constant itself.
        for (gi, wi) in g.data().iter().zip(w.data()) {
            assert!((gi - 3.0 * wi * wi).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_error_names_op_and_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.param(&Tensor::zeros(vec![2, 3]));
        let b = tape.param(&Tensor::zeros(vec![2, 2]));
        let msg = tape.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn bias_broadcast_grad_reduces_over_rows() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(&Tensor::from_fn(vec![3, 2], |i| i as f64));
        let b = tape.param(&Tensor::from_fn(vec![2], |i| i as f64));
        let y = tape.add(x, b).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(b).unwrap(), &Tensor::full(vec![2], 3.0));
    }
}
