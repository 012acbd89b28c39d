//! Pure forward computations.
//!
//! The tape ops call into these for their forward pass; gradient-free code
//! (greedy decoding, evaluation) calls them directly on plain tensors.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn add<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    // Suffix broadcast: b repeats along the leading axes of a.
    if is_suffix(b.shape(), a.shape()) {
        let inner = b.numel();
        let mut data = Vec::with_capacity(a.numel());
        for (i, &x) in a.data().iter().enumerate() {
            data.push(x + b.data()[i % inner]);
        }
        return Tensor::new(a.shape().to_vec(), data);
    }
    Err(Error::ShapeMismatch { op: "add", lhs: a.shape().to_vec(), rhs: b.shape().to_vec() })
}

pub fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() < big.len() && big[big.len() - small.len()..] == *small
}

pub fn mul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch { op: "mul", lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn scale<E: Element>(a: &Tensor<E>, c: E) -> Tensor<E> {
    a.map(|x| x * c)
}

pub fn relu<E: Element>(a: &Tensor<E>) -> Tensor<E> {
    a.map(|x| x.max(E::ZERO))
}

pub fn matmul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let (m, ka) = a.dims2()?;
    let (kb, n) = b.dims2()?;
    if ka != kb {
        return Err(Error::ShapeMismatch { op: "matmul", lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
    }
    let mut out = Tensor::zeros(vec![m, n]);
    unsafe {
        E::gemm(
            m,
            ka,
            n,
            E::ONE,
            a.data().as_ptr(),
            ka as isize,
            1,
            b.data().as_ptr(),
            n as isize,
            1,
            E::ZERO,
            out.data_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(out)
}

/// `acc += alpha * a? * b?` where `?` marks an optional transpose. Shapes of
/// the (possibly transposed) operands must already agree with `acc`.
pub fn gemm_acc<E: Element>(
    acc: &mut Tensor<E>,
    alpha: E,
    a: &Tensor<E>,
    trans_a: bool,
    b: &Tensor<E>,
    trans_b: bool,
) {
    let (ar, ac) = a.dims2().expect("gemm_acc lhs rank");
    let (br, bc) = b.dims2().expect("gemm_acc rhs rank");
    let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
    debug_assert_eq!(k, kb);
    debug_assert_eq!(acc.shape(), [m, n]);
    let (rsa, csa) = if trans_a { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if trans_b { (1, bc as isize) } else { (bc as isize, 1) };
    unsafe {
        E::gemm(
            m,
            k,
            n,
            alpha,
            a.data().as_ptr(),
            rsa,
            csa,
            b.data().as_ptr(),
            rsb,
            csb,
            E::ONE,
            acc.data_mut().as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn transpose<E: Element>(a: &Tensor<E>) -> Result<Tensor<E>> {
    let (m, n) = a.dims2()?;
    let src = a.data();
    let mut data = vec![E::ZERO; src.len()];
    for i in 0..m {
        for j in 0..n {
            data[j * m + i] = src[i * n + j];
        }
    }
    Tensor::new(vec![n, m], data)
}

/// Softmax along `axis`.
pub fn softmax<E: Element>(a: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
    let (outer, lane, inner) = axis_split("softmax", a.shape(), axis)?;
    let mut out = a.clone();
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * lane * inner + i;
            let mut m = data[base];
            for l in 1..lane {
                m = m.max(data[base + l * inner]);
            }
            let mut sum = E::ZERO;
            for l in 0..lane {
                let e = (data[base + l * inner] - m).exp();
                data[base + l * inner] = e;
                sum += e;
            }
            for l in 0..lane {
                data[base + l * inner] = data[base + l * inner] / sum;
            }
        }
    }
    Ok(out)
}

pub(crate) fn axis_split(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::InvalidArgument { op, msg: format!("axis {axis} out of range for shape {shape:?}") });
    }
    let outer = shape[..axis].iter().product();
    let lane = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, lane, inner))
}

/// Layer normalization over the last axis with learned gain and bias.
pub fn layer_norm<E: Element>(x: &Tensor<E>, gain: &Tensor<E>, bias: &Tensor<E>, eps: E) -> Result<Tensor<E>> {
    let d = *x.shape().last().ok_or(Error::InvalidArgument {
        op: "layer_norm",
        msg: "rank-0 input".into(),
    })?;
    if gain.shape() != [d] || bias.shape() != [d] {
        return Err(Error::ShapeMismatch { op: "layer_norm", lhs: x.shape().to_vec(), rhs: gain.shape().to_vec() });
    }
    let rows = x.numel() / d;
    let mut out = Tensor::zeros(x.shape().to_vec());
    let inv_d = E::from_f64(1.0 / d as f64);
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mut mean = E::ZERO;
        for &v in row {
            mean += v;
        }
        mean = mean * inv_d;
        let mut var = E::ZERO;
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var = var * inv_d;
        let inv_std = E::ONE / (var + eps).sqrt();
        let dst = &mut out.data_mut()[r * d..(r + 1) * d];
        for j in 0..d {
            dst[j] = (row[j] - mean) * inv_std * gain.data()[j] + bias.data()[j];
        }
    }
    Ok(out)
}

pub fn concat<E: Element>(parts: &[&Tensor<E>], axis: usize) -> Result<Tensor<E>> {
    let first = parts.first().ok_or(Error::InvalidArgument { op: "concat", msg: "no inputs".into() })?;
    let rank = first.rank();
    let mut out_shape = first.shape().to_vec();
    for p in &parts[1..] {
        if p.rank() != rank
            || p.shape()[..axis] != first.shape()[..axis]
            || p.shape()[axis + 1..] != first.shape()[axis + 1..]
        {
            return Err(Error::ShapeMismatch { op: "concat", lhs: first.shape().to_vec(), rhs: p.shape().to_vec() });
        }
        out_shape[axis] += p.shape()[axis];
    }
    let (outer, _, inner) = axis_split("concat", first.shape(), axis)?;
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let lane = p.shape()[axis];
            let chunk = lane * inner;
            data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Tensor::new(out_shape, data)
}

pub fn slice<E: Element>(a: &Tensor<E>, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
    let (outer, lane, inner) = axis_split("slice", a.shape(), axis)?;
    if start + len > lane {
        return Err(Error::InvalidArgument {
            op: "slice",
            msg: format!("range {start}..{} out of bounds for axis of extent {lane}", start + len),
        });
    }
    let mut out_shape = a.shape().to_vec();
    out_shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * lane + start) * inner;
        data.extend_from_slice(&a.data()[base..base + len * inner]);
    }
    Tensor::new(out_shape, data)
}

/// Gather rows of `table` (ids index the first axis).
pub fn embedding_lookup<E: Element>(table: &Tensor<E>, ids: &[u32]) -> Result<Tensor<E>> {
    let (v, d) = table.dims2()?;
    if ids.is_empty() {
        return Err(Error::InvalidArgument { op: "embedding_lookup", msg: "no ids".into() });
    }
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        let id = id as usize;
        if id >= v {
            return Err(Error::InvalidArgument {
                op: "embedding_lookup",
                msg: format!("id {id} out of range for table with {v} rows"),
            });
        }
        data.extend_from_slice(&table.data()[id * d..(id + 1) * d]);
    }
    Tensor::new(vec![ids.len(), d], data)
}

/// Row-wise log-sum-exp minus the target logit; mean over rows whose target
/// id differs from `ignore_id`. Returns `(loss, live_row_count)`.
pub fn cross_entropy<E: Element>(logits: &Tensor<E>, targets: &[u32], ignore_id: u32) -> Result<(E, usize)> {
    let (n, v) = logits.dims2()?;
    if targets.len() != n {
        return Err(Error::InvalidArgument {
            op: "cross_entropy",
            msg: format!("{n} logit rows but {} targets", targets.len()),
        });
    }
    let mut total = E::ZERO;
    let mut live = 0usize;
    for (r, &t) in targets.iter().enumerate() {
        if t == ignore_id {
            continue;
        }
        if t as usize >= v {
            return Err(Error::InvalidArgument {
                op: "cross_entropy",
                msg: format!("target id {t} out of range for {v} classes"),
            });
        }
        let row = &logits.data()[r * v..(r + 1) * v];
        let mut m = row[0];
        for &x in &row[1..] {
            m = m.max(x);
        }
        let mut sum = E::ZERO;
        for &x in row {
            sum += (x - m).exp();
        }
        total += m + sum.ln() - row[t as usize];
        live += 1;
    }
    if live == 0 {
        return Err(Error::InvalidArgument { op: "cross_entropy", msg: "all targets ignored".into() });
    }
    Ok((total * E::from_f64(1.0 / live as f64), live))
}

pub fn sum<E: Element>(a: &Tensor<E>) -> E {
    let mut s = E::ZERO;
    for &x in a.data() {
        s += x;
    }
    s
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<E: Element>(row: &[E]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_shapes() {
        let a = Tensor::<f32>::from_fn(vec![2, 3], |i| i as f32);
        let b = Tensor::<f32>::from_fn(vec![3, 4], |i| i as f32);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), [2, 4]);
        // row 0 of a is [0,1,2]; col 0 of b is [0,4,8] -> 0*0+1*4+2*8 = 20
        assert_eq!(c.data()[0], 20.0);
    }

    #[test]
    fn matmul_mismatch_names_op_and_shapes() {
        let a = Tensor::<f32>::zeros(vec![2, 3]);
        let b = Tensor::<f32>::zeros(vec![4, 2]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let a = Tensor::<f32>::from_fn(vec![3, 5], |i| (i as f32).sin());
        let s = softmax(&a, 1).unwrap();
        for r in 0..3 {
            let sum: f32 = s.data()[r * 5..(r + 1) * 5].iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_v() {
        let v = 11;
        let logits = Tensor::<f64>::zeros(vec![4, v]);
        let (loss, live) = cross_entropy(&logits, &[1, 2, 3, 4], 0).unwrap();
        assert_eq!(live, 4);
        assert!((loss - (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_ignores_masked_rows() {
        let logits = Tensor::<f64>::from_fn(vec![2, 3], |i| i as f64);
        let (full, _) = cross_entropy(&logits, &[2, 1], 9).unwrap();
        let (masked, live) = cross_entropy(&logits, &[2, 9], 9).unwrap();
        assert_eq!(live, 1);
        assert!(masked != full);
    }

    #[test]
    fn concat_slice_roundtrip() {
        let a = Tensor::<f32>::from_fn(vec![2, 3], |i| i as f32);
        let b = Tensor::<f32>::from_fn(vec![2, 2], |i| 100.0 + i as f32);
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), [2, 5]);
        assert_eq!(slice(&c, 1, 0, 3).unwrap(), a);
        assert_eq!(slice(&c, 1, 3, 2).unwrap(), b);
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let x = Tensor::<f64>::from_fn(vec![4, 8], |i| (i * i % 17) as f64);
        let g = Tensor::full(vec![8], 1.0);
        let b = Tensor::zeros(vec![8]);
        let y = layer_norm(&x, &g, &b, 1e-5).unwrap();
        for r in 0..4 {
            let row = &y.data()[r * 8..(r + 1) * 8];
            let mean: f64 = row.iter().sum::<f64>() / 8.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
