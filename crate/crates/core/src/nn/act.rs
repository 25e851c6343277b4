//! Pointwise activations, softmax, linear layers and 2x2 max pooling.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(grad, "relu_backward", |v, g| if v > T::zero() { g } else { T::zero() })
}

pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { slope * v })
}

pub fn leaky_relu_backward<T: Real>(x: &Tensor<T>, slope: T, grad: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(
        grad,
        "leaky_relu_backward",
        |v, g| if v > T::zero() { g } else { slope * g },
    )
}

pub fn tanh_act<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Gradient of tanh given its output `y`.
pub fn tanh_backward<T: Real>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    y.zip_map(grad, "tanh_backward", |y, g| g * (T::one() - y * y))
}

#[inline]
pub fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Gradient of the logistic sigmoid given its output `y`.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    y.zip_map(grad, "sigmoid_backward", |y, g| g * y * (T::one() - y))
}

/// Softmax over the last axis, max-subtracted.
pub fn softmax_logits<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let k = *x.shape().last().unwrap();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
    out
}

/// Gradient of softmax given its output `y`.
pub fn softmax_backward<T: Real>(y: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    if y.shape() != grad.shape() {
        return Err(Error::shape("softmax_backward", y.shape(), grad.shape()));
    }
    let k = *y.shape().last().unwrap();
    let mut out = y.zeros_like();
    for ((o, yr), gr) in out
        .data_mut()
        .chunks_mut(k)
        .zip(y.data().chunks(k))
        .zip(grad.data().chunks(k))
    {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((ov, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
            *ov = yv * (gv - dot);
        }
    }
    Ok(out)
}

/// `y = x W^T + b` with `x` read as `(batch, features)` after flattening all
/// trailing extents. `W` is `(out, in)`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let batch = x.shape()[0];
    let fin = x.len() / batch;
    if w.rank() != 2 || w.shape()[1] != fin || b.len() != w.shape()[0] {
        return Err(Error::shape("linear", x.shape(), w.shape()));
    }
    let fout = w.shape()[0];
    let mut out = Tensor::zeros(&[batch, fout])?;
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    for (n, orow) in out.data_mut().chunks_mut(fout).enumerate() {
        let xrow = &xd[n * fin..(n + 1) * fin];
        for (o, ov) in orow.iter_mut().enumerate() {
            let wrow = &wd[o * fin..(o + 1) * fin];
            let mut acc = bd[o];
            for (&a, &b) in xrow.iter().zip(wrow) {
                acc += a * b;
            }
            *ov = acc;
        }
    }
    Ok(out)
}

pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, grad: &Tensor<T>) -> Result<LinearGrads<T>> {
    let batch = x.shape()[0];
    let fin = x.len() / batch;
    let fout = w.shape()[0];
    if grad.shape() != [batch, fout] {
        return Err(Error::shape("linear_backward", grad.shape(), &[batch, fout]));
    }
    let mut gx = x.zeros_like();
    let mut gw = w.zeros_like();
    let mut gb = Tensor::zeros(&[fout])?;
    let (xd, wd, gd) = (x.data(), w.data(), grad.data());
    for n in 0..batch {
        let xrow = &xd[n * fin..(n + 1) * fin];
        let grow = &gd[n * fout..(n + 1) * fout];
        for (o, &g) in grow.iter().enumerate() {
            gb.data_mut()[o] += g;
            let wrow = &wd[o * fin..(o + 1) * fin];
            let gwrow = &mut gw.data_mut()[o * fin..(o + 1) * fin];
            for (gwv, &xv) in gwrow.iter_mut().zip(xrow) {
                *gwv += g * xv;
            }
            let gxrow = &mut gx.data_mut()[n * fin..(n + 1) * fin];
            for (gxv, &wv) in gxrow.iter_mut().zip(wrow) {
                *gxv += g * wv;
            }
        }
    }
    Ok(LinearGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

/// 2x2 max pooling with stride 2 over `(N, C, H, W)`; odd trailing rows or
/// columns are dropped. Returns the pooled map and, per output element, the
/// flat input index of the winner. Ties go to the first element in row-major
/// order.
pub fn maxpool2d<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    if x.rank() != 4 {
        return Err(Error::shape("maxpool2d", x.shape(), &[0, 0, 0, 0]));
    }
    let [n, c, h, w] = x.dims4();
    let (ho, wo) = (h / 2, w / 2);
    if ho == 0 || wo == 0 {
        return Err(Error::invalid(format!("maxpool2d: input {h}x{w} too small")));
    }
    let mut out = Tensor::zeros(&[n, c, ho, wo])?;
    let mut idx = vec![0usize; n * c * ho * wo];
    let xd = x.data();
    let od = out.data_mut();
    for p in 0..n * c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = p * h * w + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = p * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                let o = (p * ho + oy) * wo + ox;
                od[o] = xd[best];
                idx[o] = best;
            }
        }
    }
    Ok((out, idx))
}

pub fn maxpool2d_backward<T: Real>(input_shape: &[usize], indices: &[usize], grad: &Tensor<T>) -> Result<Tensor<T>> {
    if indices.len() != grad.len() {
        return Err(Error::shape("maxpool2d_backward", grad.shape(), &[indices.len()]));
    }
    let mut gx = Tensor::zeros(input_shape)?;
    let gd = gx.data_mut();
    for (&i, &g) in indices.iter().zip(grad.data()) {
        gd[i] += g;
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn relu_and_sigmoid_values() {
        assert_eq!(relu(&t(&[2], &[-1.0, 2.0])).data(), &[0.0, 2.0]);
        assert_eq!(sigmoid(&t(&[1], &[0.0])).data(), &[0.5]);
        assert_eq!(leaky_relu(&t(&[2], &[-2.0, 3.0]), 0.2).data(), &[-0.4, 3.0]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        let y = sigmoid(&t(&[2], &[-800.0, 800.0]));
        assert_eq!(y.data(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_cases() {
        let y = softmax_logits(&t(&[1, 2], &[0.0, 0.0]));
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax_logits(&t(&[1, 2], &[1000.0, 1000.0]));
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax_logits(&t(&[1, 3], &[1f64.ln(), 2f64.ln(), 3f64.ln()]));
        for (a, b) in y.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_winner() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let (y, idx) = maxpool2d(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = maxpool2d_backward(x.shape(), &idx, &t(&[1, 1, 1, 1], &[1.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_tie_goes_to_first() {
        let x = t(&[1, 1, 2, 2], &[5.0, 5.0, 5.0, 5.0]);
        let (_, idx) = maxpool2d(&x).unwrap();
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn linear_small_case() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        let w = t(&[2, 2], &[1.0, 0.0, 0.5, -1.0]);
        let b = t(&[2], &[0.25, 0.0]);
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[1.25, -1.5]);
    }
}
