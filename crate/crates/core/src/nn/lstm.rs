//! Single-step convolutional LSTM cell.
//!
//! Gate pre-activations are `conv(x, W_x) + conv(h_prev, W_h) + b`, split along
//! channels in the order input, forget, output, candidate.

use crate::error::{Error, Result};
use crate::nn::act::sigmoid_scalar;
use crate::nn::conv::{conv2d, conv2d_backward, ConvSpec};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLstmSpec {
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub kernel: usize,
}

impl ConvLstmSpec {
    fn x_conv(&self) -> ConvSpec {
        ConvSpec::new(
            self.input_channels,
            4 * self.hidden_channels,
            self.kernel,
            1,
            self.kernel / 2,
        )
    }

    fn h_conv(&self) -> ConvSpec {
        ConvSpec::new(
            self.hidden_channels,
            4 * self.hidden_channels,
            self.kernel,
            1,
            self.kernel / 2,
        )
    }

    pub fn input_weight_shape(&self) -> [usize; 4] {
        self.x_conv().weight_shape()
    }

    pub fn hidden_weight_shape(&self) -> [usize; 4] {
        self.h_conv().weight_shape()
    }

    pub fn bias_len(&self) -> usize {
        4 * self.hidden_channels
    }
}

pub struct ConvLstmParams<'a, T> {
    pub w_input: &'a Tensor<T>,
    pub w_hidden: &'a Tensor<T>,
    pub bias: &'a Tensor<T>,
}

/// Everything the backward pass needs from one forward step.
#[derive(Clone, Debug)]
pub struct ConvLstmCache<T> {
    x: Tensor<T>,
    h_prev: Tensor<T>,
    c_prev: Tensor<T>,
    /// Activated gates `(N, 4*Hc, H, W)`: i, f, o, g.
    gates: Tensor<T>,
    c: Tensor<T>,
}

impl<T: Real> ConvLstmCache<T> {
    pub fn gates(&self) -> &Tensor<T> {
        &self.gates
    }
}

pub struct ConvLstmGrads<T> {
    pub x: Tensor<T>,
    pub h_prev: Tensor<T>,
    pub c_prev: Tensor<T>,
    pub w_input: Tensor<T>,
    pub w_hidden: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn convlstm_step<T: Real>(
    spec: &ConvLstmSpec,
    x: &Tensor<T>,
    h_prev: &Tensor<T>,
    c_prev: &Tensor<T>,
    p: &ConvLstmParams<'_, T>,
) -> Result<(Tensor<T>, Tensor<T>, ConvLstmCache<T>)> {
    let [n, _, hh, ww] = x.dims4();
    let hc = spec.hidden_channels;
    let state = [n, hc, hh, ww];
    if h_prev.shape() != state || c_prev.shape() != state {
        return Err(Error::shape("convlstm_step", h_prev.shape(), &state));
    }
    let mut z = conv2d(x, p.w_input, p.bias, &spec.x_conv())?;
    let zero_bias = Tensor::zeros(&[4 * hc])?;
    z.add_assign(&conv2d(h_prev, p.w_hidden, &zero_bias, &spec.h_conv())?)?;

    let plane = hh * ww;
    let mut c = c_prev.zeros_like();
    let mut h = c_prev.zeros_like();
    {
        let zd = z.data_mut();
        for b in 0..n {
            for ch in 0..hc {
                for p in 0..plane {
                    let gi = (b * 4 * hc + ch) * plane + p;
                    let gf = gi + hc * plane;
                    let go = gf + hc * plane;
                    let gg = go + hc * plane;
                    zd[gi] = sigmoid_scalar(zd[gi]);
                    zd[gf] = sigmoid_scalar(zd[gf]);
                    zd[go] = sigmoid_scalar(zd[go]);
                    zd[gg] = zd[gg].tanh();
                    let s = (b * hc + ch) * plane + p;
                    let cv = zd[gf] * c_prev.data()[s] + zd[gi] * zd[gg];
                    c.data_mut()[s] = cv;
                    h.data_mut()[s] = zd[go] * cv.tanh();
                }
            }
        }
    }
    let cache = ConvLstmCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        gates: z,
        c: c.clone(),
    };
    Ok((h, c, cache))
}

/// Gradients of one step given upstream gradients on the new hidden and cell
/// states.
pub fn convlstm_step_backward<T: Real>(
    spec: &ConvLstmSpec,
    cache: &ConvLstmCache<T>,
    p: &ConvLstmParams<'_, T>,
    grad_h: &Tensor<T>,
    grad_c: &Tensor<T>,
) -> Result<ConvLstmGrads<T>> {
    if grad_h.shape() != cache.c.shape() || grad_c.shape() != cache.c.shape() {
        return Err(Error::shape("convlstm_step_backward", grad_h.shape(), cache.c.shape()));
    }
    let [n, hc, hh, ww] = cache.c.dims4();
    let plane = hh * ww;
    let mut gz = cache.gates.zeros_like();
    let mut gc_prev = cache.c.zeros_like();
    {
        let zd = cache.gates.data();
        let gzd = gz.data_mut();
        for b in 0..n {
            for ch in 0..hc {
                for q in 0..plane {
                    let gi = (b * 4 * hc + ch) * plane + q;
                    let gf = gi + hc * plane;
                    let go = gf + hc * plane;
                    let gg = go + hc * plane;
                    let s = (b * hc + ch) * plane + q;
                    let (i, f, o, g) = (zd[gi], zd[gf], zd[go], zd[gg]);
                    let tc = cache.c.data()[s].tanh();
                    let dh = grad_h.data()[s];
                    let dc = grad_c.data()[s] + dh * o * (T::one() - tc * tc);
                    let d_o = dh * tc;
                    let d_f = dc * cache.c_prev.data()[s];
                    let d_i = dc * g;
                    let d_g = dc * i;
                    gc_prev.data_mut()[s] = dc * f;
                    gzd[gi] = d_i * i * (T::one() - i);
                    gzd[gf] = d_f * f * (T::one() - f);
                    gzd[go] = d_o * o * (T::one() - o);
                    gzd[gg] = d_g * (T::one() - g * g);
                }
            }
        }
    }
    let gx = conv2d_backward(&cache.x, p.w_input, &spec.x_conv(), &gz)?;
    let gh = conv2d_backward(&cache.h_prev, p.w_hidden, &spec.h_conv(), &gz)?;
    Ok(ConvLstmGrads {
        x: gx.input,
        h_prev: gh.input,
        c_prev: gc_prev,
        w_input: gx.weight,
        w_hidden: gh.weight,
        bias: gx.bias,
    })
}
