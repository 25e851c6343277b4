//! Sequential layer stacks with a recorded forward trace, so composite
//! networks can chain hand-written backward passes without a tape.

use crate::error::{Error, Result};
use crate::nn::act;
use crate::nn::conv::{self, ConvSpec};
use crate::nn::params::{xavier_uniform, ParamSet};
use crate::rng::SeededRng;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv {
        name: String,
        spec: ConvSpec,
    },
    Deconv {
        name: String,
        spec: ConvSpec,
    },
    Linear {
        name: String,
        inputs: usize,
        outputs: usize,
    },
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    MaxPool,
    /// Per-sample target shape; the batch extent is kept.
    Reshape(Vec<usize>),
}

impl Layer {
    pub fn conv(name: impl Into<String>, spec: ConvSpec) -> Self {
        Layer::Conv {
            name: name.into(),
            spec,
        }
    }

    pub fn deconv(name: impl Into<String>, spec: ConvSpec) -> Self {
        Layer::Deconv {
            name: name.into(),
            spec,
        }
    }

    pub fn linear(name: impl Into<String>, inputs: usize, outputs: usize) -> Self {
        Layer::Linear {
            name: name.into(),
            inputs,
            outputs,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stack {
    layers: Vec<Layer>,
}

enum Saved<T> {
    None,
    Output(Tensor<T>),
    Indices(Vec<usize>),
}

/// Inputs (and, where needed, outputs) of every layer from one forward pass.
pub struct Trace<T> {
    inputs: Vec<Tensor<T>>,
    saved: Vec<Saved<T>>,
}

fn wname(name: &str) -> String {
    format!("{name}.w")
}

fn bname(name: &str) -> String {
    format!("{name}.b")
}

impl Stack {
    pub fn new(layers: Vec<Layer>) -> Self {
        Stack { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Insert Xavier-uniform weights and zero biases for every parametric layer.
    pub fn init_params<T: Real>(&self, params: &mut ParamSet<T>, rng: &mut SeededRng) -> Result<()> {
        for layer in &self.layers {
            match layer {
                Layer::Conv { name, spec } => {
                    let k2 = spec.kernel * spec.kernel;
                    let w = xavier_uniform(rng, &spec.weight_shape(), spec.in_channels * k2, spec.out_channels * k2)?;
                    params.insert(wname(name), w)?;
                    params.insert(bname(name), Tensor::zeros(&[spec.out_channels])?)?;
                }
                Layer::Deconv { name, spec } => {
                    let k2 = spec.kernel * spec.kernel;
                    let w = xavier_uniform(
                        rng,
                        &spec.transpose_weight_shape(),
                        spec.in_channels * k2,
                        spec.out_channels * k2,
                    )?;
                    params.insert(wname(name), w)?;
                    params.insert(bname(name), Tensor::zeros(&[spec.out_channels])?)?;
                }
                Layer::Linear { name, inputs, outputs } => {
                    let w = xavier_uniform(rng, &[*outputs, *inputs], *inputs, *outputs)?;
                    params.insert(wname(name), w)?;
                    params.insert(bname(name), Tensor::zeros(&[*outputs])?)?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, params: &ParamSet<T>, x: Tensor<T>) -> Result<(Tensor<T>, Trace<T>)> {
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            saved: Vec::with_capacity(self.layers.len()),
        };
        let mut cur = x;
        for layer in &self.layers {
            let (next, saved) = match layer {
                Layer::Conv { name, spec } => (
                    conv::conv2d(&cur, params.value(&wname(name))?, params.value(&bname(name))?, spec)?,
                    Saved::None,
                ),
                Layer::Deconv { name, spec } => (
                    conv::conv_transpose2d(&cur, params.value(&wname(name))?, params.value(&bname(name))?, spec)?,
                    Saved::None,
                ),
                Layer::Linear { name, .. } => (
                    act::linear(&cur, params.value(&wname(name))?, params.value(&bname(name))?)?,
                    Saved::None,
                ),
                Layer::Relu => (act::relu(&cur), Saved::None),
                Layer::LeakyRelu(s) => (act::leaky_relu(&cur, T::of(*s)), Saved::None),
                Layer::Tanh => {
                    let y = act::tanh_act(&cur);
                    (y.clone(), Saved::Output(y))
                }
                Layer::Sigmoid => {
                    let y = act::sigmoid(&cur);
                    (y.clone(), Saved::Output(y))
                }
                Layer::MaxPool => {
                    let (y, idx) = act::maxpool2d(&cur)?;
                    (y, Saved::Indices(idx))
                }
                Layer::Reshape(shape) => {
                    let mut full = vec![cur.shape()[0]];
                    full.extend_from_slice(shape);
                    (cur.clone().reshape(&full)?, Saved::None)
                }
            };
            trace.inputs.push(cur);
            trace.saved.push(saved);
            cur = next;
        }
        Ok((cur, trace))
    }

    /// Backpropagate `grad` (gradient on the stack output) to the stack input.
    /// Parameter gradients are added into `params` when `accumulate` is set.
    pub fn backward<T: Real>(
        &self,
        params: &mut ParamSet<T>,
        trace: &Trace<T>,
        grad: Tensor<T>,
        accumulate: bool,
    ) -> Result<Tensor<T>> {
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::invalid("trace does not belong to this stack"));
        }
        let mut g = grad;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.inputs[i];
            g = match layer {
                Layer::Conv { name, spec } => {
                    let gr = conv::conv2d_backward(x, params.value(&wname(name))?, spec, &g)?;
                    if accumulate {
                        params.accumulate(&wname(name), &gr.weight)?;
                        params.accumulate(&bname(name), &gr.bias)?;
                    }
                    gr.input
                }
                Layer::Deconv { name, spec } => {
                    let gr = conv::conv_transpose2d_backward(x, params.value(&wname(name))?, spec, &g)?;
                    if accumulate {
                        params.accumulate(&wname(name), &gr.weight)?;
                        params.accumulate(&bname(name), &gr.bias)?;
                    }
                    gr.input
                }
                Layer::Linear { name, .. } => {
                    let gr = act::linear_backward(x, params.value(&wname(name))?, &g)?;
                    if accumulate {
                        params.accumulate(&wname(name), &gr.weight)?;
                        params.accumulate(&bname(name), &gr.bias)?;
                    }
                    gr.input
                }
                Layer::Relu => act::relu_backward(x, &g)?,
                Layer::LeakyRelu(s) => act::leaky_relu_backward(x, T::of(*s), &g)?,
                Layer::Tanh => match &trace.saved[i] {
                    Saved::Output(y) => act::tanh_backward(y, &g)?,
                    _ => unreachable!(),
                },
                Layer::Sigmoid => match &trace.saved[i] {
                    Saved::Output(y) => act::sigmoid_backward(y, &g)?,
                    _ => unreachable!(),
                },
                Layer::MaxPool => match &trace.saved[i] {
                    Saved::Indices(idx) => act::maxpool2d_backward(x.shape(), idx, &g)?,
                    _ => unreachable!(),
                },
                Layer::Reshape(_) => g.reshape(x.shape())?,
            };
        }
        Ok(g)
    }
}
