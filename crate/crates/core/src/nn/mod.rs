//! Neural operators with analytic forward and backward passes.

pub mod act;
pub mod conv;
pub mod lstm;
pub mod params;
pub mod stack;

pub use act::{
    leaky_relu, leaky_relu_backward, linear, linear_backward, maxpool2d, maxpool2d_backward, relu, relu_backward,
    sigmoid, sigmoid_backward, softmax_backward, softmax_logits, tanh_act, tanh_backward, LinearGrads,
};
pub use conv::{conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, ConvGrads, ConvSpec};
pub use lstm::{convlstm_step, convlstm_step_backward, ConvLstmCache, ConvLstmGrads, ConvLstmParams, ConvLstmSpec};
pub use params::{xavier_uniform, Param, ParamSet};
pub use stack::{Layer, Stack, Trace};
