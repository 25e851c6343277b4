//! Central finite-difference checks of every analytic backward pass, in
//! double precision.
//!
//! Each case draws inputs and a random projection `r`, forms the scalar
//! `<f(x), r>` (or the loss itself for scalar losses) and compares the
//! analytic input gradients with `(L(x + h e_i) - L(x - h e_i)) / 2h`. The
//! reported error is `|a - n|_2 / (|a|_2 + |n|_2)` over the probed
//! coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{
    adaptive_conv, adaptive_conv_backward, mask_activation, mask_activation_backward, mask_blend, mask_blend_backward,
    ContentPyramid, DenseKernelField, KernelField, MaskField, SeparableKernelField,
};
use crate::losses::{
    aux_class_grad, content_consistency_grad, content_consistency_loss, gan_discriminator_grad, gan_generator_grad,
    kl_grad, kl_to_standard_normal, l2_loss, l2_loss_grad, GaussianParams,
};
use crate::model::{FusionMode, Group, ModelBundle, ModelConfig, Seeds};
use crate::nn::{self, ConvLstmParams, ConvLstmSpec, ConvSpec};
use crate::rng::{rand_uniform, randn, split_seed, SeededRng};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
/// Coordinates probed per case when an input set is larger than this.
const MAX_COORDS: usize = 300;
pub const SEEDS: u64 = 5;
/// A model coordinate whose one-sided slopes differ by more than this
/// fraction sits within `STEP` of a ReLU or max-pool switch and is skipped.
const KINK_TOL: f64 = 1e-3;

/// Every operation the suite covers, in report order.
pub const OPS: &[&str] = &[
    "conv2d",
    "conv_transpose2d",
    "linear",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "softmax",
    "maxpool2d",
    "convlstm_step",
    "adaptive_conv",
    "mask_blend",
    "mask_activation",
    "gaussian_sample",
    "l2_loss",
    "kl",
    "gan_discriminator",
    "gan_generator",
    "aux_class",
    "content_consistency",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub op: String,
    pub cases: usize,
    pub max_rel_err: f64,
    /// Probed coordinates rejected as non-differentiable at `STEP`.
    #[serde(default)]
    pub skipped: usize,
}

type T = Tensor<f64>;
type Loss<'a> = Box<dyn Fn(&[T]) -> Result<f64> + 'a>;
type Grads<'a> = Box<dyn Fn(&[T]) -> Result<Vec<T>> + 'a>;

/// Relative error between analytic and numeric gradients of `loss` at `inputs`.
pub fn compare(
    inputs: &[T],
    loss: &dyn Fn(&[T]) -> Result<f64>,
    grads: &dyn Fn(&[T]) -> Result<Vec<T>>,
    rng: &mut SeededRng,
) -> Result<f64> {
    let analytic = grads(inputs)?;
    if analytic.len() != inputs.len() {
        return Err(Error::invalid("gradient count differs from input count"));
    }
    let mut coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(k, t)| (0..t.len()).map(move |i| (k, i)))
        .collect();
    if coords.len() > MAX_COORDS {
        coords = (0..MAX_COORDS).map(|_| coords[rng.below(coords.len())]).collect();
    }
    let mut work = inputs.to_vec();
    let (mut diff, mut an, mut nn) = (0.0, 0.0, 0.0);
    for (k, i) in coords {
        let orig = work[k].data()[i];
        work[k].data_mut()[i] = orig + STEP;
        let lp = loss(&work)?;
        work[k].data_mut()[i] = orig - STEP;
        let lm = loss(&work)?;
        work[k].data_mut()[i] = orig;
        let num = (lp - lm) / (2.0 * STEP);
        let a = analytic[k].data()[i];
        diff += (a - num).powi(2);
        an += a * a;
        nn += num * num;
    }
    let denom = an.sqrt() + nn.sqrt();
    Ok(if denom == 0.0 { 0.0 } else { diff.sqrt() / denom })
}

fn proj(out: &T, r: &T) -> Result<f64> {
    out.dot(r)
}

/// Inputs plus loss and gradient closures for one shape of one op.
struct Case<'a> {
    inputs: Vec<T>,
    loss: Loss<'a>,
    grads: Grads<'a>,
}

fn case<'a>(
    inputs: Vec<T>,
    loss: impl Fn(&[T]) -> Result<f64> + 'a,
    grads: impl Fn(&[T]) -> Result<Vec<T>> + 'a,
) -> Case<'a> {
    Case {
        inputs,
        loss: Box::new(loss),
        grads: Box::new(grads),
    }
}

fn uniform(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Result<T> {
    rand_uniform(rng, shape, lo, hi)
}

fn build(op: &str, shape: usize, rng: &mut SeededRng) -> Result<Case<'static>> {
    Ok(match op {
        "conv2d" | "conv_transpose2d" => {
            let transpose = op == "conv_transpose2d";
            let (n, cin, h, w, cout, k, s, p) = [
                (1, 2, 5, 5, 3, 3, 1, 1),
                (2, 3, 6, 7, 2, 3, 2, 1),
                (1, 2, 4, 4, 2, 4, 2, 1),
            ][shape];
            let spec = ConvSpec::new(cin, cout, k, s, p);
            let ws = if transpose {
                spec.transpose_weight_shape()
            } else {
                spec.weight_shape()
            };
            let x = randn(rng, &[n, cin, h, w])?;
            let wt = randn(rng, &ws)?;
            let b = randn(rng, &[cout])?;
            let fwd = move |i: &[T]| {
                if transpose {
                    nn::conv_transpose2d(&i[0], &i[1], &i[2], &spec)
                } else {
                    nn::conv2d(&i[0], &i[1], &i[2], &spec)
                }
            };
            let r = randn(rng, fwd(&[x.clone(), wt.clone(), b.clone()])?.shape())?;
            let r2 = r.clone();
            case(
                vec![x, wt, b],
                move |i| proj(&fwd(i)?, &r),
                move |i| {
                    let g = if transpose {
                        nn::conv_transpose2d_backward(&i[0], &i[1], &spec, &r2)?
                    } else {
                        nn::conv2d_backward(&i[0], &i[1], &spec, &r2)?
                    };
                    Ok(vec![g.input, g.weight, g.bias])
                },
            )
        }
        "linear" => {
            let (b, fin, fout) = [(2, 5, 3), (1, 7, 4), (3, 4, 6)][shape];
            let x = randn(rng, &[b, fin])?;
            let w = randn(rng, &[fout, fin])?;
            let bias = randn(rng, &[fout])?;
            let r = randn(rng, &[b, fout])?;
            let r2 = r.clone();
            case(
                vec![x, w, bias],
                move |i| proj(&nn::linear(&i[0], &i[1], &i[2])?, &r),
                move |i| {
                    let g = nn::linear_backward(&i[0], &i[1], &r2)?;
                    Ok(vec![g.input, g.weight, g.bias])
                },
            )
        }
        "relu" | "leaky_relu" | "tanh" | "sigmoid" | "softmax" => {
            let dims: &[usize] = [&[7][..], &[2, 3, 4], &[1, 2, 3, 3]][shape];
            let dims = if op == "softmax" {
                [&[1, 5][..], &[3, 4], &[2, 7]][shape]
            } else {
                dims
            };
            let x = randn(rng, dims)?;
            let r = randn(rng, dims)?;
            let r2 = r.clone();
            let name = op.to_string();
            let name2 = name.clone();
            let fwd = move |x: &T, op: &str| -> T {
                match op {
                    "relu" => nn::relu(x),
                    "leaky_relu" => nn::leaky_relu(x, 0.2),
                    "tanh" => nn::tanh_act(x),
                    "sigmoid" => nn::sigmoid(x),
                    _ => nn::softmax_logits(x),
                }
            };
            case(
                vec![x],
                move |i| proj(&fwd(&i[0], &name), &r),
                move |i| {
                    let x = &i[0];
                    Ok(vec![match name2.as_str() {
                        "relu" => nn::relu_backward(x, &r2)?,
                        "leaky_relu" => nn::leaky_relu_backward(x, 0.2, &r2)?,
                        "tanh" => nn::tanh_backward(&nn::tanh_act(x), &r2)?,
                        "sigmoid" => nn::sigmoid_backward(&nn::sigmoid(x), &r2)?,
                        _ => nn::softmax_backward(&nn::softmax_logits(x), &r2)?,
                    }])
                },
            )
        }
        "maxpool2d" => {
            let dims = [[1, 1, 4, 4], [2, 3, 6, 6], [1, 2, 8, 6]][shape];
            let x = randn(rng, &dims)?;
            let r = randn(rng, &[dims[0], dims[1], dims[2] / 2, dims[3] / 2])?;
            let r2 = r.clone();
            case(
                vec![x],
                move |i| proj(&nn::maxpool2d(&i[0])?.0, &r),
                move |i| {
                    let (_, idx) = nn::maxpool2d(&i[0])?;
                    Ok(vec![nn::maxpool2d_backward(i[0].shape(), &idx, &r2)?])
                },
            )
        }
        "convlstm_step" => {
            let (n, cin, hid, k, h, w) = [(1, 2, 3, 3, 4, 4), (2, 1, 2, 1, 3, 3), (1, 3, 2, 3, 5, 4)][shape];
            let spec = ConvLstmSpec {
                input_channels: cin,
                hidden_channels: hid,
                kernel: k,
            };
            let inputs = vec![
                randn(rng, &[n, cin, h, w])?,
                randn(rng, &[n, hid, h, w])?,
                randn(rng, &[n, hid, h, w])?,
                randn::<f64>(rng, &spec.input_weight_shape())?.scale(0.5),
                randn::<f64>(rng, &spec.hidden_weight_shape())?.scale(0.5),
                randn(rng, &[spec.bias_len()])?,
            ];
            let rh = randn(rng, &[n, hid, h, w])?;
            let rc = randn(rng, &[n, hid, h, w])?;
            let (rh2, rc2) = (rh.clone(), rc.clone());
            case(
                inputs,
                move |i| {
                    let p = ConvLstmParams {
                        w_input: &i[3],
                        w_hidden: &i[4],
                        bias: &i[5],
                    };
                    let (h, c, _) = nn::convlstm_step(&spec, &i[0], &i[1], &i[2], &p)?;
                    Ok(proj(&h, &rh)? + proj(&c, &rc)?)
                },
                move |i| {
                    let p = ConvLstmParams {
                        w_input: &i[3],
                        w_hidden: &i[4],
                        bias: &i[5],
                    };
                    let (_, _, cache) = nn::convlstm_step(&spec, &i[0], &i[1], &i[2], &p)?;
                    let g = nn::convlstm_step_backward(&spec, &cache, &p, &rh2, &rc2)?;
                    Ok(vec![g.x, g.h_prev, g.c_prev, g.w_input, g.w_hidden, g.bias])
                },
            )
        }
        "adaptive_conv" => {
            // Shapes 0 and 1 use separable kernels, shape 2 dense ones.
            let (d, h, w, n) = [(2, 5, 6, 3), (1, 4, 4, 5), (3, 7, 5, 3)][shape];
            let content = randn(rng, &[d, h, w])?;
            let r = randn(rng, &[d, h, w])?;
            let r2 = r.clone();
            if shape < 2 {
                let wv = randn(rng, &[n, h, w])?;
                let wh = randn(rng, &[n, h, w])?;
                let field = |i: &[T]| -> Result<KernelField<f64>> {
                    Ok(SeparableKernelField::new(i[1].clone(), i[2].clone())?.into())
                };
                case(
                    vec![content, wv, wh],
                    move |i| proj(&adaptive_conv(&i[0], &field(i)?)?, &r),
                    move |i| {
                        let g = adaptive_conv_backward(&i[0], &field(i)?, &r2)?;
                        let KernelField::Separable(k) = g.kernels else {
                            return Err(Error::invalid("expected separable gradients"));
                        };
                        let (v, hz) = k.into_parts();
                        Ok(vec![g.content, v, hz])
                    },
                )
            } else {
                let k = randn(rng, &[n * n, h, w])?;
                let field = |i: &[T]| -> Result<KernelField<f64>> { Ok(DenseKernelField::new(i[1].clone())?.into()) };
                case(
                    vec![content, k],
                    move |i| proj(&adaptive_conv(&i[0], &field(i)?)?, &r),
                    move |i| {
                        let g = adaptive_conv_backward(&i[0], &field(i)?, &r2)?;
                        let KernelField::Dense(k) = g.kernels else {
                            return Err(Error::invalid("expected dense gradients"));
                        };
                        Ok(vec![g.content, k.into_weights()])
                    },
                )
            }
        }
        "mask_blend" => {
            let (d, h, w) = [(1, 3, 3), (2, 4, 5), (3, 6, 4)][shape];
            let inputs = vec![
                randn(rng, &[d, h, w])?,
                randn(rng, &[d, h, w])?,
                uniform(rng, &[h, w], 0.1, 0.9)?,
            ];
            let r = randn(rng, &[d, h, w])?;
            let r2 = r.clone();
            case(
                inputs,
                move |i| proj(&mask_blend(&i[0], &i[1], &MaskField::new(i[2].clone())?)?, &r),
                move |i| {
                    let g = mask_blend_backward(&i[0], &i[1], &MaskField::new(i[2].clone())?, &r2)?;
                    Ok(vec![g.content, g.intermediate, g.mask])
                },
            )
        }
        "mask_activation" => {
            let dims = [[3, 3], [4, 6], [8, 5]][shape];
            let raw = randn(rng, &dims)?;
            let r = randn(rng, &dims)?;
            let r2 = r.clone();
            case(
                vec![raw],
                move |i| proj(mask_activation(&i[0])?.values(), &r),
                move |i| Ok(vec![mask_activation_backward(&mask_activation(&i[0])?, &r2)?]),
            )
        }
        "gaussian_sample" => {
            let dims = [[1, 4], [3, 2], [2, 6]][shape];
            let noise = randn(rng, &dims)?;
            let r = randn(rng, &dims)?;
            let (noise2, r2) = (noise.clone(), r.clone());
            case(
                vec![randn(rng, &dims)?, randn::<f64>(rng, &dims)?.scale(0.5)],
                move |i| proj(&GaussianParams::new(i[0].clone(), i[1].clone())?.sample(&noise)?, &r),
                move |i| {
                    let (a, b) = GaussianParams::new(i[0].clone(), i[1].clone())?.sample_backward(&noise2, &r2)?;
                    Ok(vec![a, b])
                },
            )
        }
        "l2_loss" => {
            let dims: &[usize] = [&[5][..], &[2, 3], &[1, 2, 4, 4]][shape];
            case(
                vec![randn(rng, dims)?, randn(rng, dims)?],
                |i| l2_loss(&i[0], &i[1]),
                |i| {
                    let g = l2_loss_grad(&i[0], &i[1])?;
                    Ok(vec![g.clone(), g.scale(-1.0)])
                },
            )
        }
        "kl" => {
            let dims = [[1, 3], [4, 2], [2, 8]][shape];
            case(
                vec![randn(rng, &dims)?, randn(rng, &dims)?],
                |i| Ok(kl_to_standard_normal(&GaussianParams::new(i[0].clone(), i[1].clone())?)),
                |i| {
                    let (a, b) = kl_grad(&GaussianParams::new(i[0].clone(), i[1].clone())?);
                    Ok(vec![a, b])
                },
            )
        }
        "gan_discriminator" => {
            let dims: &[usize] = [&[4][..], &[2, 3], &[3, 1]][shape];
            let inputs = (0..3)
                .map(|_| uniform(rng, dims, 0.05, 0.95))
                .collect::<Result<Vec<_>>>()?;
            case(
                inputs,
                |i| Ok(gan_discriminator_grad(&i[0], &i[1], &i[2])?.0),
                |i| {
                    let g = gan_discriminator_grad(&i[0], &i[1], &i[2])?.1;
                    Ok(vec![g.real, g.recon, g.prior])
                },
            )
        }
        "gan_generator" => {
            let dims: &[usize] = [&[4][..], &[2, 3], &[5, 1]][shape];
            let inputs = (0..2)
                .map(|_| uniform(rng, dims, 0.05, 0.95))
                .collect::<Result<Vec<_>>>()?;
            case(
                inputs,
                |i| Ok(gan_generator_grad(&i[0], &i[1])?.0),
                |i| {
                    let (_, a, b) = gan_generator_grad(&i[0], &i[1])?;
                    Ok(vec![a, b])
                },
            )
        }
        "aux_class" => {
            let (b, k) = [(1, 3), (4, 5), (3, 2)][shape];
            let labels: Vec<usize> = (0..b).map(|_| rng.below(k)).collect();
            let labels2 = labels.clone();
            case(
                vec![randn(rng, &[b, k])?],
                move |i| Ok(aux_class_grad(&i[0], &labels)?.0),
                move |i| Ok(vec![aux_class_grad(&i[0], &labels2)?.1]),
            )
        }
        "content_consistency" => {
            let dims: Vec<[usize; 3]> = [
                vec![[2, 3, 3]],
                vec![[4, 2, 2], [2, 4, 4]],
                vec![[3, 2, 2], [2, 4, 4], [1, 8, 8]],
            ][shape]
                .clone();
            let s = dims.len();
            let mut inputs = Vec::new();
            for _ in 0..2 {
                for d in &dims {
                    inputs.push(randn(rng, d)?);
                }
            }
            let pyr = move |i: &[T]| -> Result<(ContentPyramid<f64>, ContentPyramid<f64>)> {
                Ok((
                    ContentPyramid::new(i[..s].to_vec())?,
                    ContentPyramid::new(i[s..].to_vec())?,
                ))
            };
            case(
                inputs,
                move |i| {
                    let (a, b) = pyr(i)?;
                    content_consistency_loss(&a, &b)
                },
                move |i| {
                    let (a, b) = pyr(i)?;
                    let g = content_consistency_grad(&a, &b)?;
                    let neg: Vec<T> = g.iter().map(|t| t.scale(-1.0)).collect();
                    Ok(g.into_iter().chain(neg).collect())
                },
            )
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown gradcheck op {other:?}; known: {}",
                OPS.join(", ")
            )))
        }
    })
}

/// Check `op` over [`SEEDS`] seeds starting at `seed`, three shapes each.
pub fn check_op(op: &str, seed: u64) -> Result<GradCheckReport> {
    if op == "model" {
        return check_model(seed, 200);
    }
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for sd in seed..seed + SEEDS {
        for shape in 0..3 {
            let mut rng = SeededRng::new(split_seed(sd, shape as u64));
            let c = build(op, shape, &mut rng)?;
            worst = worst.max(compare(&c.inputs, &*c.loss, &*c.grads, &mut rng)?);
            cases += 1;
        }
    }
    Ok(GradCheckReport {
        op: op.to_string(),
        cases,
        max_rel_err: worst,
        skipped: 0,
    })
}

pub fn check_all(seed: u64) -> Result<Vec<GradCheckReport>> {
    OPS.iter().map(|op| check_op(op, seed)).collect()
}

/// Configuration of the micro model used for the end-to-end check.
pub fn micro_model_config() -> ModelConfig {
    ModelConfig {
        ngf: 4,
        content_dim: 8,
        motion_dim: 4,
        image_size: 16,
        ..ModelConfig::default()
    }
}

/// End-to-end check of the full next-frame pipeline (both parameter groups,
/// fusion on, fixed latent noise) on `coords` randomly chosen parameters.
/// Coordinates where the forward and backward differences disagree are
/// kinks and are replaced by fresh draws, up to `4 * coords` probes.
pub fn check_model(seed: u64, coords: usize) -> Result<GradCheckReport> {
    let cfg = micro_model_config();
    let mut rng = SeededRng::new(seed);
    let mut m = ModelBundle::<f64>::new(cfg.clone(), split_seed(seed, 0))?;
    let shape = [2, cfg.channels, cfg.image_size, cfg.image_size];
    let x = randn::<f64>(&mut rng, &shape)?.map(|v| v.tanh());
    let dx = randn::<f64>(&mut rng, &shape)?.scale(0.1);
    let labels = [0, 3];
    let noise_seed = split_seed(seed, 1);
    let (wc, wm) = (0.3, 0.7);
    let out = m.forward_next_frame(
        &x,
        Some(&dx),
        &labels,
        FusionMode::On,
        Some(&mut SeededRng::new(noise_seed)),
    )?;
    let mut proj = vec![randn(&mut rng, out.x_hat().shape())?];
    for r in out.refined() {
        proj.push(randn::<f64>(&mut rng, r.shape())?.scale(0.1));
    }
    let probe = |m: &ModelBundle<f64>| -> Result<f64> {
        let out = m.forward_next_frame(
            &x,
            Some(&dx),
            &labels,
            FusionMode::On,
            Some(&mut SeededRng::new(noise_seed)),
        )?;
        let mut l = out.x_hat().dot(&proj[0])?;
        for (r, p) in out.refined().iter().zip(&proj[1..]) {
            l += r.dot(p)?;
        }
        let q_m = out
            .motion_posterior()
            .ok_or_else(|| Error::invalid("motion posterior missing"))?;
        Ok(l + wc * kl_to_standard_normal(out.content_posterior()) + wm * kl_to_standard_normal(q_m))
    };
    let seeds = Seeds {
        x_hat: Some(proj[0].clone()),
        refined: proj[1..].iter().cloned().map(Some).collect(),
        content_kl: wc,
        motion_kl: wm,
    };
    m.backward(&out, &seeds, &[Group::Content, Group::Motion])?;
    let mut all = Vec::new();
    for g in [Group::Content, Group::Motion] {
        for (name, p) in m.params(g).iter() {
            all.extend((0..p.value.len()).map(|i| (g, name.clone(), i)));
        }
    }
    let l0 = probe(&m)?;
    let (mut diff, mut an, mut nn) = (0.0, 0.0, 0.0);
    let (mut accepted, mut skipped) = (0, 0);
    while accepted < coords && accepted + skipped < 4 * coords {
        let (g, name, i) = all[rng.below(all.len())].clone();
        let a = m.params(g).grad(&name)?.data()[i];
        let orig = m.params(g).value(&name)?.data()[i];
        m.params_mut(g).value_mut(&name)?.data_mut()[i] = orig + STEP;
        let lp = probe(&m)?;
        m.params_mut(g).value_mut(&name)?.data_mut()[i] = orig - STEP;
        let lm = probe(&m)?;
        m.params_mut(g).value_mut(&name)?.data_mut()[i] = orig;
        let (fwd, bwd) = ((lp - l0) / STEP, (l0 - lm) / STEP);
        if (fwd - bwd).abs() > KINK_TOL * (fwd.abs() + bwd.abs()) + 1e-8 {
            skipped += 1;
            continue;
        }
        accepted += 1;
        let num = (lp - lm) / (2.0 * STEP);
        diff += (a - num).powi(2);
        an += a * a;
        nn += num * num;
    }
    let denom = an.sqrt() + nn.sqrt();
    Ok(GradCheckReport {
        op: "model".into(),
        cases: accepted,
        max_rel_err: if denom == 0.0 { 0.0 } else { diff.sqrt() / denom },
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        for r in check_all(1).unwrap() {
            assert_eq!(r.cases, 15, "{}", r.op);
            assert!(r.max_rel_err < 1e-4, "{} {}", r.op, r.max_rel_err);
        }
    }

    #[test]
    fn full_model_passes() {
        for seed in 0..12 {
            let r = check_model(seed, 200).unwrap();
            assert_eq!(r.cases, 200);
            assert!(r.max_rel_err < 1e-3, "seed {seed}: {}", r.max_rel_err);
        }
    }

    #[test]
    fn unknown_op_is_an_error() {
        assert!(check_op("fft", 0).is_err());
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap();
        let err = compare(
            &[x],
            &|i: &[T]| Ok(i[0].data().iter().map(|v| v * v).sum()),
            &|i: &[T]| Ok(vec![i[0].clone()]),
            &mut SeededRng::new(0),
        )
        .unwrap();
        assert!(err > 0.1);
    }
}
