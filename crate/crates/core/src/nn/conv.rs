//! Direct 2-D cross-correlation and its transpose, with analytic gradients.
//!
//! Weights are `(out, in, k, k)` for [`conv2d`] and `(in, out, k, k)` for
//! [`conv_transpose2d`], matching the usual deep-learning layouts. No kernel flip.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::invalid(format!("invalid conv spec {self:?}")));
        }
        Ok(())
    }

    /// Output extent of a forward convolution over `input` pixels.
    pub fn conv_out(&self, input: usize) -> Result<usize> {
        let span = input + 2 * self.padding;
        if span < self.kernel {
            return Err(Error::invalid(format!(
                "conv: input extent {input} too small for kernel {} with padding {}",
                self.kernel, self.padding
            )));
        }
        Ok((span - self.kernel) / self.stride + 1)
    }

    /// Output extent of a transposed convolution over `input` pixels.
    pub fn transpose_out(&self, input: usize) -> Result<usize> {
        let full = (input - 1) * self.stride + self.kernel;
        if full <= 2 * self.padding {
            return Err(Error::invalid(format!(
                "conv_transpose: padding {} consumes the whole output",
                self.padding
            )));
        }
        Ok(full - 2 * self.padding)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn transpose_weight_shape(&self) -> [usize; 4] {
        [self.in_channels, self.out_channels, self.kernel, self.kernel]
    }
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Range of small-grid indices `o` with `0 <= o*stride + tap - pad < big`.
#[inline]
fn valid_range(tap: usize, pad: usize, stride: usize, big: usize, small: usize) -> (usize, usize) {
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    // o*stride + tap - pad <= big - 1
    let limit = big + pad;
    let hi = if limit > tap { (limit - tap - 1) / stride + 1 } else { 0 };
    (lo.min(small), hi.min(small))
}

/// Geometry shared by the three inner kernels. `small` is the forward-conv
/// output grid, `big` is the forward-conv input grid.
struct Grid {
    sh: usize,
    sw: usize,
    bh: usize,
    bw: usize,
    stride: usize,
    pad: usize,
}

impl Grid {
    /// `small[o] += w * big[o*s + tap - p]` over every valid tap position.
    #[inline]
    fn gather<T: Real>(&self, small: &mut [T], big: &[T], w: T, ky: usize, kx: usize) {
        let (y0, y1) = valid_range(ky, self.pad, self.stride, self.bh, self.sh);
        let (x0, x1) = valid_range(kx, self.pad, self.stride, self.bw, self.sw);
        if x0 >= x1 {
            return;
        }
        for oy in y0..y1 {
            let iy = oy * self.stride + ky - self.pad;
            let srow = &mut small[oy * self.sw + x0..oy * self.sw + x1];
            let bstart = iy * self.bw + x0 * self.stride + kx - self.pad;
            if self.stride == 1 {
                let brow = &big[bstart..bstart + (x1 - x0)];
                for (s, &b) in srow.iter_mut().zip(brow) {
                    *s += w * b;
                }
            } else {
                for (i, s) in srow.iter_mut().enumerate() {
                    *s += w * big[bstart + i * self.stride];
                }
            }
        }
    }

    /// `big[o*s + tap - p] += w * small[o]`.
    #[inline]
    fn scatter<T: Real>(&self, big: &mut [T], small: &[T], w: T, ky: usize, kx: usize) {
        let (y0, y1) = valid_range(ky, self.pad, self.stride, self.bh, self.sh);
        let (x0, x1) = valid_range(kx, self.pad, self.stride, self.bw, self.sw);
        if x0 >= x1 {
            return;
        }
        for oy in y0..y1 {
            let iy = oy * self.stride + ky - self.pad;
            let srow = &small[oy * self.sw + x0..oy * self.sw + x1];
            let bstart = iy * self.bw + x0 * self.stride + kx - self.pad;
            if self.stride == 1 {
                let brow = &mut big[bstart..bstart + (x1 - x0)];
                for (b, &s) in brow.iter_mut().zip(srow) {
                    *b += w * s;
                }
            } else {
                for (i, &s) in srow.iter().enumerate() {
                    big[bstart + i * self.stride] += w * s;
                }
            }
        }
    }

    /// `sum_o small[o] * big[o*s + tap - p]`.
    #[inline]
    fn correlate<T: Real>(&self, small: &[T], big: &[T], ky: usize, kx: usize) -> T {
        let (y0, y1) = valid_range(ky, self.pad, self.stride, self.bh, self.sh);
        let (x0, x1) = valid_range(kx, self.pad, self.stride, self.bw, self.sw);
        let mut acc = T::zero();
        if x0 >= x1 {
            return acc;
        }
        for oy in y0..y1 {
            let iy = oy * self.stride + ky - self.pad;
            let srow = &small[oy * self.sw + x0..oy * self.sw + x1];
            let bstart = iy * self.bw + x0 * self.stride + kx - self.pad;
            if self.stride == 1 {
                let brow = &big[bstart..bstart + (x1 - x0)];
                for (&s, &b) in srow.iter().zip(brow) {
                    acc += s * b;
                }
            } else {
                for (i, &s) in srow.iter().enumerate() {
                    acc += s * big[bstart + i * self.stride];
                }
            }
        }
        acc
    }
}

fn check_params<T: Real>(
    op: &'static str,
    w: &Tensor<T>,
    b: &Tensor<T>,
    wshape: [usize; 4],
    bias_len: usize,
) -> Result<()> {
    if w.shape() != wshape {
        return Err(Error::shape(op, w.shape(), &wshape));
    }
    if b.len() != bias_len {
        return Err(Error::shape(op, b.shape(), &[bias_len]));
    }
    Ok(())
}

fn check_input<T: Real>(op: &'static str, x: &Tensor<T>, channels: usize) -> Result<[usize; 4]> {
    if x.rank() != 4 || x.shape()[1] != channels {
        return Err(Error::shape(op, x.shape(), &[x.dims4()[0], channels, 0, 0]));
    }
    Ok(x.dims4())
}

pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    spec.validate()?;
    let [n, cin, h, wd] = check_input("conv2d", x, spec.in_channels)?;
    check_params("conv2d", w, b, spec.weight_shape(), spec.out_channels)?;
    let (ho, wo) = (spec.conv_out(h)?, spec.conv_out(wd)?);
    let cout = spec.out_channels;
    let k = spec.kernel;
    let g = Grid {
        sh: ho,
        sw: wo,
        bh: h,
        bw: wd,
        stride: spec.stride,
        pad: spec.padding,
    };
    let mut out = Tensor::zeros(&[n, cout, ho, wo])?;
    let (xd, wdat, bd) = (x.data(), w.data(), b.data());
    let od = out.data_mut();
    for bi in 0..n {
        for oc in 0..cout {
            let plane = &mut od[(bi * cout + oc) * ho * wo..(bi * cout + oc + 1) * ho * wo];
            plane.iter_mut().for_each(|v| *v = bd[oc]);
            for ic in 0..cin {
                let inp = &xd[(bi * cin + ic) * h * wd..(bi * cin + ic + 1) * h * wd];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wdat[((oc * cin + ic) * k + ky) * k + kx];
                        g.gather(plane, inp, wv, ky, kx);
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let [n, cin, h, wd] = check_input("conv2d_backward", x, spec.in_channels)?;
    let (ho, wo) = (spec.conv_out(h)?, spec.conv_out(wd)?);
    let cout = spec.out_channels;
    if grad_out.shape() != [n, cout, ho, wo] {
        return Err(Error::shape("conv2d_backward", grad_out.shape(), &[n, cout, ho, wo]));
    }
    let k = spec.kernel;
    let g = Grid {
        sh: ho,
        sw: wo,
        bh: h,
        bw: wd,
        stride: spec.stride,
        pad: spec.padding,
    };
    let mut gx = x.zeros_like();
    let mut gw = w.zeros_like();
    let mut gb = Tensor::zeros(&[cout])?;
    let (xd, wdat, gd) = (x.data(), w.data(), grad_out.data());
    {
        let gxd = gx.data_mut();
        let gwd = gw.data_mut();
        let gbd = gb.data_mut();
        for bi in 0..n {
            for oc in 0..cout {
                let gplane = &gd[(bi * cout + oc) * ho * wo..(bi * cout + oc + 1) * ho * wo];
                gbd[oc] += gplane.iter().copied().sum::<T>();
                for ic in 0..cin {
                    let base = (bi * cin + ic) * h * wd;
                    for ky in 0..k {
                        for kx in 0..k {
                            let wi = ((oc * cin + ic) * k + ky) * k + kx;
                            gwd[wi] += g.correlate(gplane, &xd[base..base + h * wd], ky, kx);
                            g.scatter(&mut gxd[base..base + h * wd], gplane, wdat[wi], ky, kx);
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

/// Transposed convolution: the adjoint of [`conv2d`] with respect to its input,
/// plus a bias. Output extent is `(in - 1) * stride - 2 * pad + k`.
pub fn conv_transpose2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    spec.validate()?;
    let [n, cin, h, wd] = check_input("conv_transpose2d", x, spec.in_channels)?;
    check_params(
        "conv_transpose2d",
        w,
        b,
        spec.transpose_weight_shape(),
        spec.out_channels,
    )?;
    let (ho, wo) = (spec.transpose_out(h)?, spec.transpose_out(wd)?);
    let cout = spec.out_channels;
    let k = spec.kernel;
    // The transpose input plays the role of the forward conv's output grid.
    let g = Grid {
        sh: h,
        sw: wd,
        bh: ho,
        bw: wo,
        stride: spec.stride,
        pad: spec.padding,
    };
    let mut out = Tensor::zeros(&[n, cout, ho, wo])?;
    let (xd, wdat, bd) = (x.data(), w.data(), b.data());
    let od = out.data_mut();
    for bi in 0..n {
        for oc in 0..cout {
            let plane = &mut od[(bi * cout + oc) * ho * wo..(bi * cout + oc + 1) * ho * wo];
            plane.iter_mut().for_each(|v| *v = bd[oc]);
            for ic in 0..cin {
                let inp = &xd[(bi * cin + ic) * h * wd..(bi * cin + ic + 1) * h * wd];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wdat[((ic * cout + oc) * k + ky) * k + kx];
                        g.scatter(plane, inp, wv, ky, kx);
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv_transpose2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let [n, cin, h, wd] = check_input("conv_transpose2d_backward", x, spec.in_channels)?;
    let (ho, wo) = (spec.transpose_out(h)?, spec.transpose_out(wd)?);
    let cout = spec.out_channels;
    if grad_out.shape() != [n, cout, ho, wo] {
        return Err(Error::shape(
            "conv_transpose2d_backward",
            grad_out.shape(),
            &[n, cout, ho, wo],
        ));
    }
    let k = spec.kernel;
    let g = Grid {
        sh: h,
        sw: wd,
        bh: ho,
        bw: wo,
        stride: spec.stride,
        pad: spec.padding,
    };
    let mut gx = x.zeros_like();
    let mut gw = w.zeros_like();
    let mut gb = Tensor::zeros(&[cout])?;
    let (xd, wdat, gd) = (x.data(), w.data(), grad_out.data());
    {
        let gxd = gx.data_mut();
        let gwd = gw.data_mut();
        let gbd = gb.data_mut();
        for bi in 0..n {
            for oc in 0..cout {
                let gplane = &gd[(bi * cout + oc) * ho * wo..(bi * cout + oc + 1) * ho * wo];
                gbd[oc] += gplane.iter().copied().sum::<T>();
                for ic in 0..cin {
                    let base = (bi * cin + ic) * h * wd;
                    for ky in 0..k {
                        for kx in 0..k {
                            let wi = ((ic * cout + oc) * k + ky) * k + kx;
                            gwd[wi] += g.correlate(&xd[base..base + h * wd], gplane, ky, kx);
                            g.gather(&mut gxd[base..base + h * wd], gplane, wdat[wi], ky, kx);
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{randn, SeededRng};

    /// Six-loop reference cross-correlation with zero padding.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, s: &ConvSpec) -> Tensor<f64> {
        let [n, cin, h, wd] = x.dims4();
        let ho = (h + 2 * s.padding - s.kernel) / s.stride + 1;
        let wo = (wd + 2 * s.padding - s.kernel) / s.stride + 1;
        let mut out = vec![0.0; n * s.out_channels * ho * wo];
        for bi in 0..n {
            for oc in 0..s.out_channels {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data()[oc];
                        for ic in 0..cin {
                            for ky in 0..s.kernel {
                                for kx in 0..s.kernel {
                                    let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                                    let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xi = ((bi * cin + ic) * h + iy as usize) * wd + ix as usize;
                                    let wi = ((oc * cin + ic) * s.kernel + ky) * s.kernel + kx;
                                    acc += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                        out[((bi * s.out_channels + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(&[n, s.out_channels, ho, wo], out).unwrap()
    }

    #[test]
    fn ones_kernel_on_ones_input() {
        let spec = ConvSpec::new(1, 1, 2, 1, 0);
        let x = Tensor::<f64>::ones(&[1, 1, 3, 3]).unwrap();
        let w = Tensor::ones(&[1, 1, 2, 2]).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        let y = conv2d(&x, &w, &b, &spec).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.0; 4]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = SeededRng::new(1);
        let x: Tensor<f64> = randn(&mut rng, &[2, 1, 4, 5]).unwrap();
        let spec = ConvSpec::new(1, 1, 1, 1, 0);
        let w = Tensor::ones(&[1, 1, 1, 1]).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        assert_eq!(conv2d(&x, &w, &b, &spec).unwrap(), x);
        assert_eq!(conv_transpose2d(&x, &w, &b, &spec).unwrap(), x);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        for (seed, spec, hw) in [
            (1, ConvSpec::new(2, 3, 3, 1, 1), (5, 5)),
            (2, ConvSpec::new(2, 2, 3, 2, 1), (5, 6)),
            (3, ConvSpec::new(3, 1, 4, 2, 1), (8, 8)),
            (4, ConvSpec::new(1, 2, 5, 1, 2), (7, 4)),
        ] {
            let mut rng = SeededRng::new(seed);
            let x: Tensor<f64> = randn(&mut rng, &[2, spec.in_channels, hw.0, hw.1]).unwrap();
            let w: Tensor<f64> = randn(&mut rng, &spec.weight_shape()).unwrap();
            let b: Tensor<f64> = randn(&mut rng, &[spec.out_channels]).unwrap();
            let fast = conv2d(&x, &w, &b, &spec).unwrap();
            let slow = naive_conv(&x, &w, &b, &spec);
            assert_eq!(fast.shape(), slow.shape());
            let diff = fast.sub(&slow).unwrap().max_abs();
            assert!(diff < 1e-12, "{spec:?}: {diff}");
        }
    }

    #[test]
    fn transpose_sizes() {
        let spec = ConvSpec::new(1, 1, 4, 2, 1);
        assert_eq!(spec.transpose_out(8).unwrap(), 16);
        let spec = ConvSpec::new(1, 1, 3, 2, 1);
        assert_eq!(spec.transpose_out(4).unwrap(), 7);
        let x = Tensor::<f64>::ones(&[1, 1, 4, 4]).unwrap();
        let w = Tensor::ones(&[1, 1, 4, 4]).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        let y = conv_transpose2d(&x, &w, &b, &ConvSpec::new(1, 1, 4, 2, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 8, 8]);
    }

    #[test]
    fn transpose_equals_conv_input_gradient() {
        for (seed, spec, hw) in [
            (5, ConvSpec::new(2, 3, 3, 2, 1), (6, 6)),
            (6, ConvSpec::new(3, 2, 4, 2, 1), (8, 8)),
            (7, ConvSpec::new(2, 2, 3, 1, 1), (5, 4)),
        ] {
            let mut rng = SeededRng::new(seed);
            let x: Tensor<f64> = randn(&mut rng, &[1, spec.in_channels, hw.0, hw.1]).unwrap();
            let w: Tensor<f64> = randn(&mut rng, &spec.weight_shape()).unwrap();
            let ho = spec.conv_out(hw.0).unwrap();
            let wo = spec.conv_out(hw.1).unwrap();
            let gy: Tensor<f64> = randn(&mut rng, &[1, spec.out_channels, ho, wo]).unwrap();
            let gx = conv2d_backward(&x, &w, &spec, &gy).unwrap().input;
            // Same weights read as (in', out') = (out, in) for the transpose.
            let tspec = ConvSpec::new(
                spec.out_channels,
                spec.in_channels,
                spec.kernel,
                spec.stride,
                spec.padding,
            );
            let zero = Tensor::zeros(&[spec.in_channels]).unwrap();
            let t = conv_transpose2d(&gy, &w, &zero, &tspec);
            // Transposed output extent can differ by stride remainder; compare overlap.
            let t = t.unwrap();
            let [_, c, th, tw] = t.dims4();
            let mut diff = 0.0f64;
            for ci in 0..c {
                for y in 0..th.min(hw.0) {
                    for xx in 0..tw.min(hw.1) {
                        let a = t.data()[(ci * th + y) * tw + xx];
                        let b = gx.data()[(ci * hw.0 + y) * hw.1 + xx];
                        diff = diff.max((a - b).abs());
                    }
                }
            }
            assert!(diff < 1e-12, "{spec:?}: {diff}");
        }
    }

    #[test]
    fn adjoint_identity() {
        // <conv(x), y> == <x, conv_transpose(y)> with bias zero.
        for seed in 0..5 {
            let spec = ConvSpec::new(2, 3, 4, 2, 1);
            let mut rng = SeededRng::new(100 + seed);
            let x: Tensor<f64> = randn(&mut rng, &[1, 2, 8, 8]).unwrap();
            let w: Tensor<f64> = randn(&mut rng, &spec.weight_shape()).unwrap();
            let y: Tensor<f64> = randn(&mut rng, &[1, 3, 4, 4]).unwrap();
            let lhs = conv2d(&x, &w, &Tensor::zeros(&[3]).unwrap(), &spec)
                .unwrap()
                .dot(&y)
                .unwrap();
            let tspec = ConvSpec::new(3, 2, 4, 2, 1);
            let ct = conv_transpose2d(&y, &w, &Tensor::zeros(&[2]).unwrap(), &tspec).unwrap();
            let rhs = x.dot(&ct).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn channel_mismatch_is_error() {
        let spec = ConvSpec::new(2, 1, 3, 1, 1);
        let x = Tensor::<f32>::zeros(&[1, 3, 4, 4]).unwrap();
        let w = Tensor::zeros(&spec.weight_shape()).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        assert!(matches!(conv2d(&x, &w, &b, &spec), Err(Error::ShapeMismatch { .. })));
    }
}
