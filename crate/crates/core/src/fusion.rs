//! Multi-scale spatially-adaptive motion fusion.
//!
//! At every scale the motion generator predicts, for each pixel `(a, b)`, an
//! `n x n` kernel `K(a, b)` and a blend weight `M(a, b)` in `[0, 1]`. The
//! content map `h` (shape `d x l x l`) is refined in two steps:
//!
//! 1. Adaptive convolution: `h~(c, a, b) = sum_{i,j} K(a,b)[i][j] * h(c, a+i-r, b+j-r)`
//!    with `r = (n-1)/2`. One kernel per pixel, shared by all `d` channels.
//!    Patches are read with replicate padding at the borders.
//! 2. Mask blend: `h^(a, b) = M(a,b) * h~(a,b) + (1 - M(a,b)) * h(a,b)`.
//!
//! Kernels come either dense (flattened `n^2` values per pixel, row-major) or
//! separable (`w_v`, `w_h` of length `n` per pixel with `K[i][j] = w_v[i] * w_h[j]`).
//! Fields are stored channel-first: a dense field is `(n^2, l, l)`, a
//! separable field is two `(n, l, l)` tensors, a mask is `(l, l)`. Content
//! maps are `(d, l, l)` or `(1, d, l, l)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ResultExt};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaddingMode {
    #[default]
    Replicate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub kernel_size: usize,
    /// Spatial resolution per scale, coarsest first.
    pub resolutions: Vec<usize>,
    /// Content channel width per scale.
    pub widths: Vec<usize>,
    #[serde(default)]
    pub padding: PaddingMode,
}

impl FusionConfig {
    pub fn new(kernel_size: usize, resolutions: Vec<usize>, widths: Vec<usize>) -> Result<Self> {
        let cfg = FusionConfig {
            kernel_size,
            resolutions,
            widths,
            padding: PaddingMode::Replicate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scales(&self) -> usize {
        self.resolutions.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_kernel_size(self.kernel_size)?;
        if self.resolutions.is_empty() {
            return Err(Error::invalid("fusion config needs at least one scale"));
        }
        if self.widths.len() != self.resolutions.len() {
            return Err(Error::invalid(format!(
                "fusion config has {} resolutions but {} widths",
                self.resolutions.len(),
                self.widths.len()
            )));
        }
        if self.resolutions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "resolutions must be strictly increasing, got {:?}",
                self.resolutions
            )));
        }
        if self.resolutions.contains(&0) || self.widths.contains(&0) {
            return Err(Error::invalid("zero resolution or width"));
        }
        Ok(())
    }
}

fn check_kernel_size(n: usize) -> Result<()> {
    if n == 0 || n.is_multiple_of(2) {
        return Err(Error::invalid(format!("kernel size must be odd, got {n}")));
    }
    Ok(())
}

/// `(d, h, w)` of a content map given as `(d, h, w)` or `(1, d, h, w)`.
fn content_dims<T: Real>(h: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *h.shape() {
        [d, hh, ww] => Ok((d, hh, ww)),
        [1, d, hh, ww] => Ok((d, hh, ww)),
        _ => Err(Error::invalid(format!(
            "content map must be (d, h, w) or (1, d, h, w), got {:?}",
            h.shape()
        ))),
    }
}

/// Per-pixel pair of 1-D kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableKernelField<T> {
    vertical: Tensor<T>,
    horizontal: Tensor<T>,
}

impl<T: Real> SeparableKernelField<T> {
    /// Both tensors `(n, h, w)` or `(1, n, h, w)`.
    pub fn new(vertical: Tensor<T>, horizontal: Tensor<T>) -> Result<Self> {
        if vertical.shape() != horizontal.shape() {
            return Err(Error::shape(
                "separable kernel field",
                vertical.shape(),
                horizontal.shape(),
            ));
        }
        content_dims(&vertical)?;
        Ok(SeparableKernelField { vertical, horizontal })
    }

    pub fn identity(n: usize, h: usize, w: usize) -> Result<Self> {
        check_kernel_size(n)?;
        let mut v = Tensor::zeros(&[n, h, w])?;
        let r = n / 2;
        v.data_mut()[r * h * w..(r + 1) * h * w].fill(T::one());
        Self::new(v.clone(), v)
    }

    pub fn kernel_size(&self) -> usize {
        content_dims(&self.vertical).unwrap().0
    }

    pub fn extent(&self) -> (usize, usize) {
        let (_, h, w) = content_dims(&self.vertical).unwrap();
        (h, w)
    }

    pub fn vertical(&self) -> &Tensor<T> {
        &self.vertical
    }

    pub fn horizontal(&self) -> &Tensor<T> {
        &self.horizontal
    }

    pub fn into_parts(self) -> (Tensor<T>, Tensor<T>) {
        (self.vertical, self.horizontal)
    }

    /// Length-`n` vertical and horizontal kernels at `(a, b)`.
    pub fn at(&self, a: usize, b: usize) -> Result<(Vec<T>, Vec<T>)> {
        let (h, w) = self.extent();
        check_index(a, b, h, w)?;
        let n = self.kernel_size();
        let pick = |t: &Tensor<T>| (0..n).map(|i| t.data()[(i * h + a) * w + b]).collect();
        Ok((pick(&self.vertical), pick(&self.horizontal)))
    }

    /// Dense field whose per-pixel kernels are the outer products.
    pub fn to_dense(&self) -> DenseKernelField<T> {
        let n = self.kernel_size();
        let (h, w) = self.extent();
        let hw = h * w;
        let mut out = Tensor::zeros(&[n * n, h, w]).unwrap();
        let (vd, hd) = (self.vertical.data(), self.horizontal.data());
        let od = out.data_mut();
        for i in 0..n {
            for j in 0..n {
                for p in 0..hw {
                    od[(i * n + j) * hw + p] = vd[i * hw + p] * hd[j * hw + p];
                }
            }
        }
        DenseKernelField { weights: out }
    }
}

/// Per-pixel flattened `n x n` kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseKernelField<T> {
    weights: Tensor<T>,
}

impl<T: Real> DenseKernelField<T> {
    /// `weights` is `(n^2, h, w)` or `(1, n^2, h, w)`.
    pub fn new(weights: Tensor<T>) -> Result<Self> {
        let (nn, _, _) = content_dims(&weights)?;
        let n = (nn as f64).sqrt().round() as usize;
        if n * n != nn {
            return Err(Error::invalid(format!(
                "dense kernel field needs n^2 channels, got {nn}"
            )));
        }
        Ok(DenseKernelField { weights })
    }

    pub fn identity(n: usize, h: usize, w: usize) -> Result<Self> {
        check_kernel_size(n)?;
        let mut t = Tensor::zeros(&[n * n, h, w])?;
        let c = (n * n) / 2;
        t.data_mut()[c * h * w..(c + 1) * h * w].fill(T::one());
        Self::new(t)
    }

    pub fn kernel_size(&self) -> usize {
        let (nn, _, _) = content_dims(&self.weights).unwrap();
        (nn as f64).sqrt().round() as usize
    }

    pub fn extent(&self) -> (usize, usize) {
        let (_, h, w) = content_dims(&self.weights).unwrap();
        (h, w)
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn into_weights(self) -> Tensor<T> {
        self.weights
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum KernelField<T> {
    Dense(DenseKernelField<T>),
    Separable(SeparableKernelField<T>),
}

impl<T: Real> KernelField<T> {
    pub fn kernel_size(&self) -> usize {
        match self {
            KernelField::Dense(d) => d.kernel_size(),
            KernelField::Separable(s) => s.kernel_size(),
        }
    }

    pub fn extent(&self) -> (usize, usize) {
        match self {
            KernelField::Dense(d) => d.extent(),
            KernelField::Separable(s) => s.extent(),
        }
    }
}

impl<T> From<DenseKernelField<T>> for KernelField<T> {
    fn from(d: DenseKernelField<T>) -> Self {
        KernelField::Dense(d)
    }
}

impl<T> From<SeparableKernelField<T>> for KernelField<T> {
    fn from(s: SeparableKernelField<T>) -> Self {
        KernelField::Separable(s)
    }
}

/// Per-pixel blend weights, every entry in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskField<T> {
    values: Tensor<T>,
}

impl<T: Real> MaskField<T> {
    /// `values` is `(h, w)`, `(1, h, w)` or `(1, 1, h, w)`. Out-of-range or
    /// non-finite entries are rejected, not clamped.
    pub fn new(values: Tensor<T>) -> Result<Self> {
        if !matches!(*values.shape(), [_, _] | [1, _, _] | [1, 1, _, _]) {
            return Err(Error::invalid(format!("mask must be (h, w), got {:?}", values.shape())));
        }
        if let Some((i, v)) = values
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= T::zero() && **v <= T::one()))
        {
            return Err(Error::invalid(format!("mask entry {i} = {v:?} outside [0, 1]")));
        }
        Ok(MaskField { values })
    }

    pub fn constant(h: usize, w: usize, value: T) -> Result<Self> {
        Self::new(Tensor::full(&[h, w], value)?)
    }

    pub fn extent(&self) -> (usize, usize) {
        let s = self.values.shape();
        (s[s.len() - 2], s[s.len() - 1])
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn into_values(self) -> Tensor<T> {
        self.values
    }
}

/// Content maps, one per fusion scale, coarsest first.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentPyramid<T> {
    maps: Vec<Tensor<T>>,
}

impl<T: Real> ContentPyramid<T> {
    pub fn new(maps: Vec<Tensor<T>>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::invalid("empty content pyramid"));
        }
        for (s, m) in maps.iter().enumerate() {
            content_dims(m).at_scale(s)?;
        }
        Ok(ContentPyramid { maps })
    }

    pub fn scales(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[Tensor<T>] {
        &self.maps
    }

    pub fn map(&self, s: usize) -> &Tensor<T> {
        &self.maps[s]
    }

    pub fn into_maps(self) -> Vec<Tensor<T>> {
        self.maps
    }

    /// Check every level against the configured widths and resolutions.
    pub fn check(&self, cfg: &FusionConfig) -> Result<()> {
        if self.maps.len() != cfg.scales() {
            return Err(Error::invalid(format!(
                "pyramid has {} scales, config {}",
                self.maps.len(),
                cfg.scales()
            )));
        }
        for (s, m) in self.maps.iter().enumerate() {
            let (d, h, w) = content_dims(m).at_scale(s)?;
            let l = cfg.resolutions[s];
            if (d, h, w) != (cfg.widths[s], l, l) {
                return Err(Error::shape("content pyramid", &[d, h, w], &[cfg.widths[s], l, l])).at_scale(s);
            }
        }
        Ok(())
    }
}

fn check_index(a: usize, b: usize, h: usize, w: usize) -> Result<()> {
    if a >= h {
        return Err(Error::OutOfRange {
            op: "kernel index",
            index: a,
            limit: h,
        });
    }
    if b >= w {
        return Err(Error::OutOfRange {
            op: "kernel index",
            index: b,
            limit: w,
        });
    }
    Ok(())
}

/// Outer product `K[i][j] = w_v[i] * w_h[j]` as an `(n, n)` tensor.
pub fn expand_kernel<T: Real>(w_v: &[T], w_h: &[T]) -> Result<Tensor<T>> {
    if w_v.len() != w_h.len() || w_v.is_empty() {
        return Err(Error::shape("expand_kernel", &[w_v.len()], &[w_h.len()]));
    }
    let n = w_v.len();
    let data = w_v.iter().flat_map(|&v| w_h.iter().map(move |&h| v * h)).collect();
    Tensor::new(&[n, n], data)
}

/// Row-major unflattening of the `n^2` kernel values stored at `(a, b)`.
pub fn recover_dense<T: Real>(field: &DenseKernelField<T>, a: usize, b: usize) -> Result<Tensor<T>> {
    let (h, w) = field.extent();
    check_index(a, b, h, w)?;
    let n = field.kernel_size();
    let data = (0..n * n).map(|k| field.weights.data()[(k * h + a) * w + b]).collect();
    Tensor::new(&[n, n], data)
}

/// Row-major flattening of an `(n, n)` kernel.
pub fn flatten_kernel<T: Real>(k: &Tensor<T>) -> Result<Vec<T>> {
    match *k.shape() {
        [a, b] if a == b => Ok(k.data().to_vec()),
        _ => Err(Error::invalid(format!("kernel must be square, got {:?}", k.shape()))),
    }
}

/// Replicate-clamped neighbour offsets: `idx[p * n + i] = clamp(p + i - r)`.
fn clamp_table(len: usize, n: usize) -> Vec<usize> {
    let r = n / 2;
    let mut t = Vec::with_capacity(len * n);
    for p in 0..len {
        for i in 0..n {
            let q = (p + i) as isize - r as isize;
            t.push(q.clamp(0, len as isize - 1) as usize);
        }
    }
    t
}

fn check_extent<T: Real>(
    op: &'static str,
    content: &Tensor<T>,
    kernels: &KernelField<T>,
) -> Result<(usize, usize, usize)> {
    let (d, h, w) = content_dims(content)?;
    check_kernel_size(kernels.kernel_size())?;
    if kernels.extent() != (h, w) {
        let (kh, kw) = kernels.extent();
        return Err(Error::shape(op, &[h, w], &[kh, kw]));
    }
    Ok((d, h, w))
}

/// Spatially-adaptive convolution of a content map with per-pixel kernels.
/// The output has the same shape as `content`.
pub fn adaptive_conv<T: Real>(content: &Tensor<T>, kernels: &KernelField<T>) -> Result<Tensor<T>> {
    let (d, h, w) = check_extent("adaptive_conv", content, kernels)?;
    let n = kernels.kernel_size();
    let (rows, cols) = (clamp_table(h, n), clamp_table(w, n));
    let hw = h * w;
    let src = content.data();
    let mut out = content.zeros_like();
    let od = out.data_mut();
    match kernels {
        KernelField::Dense(field) => {
            let kd = field.weights.data();
            let mut k = vec![T::zero(); n * n];
            for a in 0..h {
                for b in 0..w {
                    let p = a * w + b;
                    for (q, kv) in k.iter_mut().enumerate() {
                        *kv = kd[q * hw + p];
                    }
                    let ri = &rows[a * n..(a + 1) * n];
                    let ci = &cols[b * n..(b + 1) * n];
                    for c in 0..d {
                        let plane = &src[c * hw..(c + 1) * hw];
                        let mut acc = T::zero();
                        for (i, &y) in ri.iter().enumerate() {
                            let row = &plane[y * w..(y + 1) * w];
                            for (j, &x) in ci.iter().enumerate() {
                                acc += k[i * n + j] * row[x];
                            }
                        }
                        od[c * hw + p] = acc;
                    }
                }
            }
        }
        KernelField::Separable(field) => {
            let (vd, hd) = (field.vertical.data(), field.horizontal.data());
            let mut kv = vec![T::zero(); n];
            let mut kh = vec![T::zero(); n];
            for a in 0..h {
                for b in 0..w {
                    let p = a * w + b;
                    for i in 0..n {
                        kv[i] = vd[i * hw + p];
                        kh[i] = hd[i * hw + p];
                    }
                    let ri = &rows[a * n..(a + 1) * n];
                    let ci = &cols[b * n..(b + 1) * n];
                    for c in 0..d {
                        let plane = &src[c * hw..(c + 1) * hw];
                        let mut acc = T::zero();
                        for (i, &y) in ri.iter().enumerate() {
                            let row = &plane[y * w..(y + 1) * w];
                            let mut inner = T::zero();
                            for (j, &x) in ci.iter().enumerate() {
                                inner += kh[j] * row[x];
                            }
                            acc += kv[i] * inner;
                        }
                        od[c * hw + p] = acc;
                    }
                }
            }
        }
    }
    Ok(out)
}

pub struct AdaptiveConvGrads<T> {
    pub content: Tensor<T>,
    pub kernels: KernelField<T>,
}

/// Gradients of [`adaptive_conv`] with respect to the content map and the
/// kernels (in the same representation as the forward kernels).
pub fn adaptive_conv_backward<T: Real>(
    content: &Tensor<T>,
    kernels: &KernelField<T>,
    grad_out: &Tensor<T>,
) -> Result<AdaptiveConvGrads<T>> {
    let (d, h, w) = check_extent("adaptive_conv_backward", content, kernels)?;
    if grad_out.shape() != content.shape() {
        return Err(Error::shape(
            "adaptive_conv_backward",
            grad_out.shape(),
            content.shape(),
        ));
    }
    let n = kernels.kernel_size();
    let (rows, cols) = (clamp_table(h, n), clamp_table(w, n));
    let hw = h * w;
    let src = content.data();
    let gd = grad_out.data();
    let mut gc = content.zeros_like();
    // Per-pixel gradient of the full n x n kernel; shared by both representations.
    let mut gk_dense = Tensor::zeros(&[n * n, h, w])?;
    let dense;
    let kd = match kernels {
        KernelField::Dense(f) => f.weights.data(),
        KernelField::Separable(f) => {
            dense = f.to_dense();
            dense.weights.data()
        }
    };
    {
        let gcd = gc.data_mut();
        let gkd = gk_dense.data_mut();
        for a in 0..h {
            for b in 0..w {
                let p = a * w + b;
                let ri = &rows[a * n..(a + 1) * n];
                let ci = &cols[b * n..(b + 1) * n];
                for c in 0..d {
                    let g = gd[c * hw + p];
                    let base = c * hw;
                    for (i, &y) in ri.iter().enumerate() {
                        for (j, &x) in ci.iter().enumerate() {
                            let q = i * n + j;
                            gkd[q * hw + p] += g * src[base + y * w + x];
                            gcd[base + y * w + x] += g * kd[q * hw + p];
                        }
                    }
                }
            }
        }
    }
    let gk = match kernels {
        KernelField::Dense(f) => KernelField::Dense(DenseKernelField {
            weights: gk_dense.reshape(f.weights.shape())?,
        }),
        KernelField::Separable(f) => {
            let mut gv = f.vertical.zeros_like();
            let mut gh = f.horizontal.zeros_like();
            let (vd, hd) = (f.vertical.data(), f.horizontal.data());
            let gkd = gk_dense.data();
            for i in 0..n {
                for j in 0..n {
                    let q = (i * n + j) * hw;
                    for p in 0..hw {
                        gv.data_mut()[i * hw + p] += gkd[q + p] * hd[j * hw + p];
                        gh.data_mut()[j * hw + p] += gkd[q + p] * vd[i * hw + p];
                    }
                }
            }
            KernelField::Separable(SeparableKernelField {
                vertical: gv,
                horizontal: gh,
            })
        }
    };
    Ok(AdaptiveConvGrads {
        content: gc,
        kernels: gk,
    })
}

fn check_blend<T: Real>(h: &Tensor<T>, ht: &Tensor<T>, mask: &MaskField<T>) -> Result<(usize, usize, usize)> {
    if h.shape() != ht.shape() {
        return Err(Error::shape("mask_blend", h.shape(), ht.shape()));
    }
    let (d, hh, ww) = content_dims(h)?;
    if mask.extent() != (hh, ww) {
        let (mh, mw) = mask.extent();
        return Err(Error::shape("mask_blend", &[hh, ww], &[mh, mw]));
    }
    Ok((d, hh, ww))
}

/// `M * h~ + (1 - M) * h`, per channel. With `M = 0` the result is `h`
/// bit-for-bit; with `M = 1` it is `h~` bit-for-bit.
pub fn mask_blend<T: Real>(h: &Tensor<T>, h_tilde: &Tensor<T>, mask: &MaskField<T>) -> Result<Tensor<T>> {
    let (d, hh, ww) = check_blend(h, h_tilde, mask)?;
    let hw = hh * ww;
    let m = mask.values.data();
    let mut out = h.zeros_like();
    let (hd, td) = (h.data(), h_tilde.data());
    for (c, plane) in out.data_mut().chunks_mut(hw).enumerate().take(d) {
        for p in 0..hw {
            let i = c * hw + p;
            plane[p] = m[p] * td[i] + (T::one() - m[p]) * hd[i];
        }
    }
    Ok(out)
}

pub struct BlendGrads<T> {
    pub content: Tensor<T>,
    pub intermediate: Tensor<T>,
    /// `(h, w)`, same layout as the mask.
    pub mask: Tensor<T>,
}

pub fn mask_blend_backward<T: Real>(
    h: &Tensor<T>,
    h_tilde: &Tensor<T>,
    mask: &MaskField<T>,
    grad_out: &Tensor<T>,
) -> Result<BlendGrads<T>> {
    let (d, hh, ww) = check_blend(h, h_tilde, mask)?;
    if grad_out.shape() != h.shape() {
        return Err(Error::shape("mask_blend_backward", grad_out.shape(), h.shape()));
    }
    let hw = hh * ww;
    let m = mask.values.data();
    let mut gh = h.zeros_like();
    let mut gt = h.zeros_like();
    let mut gm = mask.values.zeros_like();
    let (hd, td, gd) = (h.data(), h_tilde.data(), grad_out.data());
    for c in 0..d {
        for p in 0..hw {
            let i = c * hw + p;
            gt.data_mut()[i] = m[p] * gd[i];
            gh.data_mut()[i] = (T::one() - m[p]) * gd[i];
            gm.data_mut()[p] += gd[i] * (td[i] - hd[i]);
        }
    }
    Ok(BlendGrads {
        content: gh,
        intermediate: gt,
        mask: gm,
    })
}

/// Map unconstrained scores into `[0, 1]` via `(tanh(raw) + 1) / 2`.
pub fn mask_activation<T: Real>(raw: &Tensor<T>) -> Result<MaskField<T>> {
    let half = T::of(0.5);
    MaskField::new(raw.map(|v| (v.tanh() + T::one()) * half))
}

/// Gradient with respect to the raw scores given the activated mask.
pub fn mask_activation_backward<T: Real>(mask: &MaskField<T>, grad_mask: &Tensor<T>) -> Result<Tensor<T>> {
    if mask.values.len() != grad_mask.len() {
        return Err(Error::shape(
            "mask_activation_backward",
            mask.values.shape(),
            grad_mask.shape(),
        ));
    }
    let two = T::of(2.0);
    let data = mask
        .values
        .data()
        .iter()
        .zip(grad_mask.data())
        .map(|(&m, &g)| g * two * m * (T::one() - m))
        .collect();
    Tensor::new(mask.values.shape(), data)
}

/// One scale of fusion. Returns `(refined, intermediate)`.
pub fn fuse_scale<T: Real>(
    content: &Tensor<T>,
    kernels: &KernelField<T>,
    mask: &MaskField<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_kernel_size(kernels.kernel_size())?;
    let tilde = adaptive_conv(content, kernels)?;
    let refined = mask_blend(content, &tilde, mask)?;
    Ok((refined, tilde))
}

fn check_lists<T: Real>(
    cfg: &FusionConfig,
    pyramid: &ContentPyramid<T>,
    kernels: &[KernelField<T>],
    masks: &[MaskField<T>],
) -> Result<()> {
    cfg.validate()?;
    pyramid.check(cfg)?;
    if kernels.len() != cfg.scales() || masks.len() != cfg.scales() {
        return Err(Error::invalid(format!(
            "fuse_pyramid: {} scales but {} kernel fields and {} masks",
            cfg.scales(),
            kernels.len(),
            masks.len()
        )));
    }
    for (s, k) in kernels.iter().enumerate() {
        if k.kernel_size() != cfg.kernel_size {
            return Err(Error::invalid(format!(
                "kernel size {} differs from configured {}",
                k.kernel_size(),
                cfg.kernel_size
            )))
            .at_scale(s);
        }
    }
    Ok(())
}

/// Fuse every scale of a pyramid independently.
pub fn fuse_pyramid<T: Real>(
    cfg: &FusionConfig,
    pyramid: &ContentPyramid<T>,
    kernels: &[KernelField<T>],
    masks: &[MaskField<T>],
) -> Result<ContentPyramid<T>> {
    check_lists(cfg, pyramid, kernels, masks)?;
    let maps = pyramid
        .maps
        .iter()
        .zip(kernels)
        .zip(masks)
        .enumerate()
        .map(|(s, ((h, k), m))| fuse_scale(h, k, m).map(|r| r.0).at_scale(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(ContentPyramid { maps })
}

/// [`fuse_pyramid`] with one thread per scale. Output is identical.
pub fn fuse_pyramid_parallel<T: Real>(
    cfg: &FusionConfig,
    pyramid: &ContentPyramid<T>,
    kernels: &[KernelField<T>],
    masks: &[MaskField<T>],
) -> Result<ContentPyramid<T>> {
    check_lists(cfg, pyramid, kernels, masks)?;
    let maps = std::thread::scope(|scope| {
        let handles: Vec<_> = pyramid
            .maps
            .iter()
            .zip(kernels)
            .zip(masks)
            .map(|((h, k), m)| scope.spawn(move || fuse_scale(h, k, m).map(|r| r.0)))
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(s, hnd)| hnd.join().expect("fusion worker panicked").at_scale(s))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(ContentPyramid { maps })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelMode {
    Dense,
    Separable,
}

impl KernelMode {
    pub fn per_pixel(self, n: usize) -> u64 {
        match self {
            KernelMode::Dense => (n * n) as u64,
            KernelMode::Separable => 2 * n as u64,
        }
    }
}

impl std::fmt::Display for KernelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            KernelMode::Dense => "dense",
            KernelMode::Separable => "separable",
        })
    }
}

impl std::str::FromStr for KernelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(KernelMode::Dense),
            "separable" => Ok(KernelMode::Separable),
            _ => Err(Error::invalid(format!("unknown kernel mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KernelParamCount {
    pub per_pixel: u64,
    pub per_scale: Vec<u64>,
    pub total: u64,
}

/// Kernel values the motion generator must emit per frame.
pub fn kernel_param_count(n: usize, resolutions: &[usize], mode: KernelMode) -> KernelParamCount {
    let per_pixel = mode.per_pixel(n);
    let per_scale: Vec<u64> = resolutions.iter().map(|&l| per_pixel * (l * l) as u64).collect();
    let total = per_scale.iter().sum();
    KernelParamCount {
        per_pixel,
        per_scale,
        total,
    }
}
