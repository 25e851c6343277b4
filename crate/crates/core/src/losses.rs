//! Training objectives with analytic gradients.
//!
//! Every loss returns a scalar. The matching `*_grad` function returns the
//! gradient with respect to each tensor input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::ContentPyramid;
use crate::tensor::{Real, Tensor};

/// Clamp applied to discriminator scores before taking logs.
pub const SCORE_EPS: f64 = 1e-7;

/// Diagonal Gaussian posterior, `(batch, dim)` or `(dim,)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams<T> {
    pub mean: Tensor<T>,
    pub log_var: Tensor<T>,
}

impl<T: Real> GaussianParams<T> {
    pub fn new(mean: Tensor<T>, log_var: Tensor<T>) -> Result<Self> {
        if mean.shape() != log_var.shape() {
            return Err(Error::shape("gaussian params", mean.shape(), log_var.shape()));
        }
        if !log_var.all_finite() {
            return Err(Error::invalid("non-finite log-variance"));
        }
        Ok(GaussianParams { mean, log_var })
    }

    fn batch(&self) -> usize {
        if self.mean.rank() > 1 {
            self.mean.shape()[0]
        } else {
            1
        }
    }

    /// Reparameterised sample `mean + exp(log_var / 2) * noise`.
    pub fn sample(&self, noise: &Tensor<T>) -> Result<Tensor<T>> {
        let half = T::of(0.5);
        let std = self.log_var.map(|v| (v * half).exp());
        self.mean.add(&std.mul(noise)?)
    }

    /// Gradients on `(mean, log_var)` given the gradient on a sample drawn
    /// with `noise`.
    pub fn sample_backward(&self, noise: &Tensor<T>, grad: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let half = T::of(0.5);
        let g_lv = self
            .log_var
            .zip_map(noise, "sample_backward", |lv, e| half * (lv * half).exp() * e)?
            .mul(grad)?;
        Ok((grad.clone(), g_lv))
    }
}

fn check_same<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn l2_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    check_same("l2_loss", pred, target)?;
    let s = pred
        .data()
        .iter()
        .zip(target.data())
        .fold(T::zero(), |acc, (&p, &t)| acc + (p - t) * (p - t));
    Ok(s / T::of(pred.len() as f64))
}

/// Gradient of [`l2_loss`] with respect to `pred`: `2 (pred - target) / N`.
pub fn l2_loss_grad<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    check_same("l2_loss", pred, target)?;
    let c = T::of(2.0 / pred.len() as f64);
    pred.zip_map(target, "l2_loss", |p, t| c * (p - t))
}

/// `KL(q || N(0, I))`, summed over dimensions and averaged over the batch.
pub fn kl_to_standard_normal<T: Real>(q: &GaussianParams<T>) -> T {
    let half = T::of(0.5);
    let s = q
        .mean
        .data()
        .iter()
        .zip(q.log_var.data())
        .fold(T::zero(), |acc, (&m, &lv)| {
            acc + half * (lv.exp() + m * m - T::one() - lv)
        });
    s / T::of(q.batch() as f64)
}

/// Gradients of [`kl_to_standard_normal`] on `(mean, log_var)`.
pub fn kl_grad<T: Real>(q: &GaussianParams<T>) -> (Tensor<T>, Tensor<T>) {
    let inv_b = T::of(1.0 / q.batch() as f64);
    let half = T::of(0.5);
    (
        q.mean.map(|m| m * inv_b),
        q.log_var.map(|lv| half * (lv.exp() - T::one()) * inv_b),
    )
}

fn clamp_score<T: Real>(d: T) -> (T, bool) {
    let eps = T::of(SCORE_EPS);
    if d < eps {
        (eps, true)
    } else if d > T::one() - eps {
        (T::one() - eps, true)
    } else {
        (d, false)
    }
}

/// `-ln d` or `-ln(1 - d)` averaged over elements, with gradient.
fn bce_term<T: Real>(d: &Tensor<T>, real: bool) -> (T, Tensor<T>) {
    let inv_n = T::of(1.0 / d.len() as f64);
    let mut loss = T::zero();
    let mut grad = d.zeros_like();
    for (g, &v) in grad.data_mut().iter_mut().zip(d.data()) {
        let (c, clamped) = clamp_score(v);
        let (l, dl) = if real {
            (-c.ln(), -T::one() / c)
        } else {
            (-(T::one() - c).ln(), T::one() / (T::one() - c))
        };
        loss += l;
        if !clamped {
            *g = dl * inv_n;
        }
    }
    (loss * inv_n, grad)
}

pub struct DiscriminatorGrads<T> {
    pub real: Tensor<T>,
    pub recon: Tensor<T>,
    pub prior: Tensor<T>,
}

/// `-[ln D(x) + ln(1 - D(x_recon)) + ln(1 - D(x_prior))]`, batch mean.
pub fn gan_discriminator_loss<T: Real>(d_real: &Tensor<T>, d_recon: &Tensor<T>, d_prior: &Tensor<T>) -> Result<T> {
    Ok(gan_discriminator_grad(d_real, d_recon, d_prior)?.0)
}

pub fn gan_discriminator_grad<T: Real>(
    d_real: &Tensor<T>,
    d_recon: &Tensor<T>,
    d_prior: &Tensor<T>,
) -> Result<(T, DiscriminatorGrads<T>)> {
    check_same("gan_discriminator_loss", d_real, d_recon)?;
    check_same("gan_discriminator_loss", d_real, d_prior)?;
    let (a, ga) = bce_term(d_real, true);
    let (b, gb) = bce_term(d_recon, false);
    let (c, gc) = bce_term(d_prior, false);
    Ok((
        a + b + c,
        DiscriminatorGrads {
            real: ga,
            recon: gb,
            prior: gc,
        },
    ))
}

/// `-[ln D(x_recon) + ln D(x_prior)]`, batch mean.
pub fn gan_generator_loss<T: Real>(d_recon: &Tensor<T>, d_prior: &Tensor<T>) -> Result<T> {
    Ok(gan_generator_grad(d_recon, d_prior)?.0)
}

/// Loss and gradients on `(d_recon, d_prior)`.
pub fn gan_generator_grad<T: Real>(d_recon: &Tensor<T>, d_prior: &Tensor<T>) -> Result<(T, Tensor<T>, Tensor<T>)> {
    check_same("gan_generator_loss", d_recon, d_prior)?;
    let (a, ga) = bce_term(d_recon, true);
    let (b, gb) = bce_term(d_prior, true);
    Ok((a + b, ga, gb))
}

fn logits_dims<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(usize, usize)> {
    let (b, k) = match *logits.shape() {
        [k] => (1, k),
        [b, k] => (b, k),
        _ => {
            return Err(Error::invalid(format!(
                "logits must be (batch, K), got {:?}",
                logits.shape()
            )))
        }
    };
    if labels.len() != b {
        return Err(Error::LengthMismatch {
            shape: logits.shape().to_vec(),
            expected: b,
            actual: labels.len(),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::OutOfRange {
            op: "aux_class_loss",
            index: l,
            limit: k,
        });
    }
    Ok((b, k))
}

/// Cross-entropy `-ln softmax(logits)[label]`, averaged over the batch.
pub fn aux_class_loss<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    Ok(aux_class_grad(logits, labels)?.0)
}

/// Loss and gradient `(softmax - onehot) / batch`.
pub fn aux_class_grad<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (b, k) = logits_dims(logits, labels)?;
    let inv_b = T::of(1.0 / b as f64);
    let mut loss = T::zero();
    let mut grad = logits.zeros_like();
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits.data()[r * k..(r + 1) * k];
        let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let z = row.iter().fold(T::zero(), |s, &v| s + (v - mx).exp());
        let log_z = z.ln() + mx;
        loss += log_z - row[label];
        let g = &mut grad.data_mut()[r * k..(r + 1) * k];
        for (j, gv) in g.iter_mut().enumerate() {
            let p = (row[j] - log_z).exp();
            *gv = (p - if j == label { T::one() } else { T::zero() }) * inv_b;
        }
    }
    Ok((loss * inv_b, grad))
}

fn check_pyramids<T: Real>(a: &ContentPyramid<T>, b: &ContentPyramid<T>) -> Result<()> {
    if a.scales() != b.scales() {
        return Err(Error::invalid(format!(
            "pyramids have {} and {} scales",
            a.scales(),
            b.scales()
        )));
    }
    for (s, (x, y)) in a.maps().iter().zip(b.maps()).enumerate() {
        if x.shape() != y.shape() {
            return Err(Error::AtScale {
                scale: s,
                source: Box::new(Error::shape("content_consistency_loss", x.shape(), y.shape())),
            });
        }
    }
    Ok(())
}

/// Sum over scales of the per-scale [`l2_loss`].
pub fn content_consistency_loss<T: Real>(refined_prev: &ContentPyramid<T>, current: &ContentPyramid<T>) -> Result<T> {
    check_pyramids(refined_prev, current)?;
    refined_prev
        .maps()
        .iter()
        .zip(current.maps())
        .try_fold(T::zero(), |acc, (a, b)| Ok(acc + l2_loss(a, b)?))
}

/// Per-scale gradients with respect to `refined_prev`. The gradient on
/// `current` is the negation.
pub fn content_consistency_grad<T: Real>(
    refined_prev: &ContentPyramid<T>,
    current: &ContentPyramid<T>,
) -> Result<Vec<Tensor<T>>> {
    check_pyramids(refined_prev, current)?;
    refined_prev
        .maps()
        .iter()
        .zip(current.maps())
        .map(|(a, b)| l2_loss_grad(a, b))
        .collect()
}

/// Weight that moves linearly from `start` to `end` over training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    pub start: f64,
    pub end: f64,
}

impl Ramp {
    pub fn constant(v: f64) -> Self {
        Ramp { start: v, end: v }
    }

    /// Value at `iter` out of `total`; iterations past `total` hold `end`.
    pub fn at(&self, iter: usize, total: usize) -> f64 {
        if total == 0 {
            return self.end;
        }
        let f = (iter as f64 / total as f64).min(1.0);
        self.start + (self.end - self.start) * f
    }
}

/// Loss term weights. `motion_kl` ramps over training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Current-frame reconstruction, content phase.
    pub recon: f64,
    /// Content KL.
    pub content_kl: f64,
    /// Pyramid consistency, motion phase.
    pub consistency: f64,
    /// Next-frame reconstruction, motion phase.
    pub video_recon: f64,
    /// Motion KL.
    pub motion_kl: Ramp,
}

impl Default for LossWeights {
    /// Weizmann settings.
    fn default() -> Self {
        LossWeights {
            recon: 1e4,
            content_kl: 7.0,
            consistency: 1e2,
            video_recon: 1e4,
            motion_kl: Ramp { start: 2.0, end: 20.0 },
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.recon,
            self.content_kl,
            self.consistency,
            self.video_recon,
            self.motion_kl.start,
            self.motion_kl.end,
        ];
        if all.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::invalid(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        if self.motion_kl.start > self.motion_kl.end {
            return Err(Error::invalid("motion KL ramp must be non-decreasing"));
        }
        Ok(())
    }
}

pub fn total_content_loss(w: &LossWeights, recon: f64, kl: f64) -> Result<f64> {
    w.validate()?;
    Ok(w.recon * recon + w.content_kl * kl)
}

pub fn total_motion_loss(
    w: &LossWeights,
    consistency: f64,
    video_recon: f64,
    kl_sum: f64,
    iter: usize,
    total: usize,
) -> Result<f64> {
    w.validate()?;
    Ok(w.consistency * consistency + w.video_recon * video_recon + w.motion_kl.at(iter, total) * kl_sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn l2_values() {
        let a = t(&[2], &[1.0, 2.0]);
        assert_eq!(l2_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(l2_loss(&a, &t(&[2], &[0.0, 0.0])).unwrap(), 2.5);
        assert!(l2_loss(&a, &t(&[3], &[0.0; 3])).is_err());
        assert_eq!(l2_loss_grad(&a, &t(&[2], &[0.0, 0.0])).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn kl_closed_forms() {
        let q = |m: f64, lv: f64| GaussianParams::new(t(&[1, 1], &[m]), t(&[1, 1], &[lv])).unwrap();
        assert_eq!(kl_to_standard_normal(&q(0.0, 0.0)), 0.0);
        assert!((kl_to_standard_normal(&q(1.0, 0.0)) - 0.5).abs() < 1e-12);
        let expected = 0.5 * (2.0 - 1.0 - 2f64.ln());
        assert!((kl_to_standard_normal(&q(0.0, 2f64.ln())) - expected).abs() < 1e-12);
        assert!((expected - 0.1534).abs() < 1e-4);
    }

    #[test]
    fn kl_batch_mean() {
        let q = GaussianParams::new(t(&[2, 1], &[1.0, 1.0]), t(&[2, 1], &[0.0, 0.0])).unwrap();
        assert!((kl_to_standard_normal(&q) - 0.5).abs() < 1e-12);
        assert!(GaussianParams::new(t(&[1], &[0.0]), t(&[1], &[f64::INFINITY])).is_err());
    }

    #[test]
    fn gan_closed_forms() {
        let eps = SCORE_EPS;
        let hi = t(&[1], &[1.0 - eps]);
        let lo = t(&[1], &[eps]);
        assert!(gan_discriminator_loss(&hi, &lo, &lo).unwrap() < 1e-6);
        let half = t(&[3], &[0.5; 3]);
        let d = gan_discriminator_loss(&half, &half, &half).unwrap();
        assert!((d - 3.0 * 2f64.ln()).abs() < 1e-12);
        let g = gan_generator_loss(&half, &half).unwrap();
        assert!((g - 2.0 * 2f64.ln()).abs() < 1e-12);
        let zero = t(&[1], &[0.0]);
        assert!(gan_discriminator_loss(&zero, &hi, &hi).unwrap().is_finite());
    }

    #[test]
    fn generator_gradient_is_negative() {
        for v in [0.01, 0.3, 0.5, 0.9, 0.999] {
            let d = t(&[1], &[v]);
            let (_, g, _) = gan_generator_grad(&d, &d).unwrap();
            assert!(g.data()[0] < 0.0);
        }
    }

    #[test]
    fn cross_entropy() {
        let uni = t(&[1, 4], &[0.3; 4]);
        assert!((aux_class_loss(&uni, &[2]).unwrap() - 4f64.ln()).abs() < 1e-12);
        let sat = t(&[1, 4], &[20.0, 0.0, 0.0, 0.0]);
        assert!(aux_class_loss(&sat, &[0]).unwrap() < 1e-8);
        assert!(aux_class_loss(&uni, &[4]).is_err());
        assert!(aux_class_loss(&uni, &[0, 1]).is_err());
        let (_, g) = aux_class_grad(&uni, &[1]).unwrap();
        assert_eq!(g.data(), &[0.25, -0.75, 0.25, 0.25]);
    }

    #[test]
    fn consistency_values() {
        let a = ContentPyramid::new(vec![
            Tensor::<f64>::zeros(&[1, 2, 2]).unwrap(),
            Tensor::zeros(&[2, 4, 4]).unwrap(),
        ])
        .unwrap();
        assert_eq!(content_consistency_loss(&a, &a).unwrap(), 0.0);
        let mut maps = a.clone().into_maps();
        maps[1] = maps[1].map(|v| v + 3.0);
        let b = ContentPyramid::new(maps).unwrap();
        assert_eq!(content_consistency_loss(&a, &b).unwrap(), 9.0);
        let c = ContentPyramid::new(vec![Tensor::<f64>::zeros(&[1, 2, 2]).unwrap()]).unwrap();
        assert!(content_consistency_loss(&a, &c).is_err());
    }

    #[test]
    fn weighted_totals() {
        let w = LossWeights::default();
        assert!((total_content_loss(&w, 0.01, 0.1).unwrap() - 100.7).abs() < 1e-9);
        assert_eq!(total_content_loss(&w, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(total_motion_loss(&w, 0.0, 0.0, 0.0, 5, 10).unwrap(), 0.0);
        assert_eq!(w.motion_kl.at(0, 2000), 2.0);
        assert_eq!(w.motion_kl.at(2000, 2000), 20.0);
        assert_eq!(total_motion_loss(&w, 0.0, 0.0, 1.0, 1000, 2000).unwrap(), 11.0);
        let bad = LossWeights { recon: -1.0, ..w };
        assert!(total_content_loss(&bad, 1.0, 1.0).is_err());
        let down = LossWeights {
            motion_kl: Ramp { start: 3.0, end: 1.0 },
            ..w
        };
        assert!(down.validate().is_err());
    }
}
