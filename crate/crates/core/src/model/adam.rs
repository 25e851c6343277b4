use std::collections::BTreeMap;

use crate::error::Result;
use crate::nn::ParamSet;
use crate::tensor::{Real, Tensor};

use super::config::OptimizerConfig;

/// Adam with bias correction. Moment buffers are keyed by parameter name and
/// created on first use.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: OptimizerConfig,
    steps: u64,
    moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Adam {
            cfg,
            steps: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    /// Apply one update from the accumulated gradients.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        self.steps += 1;
        let c = &self.cfg;
        let t = self.steps as i32;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let corr1 = T::of(1.0 - c.beta1.powi(t));
        let corr2 = T::of(1.0 - c.beta2.powi(t));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        for (name, p) in params.iter_mut() {
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (p.value.zeros_like(), p.value.zeros_like()));
            let g = p.grad.data();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let mi = &mut m.data_mut()[i];
                *mi = b1 * *mi + one_b1 * g[i];
                let vi = &mut v.data_mut()[i];
                *vi = b2 * *vi + one_b2 * g[i] * g[i];
                let mhat = *mi / corr1;
                let vhat = *vi / corr2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParamSet::<f64>::new();
        p.insert("w", Tensor::from_f64(&[2], &[1.0, -1.0]).unwrap()).unwrap();
        p.accumulate("w", &Tensor::from_f64(&[2], &[3.0, -0.5]).unwrap())
            .unwrap();
        let mut adam = Adam::new(OptimizerConfig {
            lr: 0.1,
            ..Default::default()
        })
        .unwrap();
        adam.step(&mut p).unwrap();
        let w = p.value("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-7 && (w[1] + 0.9).abs() < 1e-7, "{w:?}");
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut p = ParamSet::<f32>::new();
        p.insert("w", Tensor::from_f64(&[3], &[0.1, -2.5, 7.0]).unwrap())
            .unwrap();
        let before = p.clone();
        p.accumulate("w", &Tensor::from_f64(&[3], &[1.0, 1e-30, -4.0]).unwrap())
            .unwrap();
        let mut adam = Adam::new(OptimizerConfig {
            lr: 0.0,
            ..Default::default()
        })
        .unwrap();
        for _ in 0..3 {
            adam.step(&mut p).unwrap();
        }
        let bits = |s: &ParamSet<f32>| {
            s.value("w")
                .unwrap()
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&p), bits(&before));
    }
}
