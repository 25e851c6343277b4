//! Small convolutional clip classifier used for the entropy metrics.
//!
//! Each step `t` of a clip is classified from `[x_t, x_t - x_{t-1},
//! x_{t+1} - x_t]` stacked along channels; clip logits are the mean over
//! steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::aux_class_grad;
use crate::metrics::{ClassDistribution, ClipClassifier};
use crate::nn::{ConvSpec, Layer, ParamSet, Stack};
use crate::rng::{split_seed, SeededRng};
use crate::synth::VideoClip;
use crate::tensor::{Real, Tensor};

use super::adam::Adam;
use super::config::OptimizerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub classes: usize,
    pub channels: usize,
    pub image_size: usize,
    pub width: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            classes: 4,
            channels: 1,
            image_size: 32,
            width: 8,
            iterations: 600,
            batch_size: 8,
            lr: 3e-3,
            seed: 7,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        crate::synth::check_classes(self.classes)?;
        if !self.image_size.is_multiple_of(8) || self.image_size == 0 {
            return Err(Error::invalid(format!(
                "classifier image size {} must be a multiple of 8",
                self.image_size
            )));
        }
        if self.width == 0 || self.batch_size == 0 || self.channels == 0 {
            return Err(Error::invalid(
                "classifier width, batch size and channels must be positive",
            ));
        }
        OptimizerConfig {
            lr: self.lr,
            ..OptimizerConfig::default()
        }
        .validate()
    }

    fn stack(&self) -> Stack {
        let (w, l) = (self.width, self.image_size);
        let flat = 2 * w * (l / 8) * (l / 8);
        Stack::new(vec![
            Layer::conv("cls.c1", ConvSpec::new(3 * self.channels, w, 3, 1, 1)),
            Layer::Relu,
            Layer::MaxPool,
            Layer::conv("cls.c2", ConvSpec::new(w, 2 * w, 3, 1, 1)),
            Layer::Relu,
            Layer::MaxPool,
            Layer::conv("cls.c3", ConvSpec::new(2 * w, 2 * w, 3, 1, 1)),
            Layer::Relu,
            Layer::MaxPool,
            Layer::Reshape(vec![flat]),
            Layer::linear("cls.fc", flat, self.classes),
        ])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    config: ClassifierConfig,
    net: Stack,
    params: ParamSet<f32>,
}

/// Per-step inputs `(T - 2, 3C, H, W)`.
fn step_inputs(clip: &VideoClip) -> Result<Tensor<f32>> {
    let t_max = clip.num_frames();
    if t_max < 3 {
        return Err(Error::invalid("classification needs clips of at least 3 frames"));
    }
    let mut steps = Vec::with_capacity(t_max - 2);
    for t in 1..t_max - 1 {
        let (prev, cur, next) = (clip.frame(t - 1)?, clip.frame(t)?, clip.frame(t + 1)?);
        steps.push(Tensor::concat_axis1(&[&cur, &cur.sub(&prev)?, &next.sub(&cur)?])?);
    }
    Tensor::stack(&steps)
}

impl Classifier {
    pub fn new(config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let net = config.stack();
        let mut params = ParamSet::new();
        net.init_params(&mut params, &mut SeededRng::new(split_seed(config.seed, 0)))?;
        Ok(Classifier { config, net, params })
    }

    pub fn from_params(config: ClassifierConfig, params: ParamSet<f32>) -> Result<Self> {
        let template = Self::new(config)?;
        let a: Vec<_> = params.iter().map(|(n, p)| (n, p.value.shape())).collect();
        let b: Vec<_> = template.params.iter().map(|(n, p)| (n, p.value.shape())).collect();
        if a != b {
            return Err(Error::invalid("classifier parameters do not match the configuration"));
        }
        Ok(Classifier { params, ..template })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    fn check_clip(&self, clip: &VideoClip) -> Result<()> {
        let s = clip.spec();
        if s.size != self.config.image_size || s.channels != self.config.channels {
            return Err(Error::invalid(format!(
                "clip is {}x{}x{}, classifier expects {}x{}x{}",
                s.channels, s.size, s.size, self.config.channels, self.config.image_size, self.config.image_size
            )));
        }
        Ok(())
    }

    /// Step-averaged logits of one clip.
    pub fn logits(&self, clip: &VideoClip) -> Result<Vec<f64>> {
        self.check_clip(clip)?;
        let x = step_inputs(clip)?;
        let steps = x.shape()[0];
        let (y, _) = self.net.forward(&self.params, x)?;
        let k = self.config.classes;
        let mut out = vec![0.0; k];
        for row in y.data().chunks(k) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v.f64() / steps as f64;
            }
        }
        Ok(out)
    }

    /// Train on labelled clips with Adam and cross-entropy on the averaged
    /// logits. Returns the per-iteration losses.
    pub fn train(&mut self, clips: &[&VideoClip]) -> Result<Vec<f64>> {
        if clips.is_empty() {
            return Err(Error::invalid("no clips to train the classifier on"));
        }
        for c in clips {
            self.check_clip(c)?;
            if c.action >= self.config.classes {
                return Err(Error::OutOfRange {
                    op: "classifier label",
                    index: c.action,
                    limit: self.config.classes,
                });
            }
        }
        let cfg = self.config.clone();
        let mut rng = SeededRng::new(split_seed(cfg.seed, 1));
        let mut adam = Adam::new(OptimizerConfig {
            lr: cfg.lr,
            beta1: 0.9,
            ..OptimizerConfig::default()
        })?;
        let mut losses = Vec::with_capacity(cfg.iterations);
        let k = cfg.classes;
        for _ in 0..cfg.iterations {
            let picked: Vec<&VideoClip> = (0..cfg.batch_size).map(|_| clips[rng.below(clips.len())]).collect();
            let inputs = picked.iter().map(|c| step_inputs(c)).collect::<Result<Vec<_>>>()?;
            let steps = inputs[0].shape()[0];
            if inputs.iter().any(|t| t.shape()[0] != steps) {
                return Err(Error::invalid("classifier batches need clips of equal length"));
            }
            let (y, trace) = self.net.forward(&self.params, Tensor::stack(&inputs)?)?;
            let mut avg = Tensor::<f32>::zeros(&[picked.len(), k])?;
            let inv = 1.0 / steps as f32;
            for (i, row) in y.data().chunks(k).enumerate() {
                let b = i / steps;
                for (j, v) in row.iter().enumerate() {
                    avg.data_mut()[b * k + j] += v * inv;
                }
            }
            let labels: Vec<usize> = picked.iter().map(|c| c.action).collect();
            let (loss, g) = aux_class_grad(&avg, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    term: "classifier".into(),
                    value: loss.f64(),
                });
            }
            let mut gy = y.zeros_like();
            for (i, row) in gy.data_mut().chunks_mut(k).enumerate() {
                let b = i / steps;
                for (j, v) in row.iter_mut().enumerate() {
                    *v = g.data()[b * k + j] * inv;
                }
            }
            self.net.backward(&mut self.params, &trace, gy, true)?;
            adam.step(&mut self.params)?;
            self.params.zero_grads();
            losses.push(loss.f64());
        }
        Ok(losses)
    }

    /// Fraction of clips whose arg-max class equals the label.
    pub fn accuracy(&self, clips: &[&VideoClip]) -> Result<f64> {
        if clips.is_empty() {
            return Err(Error::invalid("no clips to score"));
        }
        let mut hits = 0;
        for c in clips {
            if self.classify(c)?.argmax() == c.action {
                hits += 1;
            }
        }
        Ok(hits as f64 / clips.len() as f64)
    }
}

impl ClipClassifier for Classifier {
    fn classes(&self) -> usize {
        self.config.classes
    }

    fn classify(&self, clip: &VideoClip) -> Result<ClassDistribution> {
        ClassDistribution::from_logits(&self.logits(clip)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_clip, ActionLabel, ClipSpec};

    #[test]
    fn learns_a_small_problem() {
        let spec = ClipSpec {
            frames: 4,
            size: 16,
            channels: 1,
        };
        let clips: Vec<_> = (0..24)
            .map(|i| gen_clip(ActionLabel::new(i % 4, 4).unwrap(), 100 + i as u64, &spec).unwrap())
            .collect();
        let refs: Vec<_> = clips.iter().collect();
        let cfg = ClassifierConfig {
            image_size: 16,
            iterations: 60,
            ..ClassifierConfig::default()
        };
        let mut c = Classifier::new(cfg).unwrap();
        let losses = c.train(&refs).unwrap();
        assert!(losses[losses.len() - 5..].iter().sum::<f64>() < losses[..5].iter().sum::<f64>());
        let p = c.classify(&clips[0]).unwrap();
        assert_eq!(p.classes(), 4);
        assert!(c.accuracy(&refs).unwrap() > 0.5);
    }

    #[test]
    fn rejects_mismatched_clips() {
        let c = Classifier::new(ClassifierConfig::default()).unwrap();
        let spec = ClipSpec {
            frames: 4,
            size: 16,
            channels: 1,
        };
        let clip = gen_clip(ActionLabel::new(0, 4).unwrap(), 0, &spec).unwrap();
        assert!(c.logits(&clip).is_err());
    }
}
