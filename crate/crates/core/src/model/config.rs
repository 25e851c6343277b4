use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::losses::LossWeights;
use crate::synth::{check_classes, ClipSpec};

/// Architecture hyperparameters of the two-stream model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Base channel width.
    pub ngf: usize,
    /// Content latent dimension.
    pub content_dim: usize,
    /// Motion latent dimension.
    pub motion_dim: usize,
    pub scales: usize,
    pub kernel_size: usize,
    pub classes: usize,
    pub image_size: usize,
    pub channels: usize,
    /// Route the motion latent through the convolutional LSTM cell.
    pub use_lstm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            ngf: 8,
            content_dim: 64,
            motion_dim: 16,
            scales: 2,
            kernel_size: 3,
            classes: 4,
            image_size: 32,
            channels: 1,
            use_lstm: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        check_classes(self.classes)?;
        if self.ngf == 0 || self.content_dim == 0 || self.motion_dim == 0 || self.scales == 0 {
            return Err(Error::invalid(format!("zero-sized model dimension in {self:?}")));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::invalid(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        let div = self.size_divisor();
        if !self.image_size.is_multiple_of(div) {
            return Err(Error::invalid(format!(
                "image size {} must be divisible by {div} for {} scales",
                self.image_size, self.scales
            )));
        }
        self.fusion().map(|_| ())
    }

    /// The generator starts at half the coarsest fusion resolution and both
    /// encoders downsample by 8.
    pub fn size_divisor(&self) -> usize {
        (1usize << self.scales).max(8)
    }

    /// Fusion resolution of scale `s`, coarsest first; the finest equals the
    /// image size.
    pub fn resolution(&self, s: usize) -> usize {
        self.image_size >> (self.scales - 1 - s)
    }

    /// Content channel width at scale `s`.
    pub fn width(&self, s: usize) -> usize {
        self.ngf << (self.scales - 1 - s)
    }

    /// Spatial extent of the generator seed map.
    pub fn seed_extent(&self) -> usize {
        self.resolution(0) / 2
    }

    pub fn fusion(&self) -> Result<FusionConfig> {
        FusionConfig::new(
            self.kernel_size,
            (0..self.scales).map(|s| self.resolution(s)).collect(),
            (0..self.scales).map(|s| self.width(s)).collect(),
        )
    }

    pub fn clip_spec(&self, frames: usize) -> ClipSpec {
        ClipSpec {
            frames,
            size: self.image_size,
            channels: self.channels,
        }
    }

    /// Check a dataset's frames against this model.
    pub fn check_spec(&self, spec: &ClipSpec) -> Result<()> {
        if spec.size != self.image_size || spec.channels != self.channels {
            return Err(Error::invalid(format!(
                "data is {}x{}x{}, model expects {}x{}x{}",
                spec.channels, spec.size, spec.size, self.channels, self.image_size, self.image_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::invalid(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Teacher-forcing probability decays linearly from 1 to 0 over `total`
/// iterations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub total: usize,
}

pub fn teacher_forcing_prob(sched: &Schedule, iter: usize) -> Result<f64> {
    if iter > sched.total {
        return Err(Error::OutOfRange {
            op: "teacher_forcing_prob",
            index: iter,
            limit: sched.total + 1,
        });
    }
    if sched.total == 0 {
        return Ok(0.0);
    }
    Ok(1.0 - iter as f64 / sched.total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Content and motion steps per alternation cycle.
    pub content_steps: usize,
    pub motion_steps: usize,
    pub weights: LossWeights,
    pub optimizer: OptimizerConfig,
    /// Replace the motion-phase input frame with the model's own prediction
    /// with probability `1 - teacher_forcing_prob`.
    pub scheduled_sampling: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 8,
            content_steps: 3,
            motion_steps: 2,
            weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            scheduled_sampling: true,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 || self.content_steps + self.motion_steps == 0 {
            return Err(Error::invalid("batch size and phase steps must be positive"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule { total: self.iterations }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn teacher_forcing_endpoints() {
        let s = Schedule { total: 100 };
        assert_eq!(teacher_forcing_prob(&s, 0).unwrap(), 1.0);
        assert_eq!(teacher_forcing_prob(&s, 100).unwrap(), 0.0);
        assert_eq!(teacher_forcing_prob(&s, 50).unwrap(), 0.5);
        assert!(teacher_forcing_prob(&s, 101).is_err());
    }

    #[test]
    fn geometry() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!((c.resolution(0), c.resolution(1)), (16, 32));
        assert_eq!((c.width(0), c.width(1)), (16, 8));
        assert_eq!(c.seed_extent(), 8);
        let bad = ModelConfig {
            image_size: 36,
            ..c.clone()
        };
        assert!(bad.validate().is_err());
        let even = ModelConfig { kernel_size: 4, ..c };
        assert!(even.validate().is_err());
    }
}
