//! Alternating content/motion training on next-frame prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{kl_to_standard_normal, l2_loss, l2_loss_grad};
use crate::rng::{split_seed, SeededRng};
use crate::synth::VideoClip;
use crate::tensor::{Real, Tensor};

use super::adam::Adam;
use super::config::{teacher_forcing_prob, ModelConfig, TrainConfig};
use super::net::{FusionMode, Group, ModelBundle, Seeds};

/// Loss terms of one training step. Terms belonging to the inactive phase
/// are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iter: usize,
    pub phase: Phase,
    pub total: f64,
    pub recon: f64,
    pub content_kl: f64,
    pub consistency: f64,
    pub video_recon: f64,
    pub motion_kl: f64,
    /// Batch items whose input frame was replaced by the model's prediction.
    pub sampled: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Content,
    Motion,
}

impl Phase {
    pub fn group(self) -> Group {
        match self {
            Phase::Content => Group::Content,
            Phase::Motion => Group::Motion,
        }
    }
}

/// Frames `t` of the given clips stacked into a batch.
fn frames_at(clips: &[&VideoClip], ts: &[usize], offset: isize) -> Result<Tensor<f32>> {
    let items = clips
        .iter()
        .zip(ts)
        .map(|(c, &t)| c.frame((t as isize + offset) as usize))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&items)
}

fn finite(term: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            term: term.to_string(),
            value: v,
        })
    }
}

/// Owns the model, both optimisers and the sampling stream.
#[derive(Clone, Debug)]
pub struct Trainer {
    bundle: ModelBundle<f32>,
    cfg: TrainConfig,
    content_opt: Adam<f32>,
    motion_opt: Adam<f32>,
    rng: SeededRng,
    iter: usize,
}

impl Trainer {
    /// Model weights come from `split_seed(cfg.seed, 0)`, batch sampling and
    /// latent noise from `split_seed(cfg.seed, 1)`.
    pub fn new(model: ModelConfig, cfg: TrainConfig) -> Result<Self> {
        let bundle = ModelBundle::new(model, split_seed(cfg.seed, 0))?;
        Self::from_bundle(bundle, cfg)
    }

    pub fn from_bundle(bundle: ModelBundle<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            content_opt: Adam::new(cfg.optimizer)?,
            motion_opt: Adam::new(cfg.optimizer)?,
            rng: SeededRng::new(split_seed(cfg.seed, 1)),
            bundle,
            cfg,
            iter: 0,
        })
    }

    pub fn bundle(&self) -> &ModelBundle<f32> {
        &self.bundle
    }

    pub fn into_bundle(self) -> ModelBundle<f32> {
        self.bundle
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    /// Content and motion steps interleave `content_steps : motion_steps`.
    pub fn phase(&self, iter: usize) -> Phase {
        if iter % (self.cfg.content_steps + self.cfg.motion_steps) < self.cfg.content_steps {
            Phase::Content
        } else {
            Phase::Motion
        }
    }

    /// Run one phase step on a batch drawn from `clips`.
    pub fn step(&mut self, clips: &[&VideoClip]) -> Result<StepReport> {
        let first = clips.first().ok_or_else(|| Error::invalid("no training clips"))?;
        let frames = first.num_frames();
        if frames < 3 {
            return Err(Error::invalid("training needs clips of at least 3 frames"));
        }
        self.bundle.config().check_spec(&first.spec())?;
        let batch: Vec<&VideoClip> = (0..self.cfg.batch_size)
            .map(|_| clips[self.rng.below(clips.len())])
            .collect();
        let ts: Vec<usize> = (0..batch.len()).map(|_| 1 + self.rng.below(frames - 2)).collect();
        let labels: Vec<usize> = batch.iter().map(|c| c.action).collect();
        let phase = self.phase(self.iter);
        let report = match phase {
            Phase::Content => self.content_step(&batch, &ts, &labels)?,
            Phase::Motion => self.motion_step(&batch, &ts, &labels)?,
        };
        self.iter += 1;
        Ok(report)
    }

    fn content_step(&mut self, batch: &[&VideoClip], ts: &[usize], labels: &[usize]) -> Result<StepReport> {
        let w = self.cfg.weights;
        let x = frames_at(batch, ts, 0)?;
        let out = self
            .bundle
            .forward_next_frame(&x, None, labels, FusionMode::Off, Some(&mut self.rng))?;
        let recon = finite("recon", l2_loss(out.x_hat(), &x)?.f64())?;
        let kl = finite("content_kl", kl_to_standard_normal(out.content_posterior()).f64())?;
        let total = finite("total", w.recon * recon + w.content_kl * kl)?;
        let seeds = Seeds {
            x_hat: Some(l2_loss_grad(out.x_hat(), &x)?.scale(w.recon as f32)),
            content_kl: w.content_kl as f32,
            ..Seeds::default()
        };
        self.bundle.backward(&out, &seeds, &[Group::Content])?;
        let params = self.bundle.params_mut(Group::Content);
        self.content_opt.step(params)?;
        params.zero_grads();
        Ok(StepReport {
            iter: self.iter,
            phase: Phase::Content,
            total,
            recon,
            content_kl: kl,
            consistency: 0.0,
            video_recon: 0.0,
            motion_kl: 0.0,
            sampled: 0,
        })
    }

    fn motion_step(&mut self, batch: &[&VideoClip], ts: &[usize], labels: &[usize]) -> Result<StepReport> {
        let w = self.cfg.weights;
        let total_iters = self.cfg.iterations;
        let x_prev = frames_at(batch, ts, -1)?;
        let mut x_in = frames_at(batch, ts, 0)?;
        let x_next = frames_at(batch, ts, 1)?;
        let mut sampled = 0;
        if self.cfg.scheduled_sampling {
            let p_tf = teacher_forcing_prob(&self.cfg.schedule(), self.iter.min(total_iters))?;
            let replace: Vec<bool> = ts.iter().map(|&t| t >= 2 && !self.rng.coin(p_tf)).collect();
            if replace.iter().any(|&r| r) {
                // Predict x_t from x_{t-1}; no gradient flows through this pass.
                let ts_prev: Vec<usize> = ts.iter().map(|&t| t.max(2) - 1).collect();
                let src = frames_at(batch, &ts_prev, 0)?;
                let src_dx = src.sub(&frames_at(batch, &ts_prev, -1)?)?;
                let pred =
                    self.bundle
                        .forward_next_frame(&src, Some(&src_dx), labels, FusionMode::On, Some(&mut self.rng))?;
                let items = (0..batch.len())
                    .map(|b| {
                        if replace[b] {
                            pred.x_hat().batch_item(b)
                        } else {
                            x_in.batch_item(b)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                x_in = Tensor::stack(&items)?;
                sampled = replace.iter().filter(|&&r| r).count();
            }
        }
        let dx = x_in.sub(&x_prev)?;
        let out = self
            .bundle
            .forward_next_frame(&x_in, Some(&dx), labels, FusionMode::On, Some(&mut self.rng))?;
        let target = self
            .bundle
            .forward_next_frame(&x_next, None, labels, FusionMode::Off, None)?;
        let mut consistency = 0.0;
        let mut refined_seeds = Vec::new();
        for (r, c) in out.refined().iter().zip(target.content()) {
            consistency += l2_loss(r, c)?.f64();
            refined_seeds.push(Some(l2_loss_grad(r, c)?.scale(w.consistency as f32)));
        }
        let consistency = finite("consistency", consistency)?;
        let video = finite("video_recon", l2_loss(out.x_hat(), &x_next)?.f64())?;
        let q_m = out
            .motion_posterior()
            .ok_or_else(|| Error::invalid("motion posterior missing"))?;
        let kl = finite("motion_kl", kl_to_standard_normal(q_m).f64())?;
        let lambda5 = w.motion_kl.at(self.iter, total_iters);
        let total = finite(
            "total",
            w.consistency * consistency + w.video_recon * video + lambda5 * kl,
        )?;
        let seeds = Seeds {
            x_hat: Some(l2_loss_grad(out.x_hat(), &x_next)?.scale(w.video_recon as f32)),
            refined: refined_seeds,
            motion_kl: lambda5 as f32,
            ..Seeds::default()
        };
        self.bundle.backward(&out, &seeds, &[Group::Motion])?;
        let params = self.bundle.params_mut(Group::Motion);
        self.motion_opt.step(params)?;
        params.zero_grads();
        Ok(StepReport {
            iter: self.iter,
            phase: Phase::Motion,
            total,
            recon: 0.0,
            content_kl: 0.0,
            consistency,
            video_recon: video,
            motion_kl: kl,
            sampled,
        })
    }

    /// Run the remaining iterations, calling `on_step` after each one.
    pub fn run(&mut self, clips: &[&VideoClip], mut on_step: impl FnMut(&StepReport)) -> Result<Vec<StepReport>> {
        let mut reports = Vec::with_capacity(self.cfg.iterations.saturating_sub(self.iter));
        while self.iter < self.cfg.iterations {
            let r = self.step(clips)?;
            on_step(&r);
            reports.push(r);
        }
        Ok(reports)
    }
}

/// Mean next-frame error of the model against the copy-last-frame baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NextFrameReport {
    pub model_l2: f64,
    pub baseline_l2: f64,
    pub ratio: f64,
    pub pairs: usize,
}

/// Predict every `x_{t+1}` for `1 <= t <= T-2` from the ground-truth `x_t`
/// and `x_t - x_{t-1}` with zero latent noise.
pub fn evaluate_next_frame(bundle: &ModelBundle<f32>, clips: &[&VideoClip]) -> Result<NextFrameReport> {
    let (mut model, mut base, mut pairs) = (0.0, 0.0, 0usize);
    for clip in clips {
        let t_max = clip.num_frames();
        if t_max < 3 {
            return Err(Error::invalid("evaluation needs clips of at least 3 frames"));
        }
        let ts: Vec<usize> = (1..t_max - 1).collect();
        let reps = vec![*clip; ts.len()];
        let labels = vec![clip.action; ts.len()];
        let x = frames_at(&reps, &ts, 0)?;
        let dx = x.sub(&frames_at(&reps, &ts, -1)?)?;
        let next = frames_at(&reps, &ts, 1)?;
        let out = bundle.forward_next_frame(&x, Some(&dx), &labels, FusionMode::On, None)?;
        for b in 0..ts.len() {
            let truth = next.batch_item(b)?;
            model += l2_loss(&out.x_hat().batch_item(b)?, &truth)?.f64();
            base += copy_last_l2(&x.batch_item(b)?, &truth)?;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::invalid("no clips to evaluate"));
    }
    let (model_l2, baseline_l2) = (model / pairs as f64, base / pairs as f64);
    Ok(NextFrameReport {
        model_l2,
        baseline_l2,
        ratio: model_l2 / baseline_l2,
        pairs,
    })
}

/// Error of predicting `next` by repeating `current`.
pub fn copy_last_l2(current: &Tensor<f32>, next: &Tensor<f32>) -> Result<f64> {
    Ok(l2_loss(current, next)?.f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::OptimizerConfig;
    use crate::synth::{gen_clip, ActionLabel, ClipSpec};

    fn data() -> Vec<VideoClip> {
        let spec = ClipSpec {
            frames: 4,
            size: 16,
            channels: 1,
        };
        (0..8)
            .map(|i| gen_clip(ActionLabel::new(i % 4, 4).unwrap(), i as u64, &spec).unwrap())
            .collect()
    }

    fn micro() -> ModelConfig {
        ModelConfig {
            ngf: 4,
            content_dim: 8,
            motion_dim: 4,
            image_size: 16,
            ..ModelConfig::default()
        }
    }

    fn bits(b: &ModelBundle<f32>, g: Group) -> Vec<u32> {
        b.params(g)
            .iter()
            .flat_map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn phases_interleave_three_to_two() {
        let t = Trainer::new(micro(), TrainConfig::default()).unwrap();
        let p: Vec<_> = (0..10).map(|i| t.phase(i)).collect();
        use Phase::*;
        assert_eq!(
            p,
            [Content, Content, Content, Motion, Motion, Content, Content, Content, Motion, Motion]
        );
    }

    #[test]
    fn freezing_discipline() {
        let clips = data();
        let refs: Vec<_> = clips.iter().collect();
        let cfg = TrainConfig {
            iterations: 5,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(micro(), cfg).unwrap();
        for _ in 0..5 {
            let before = (bits(t.bundle(), Group::Content), bits(t.bundle(), Group::Motion));
            let r = t.step(&refs).unwrap();
            let after = (bits(t.bundle(), Group::Content), bits(t.bundle(), Group::Motion));
            match r.phase {
                Phase::Content => {
                    assert_eq!(before.1, after.1);
                    assert_ne!(before.0, after.0);
                }
                Phase::Motion => {
                    assert_eq!(before.0, after.0);
                    assert_ne!(before.1, after.1);
                }
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let clips = data();
        let refs: Vec<_> = clips.iter().collect();
        let cfg = TrainConfig {
            iterations: 5,
            batch_size: 2,
            optimizer: OptimizerConfig {
                lr: 0.0,
                ..OptimizerConfig::default()
            },
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(micro(), cfg).unwrap();
        let before = t.bundle().clone();
        let reports = t.run(&refs, |_| {}).unwrap();
        assert_eq!(reports.len(), 5);
        assert_eq!(bits(&before, Group::Content), bits(t.bundle(), Group::Content));
        assert_eq!(bits(&before, Group::Motion), bits(t.bundle(), Group::Motion));
    }

    #[test]
    fn runs_are_reproducible() {
        let clips = data();
        let refs: Vec<_> = clips.iter().collect();
        let cfg = TrainConfig {
            iterations: 6,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let run = || {
            let mut t = Trainer::new(micro(), cfg.clone()).unwrap();
            let r = t.run(&refs, |_| {}).unwrap();
            (r, t.into_bundle())
        };
        let (ra, a) = run();
        let (rb, b) = run();
        assert_eq!(ra, rb);
        assert_eq!(bits(&a, Group::Content), bits(&b, Group::Content));
        assert_eq!(bits(&a, Group::Motion), bits(&b, Group::Motion));
    }

    #[test]
    fn copy_last_baseline_oracle() {
        let a = Tensor::<f32>::from_f64(&[1, 1, 1, 2], &[0.0, 1.0]).unwrap();
        let b = Tensor::<f32>::from_f64(&[1, 1, 1, 2], &[1.0, 1.0]).unwrap();
        assert_eq!(copy_last_l2(&a, &b).unwrap(), 0.5);
        let clips = data();
        let refs: Vec<_> = clips.iter().collect();
        let bundle = ModelBundle::<f32>::new(micro(), 0).unwrap();
        let r = evaluate_next_frame(&bundle, &refs).unwrap();
        assert_eq!(r.pairs, 16);
        assert!(r.baseline_l2 > 0.0 && r.model_l2 > 0.0);
        assert!((r.ratio - r.model_l2 / r.baseline_l2).abs() < 1e-12);
    }
}
