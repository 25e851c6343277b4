//! Procedural labelled clips of a single moving shape.

mod render;
mod store;

pub use render::{BackgroundKind, Motion, Pose, Scene, ShapeKind, SUPERSAMPLE};
pub use store::{
    gen_dataset, manifest_path, read_clips, split_ids, write_clips, ClipEntry, Dataset, Manifest, Split, SMV1_MAGIC,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Motion classes. A dataset with `K` classes uses the first `K` entries of
/// [`Action::ALL`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    TranslateHorizontal,
    Rotate,
    SmallJitter,
    Static,
    TranslateVertical,
    Diagonal,
    ScaleOscillate,
    ParabolicBounce,
}

impl Action {
    pub const ALL: [Action; 8] = [
        Action::TranslateHorizontal,
        Action::Rotate,
        Action::SmallJitter,
        Action::Static,
        Action::TranslateVertical,
        Action::Diagonal,
        Action::ScaleOscillate,
        Action::ParabolicBounce,
    ];

    pub fn from_index(k: usize) -> Result<Action> {
        Action::ALL.get(k).copied().ok_or(Error::OutOfRange {
            op: "action",
            index: k,
            limit: Action::ALL.len(),
        })
    }

    pub fn index(self) -> usize {
        Action::ALL.iter().position(|&a| a == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::TranslateHorizontal => "translate-horizontal",
            Action::Rotate => "rotate",
            Action::SmallJitter => "small-jitter",
            Action::Static => "static",
            Action::TranslateVertical => "translate-vertical",
            Action::Diagonal => "diagonal",
            Action::ScaleOscillate => "scale-oscillate",
            Action::ParabolicBounce => "parabolic-bounce",
        }
    }

    /// Names of the first `k` classes.
    pub fn names(k: usize) -> Result<Vec<String>> {
        check_classes(k)?;
        Ok(Action::ALL[..k].iter().map(|a| a.name().to_string()).collect())
    }
}

pub(crate) fn check_classes(k: usize) -> Result<()> {
    if k == 0 || k > Action::ALL.len() {
        return Err(Error::invalid(format!(
            "class count must be 1..={}, got {k}",
            Action::ALL.len()
        )));
    }
    Ok(())
}

/// A class index within a `K`-way label set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionLabel {
    pub index: usize,
    pub classes: usize,
}

impl ActionLabel {
    pub fn new(index: usize, classes: usize) -> Result<Self> {
        check_classes(classes)?;
        if index >= classes {
            return Err(Error::OutOfRange {
                op: "action label",
                index,
                limit: classes,
            });
        }
        Ok(ActionLabel { index, classes })
    }

    pub fn action(&self) -> Action {
        Action::ALL[self.index]
    }

    pub fn name(&self) -> &'static str {
        self.action().name()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub frames: usize,
    pub size: usize,
    pub channels: usize,
}

impl Default for ClipSpec {
    fn default() -> Self {
        ClipSpec {
            frames: 10,
            size: 32,
            channels: 1,
        }
    }
}

impl ClipSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::invalid(format!(
                "clips need at least 2 frames, got {}",
                self.frames
            )));
        }
        if self.size < 16 {
            return Err(Error::invalid(format!(
                "frame size must be at least 16, got {}",
                self.size
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::invalid(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        Ok(())
    }

    /// Additionally require the frame size to be divisible by `divisor`.
    pub fn validate_for(&self, divisor: usize) -> Result<()> {
        self.validate()?;
        if !self.size.is_multiple_of(divisor) {
            return Err(Error::invalid(format!(
                "frame size {} is not divisible by {divisor}",
                self.size
            )));
        }
        Ok(())
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        [self.channels, self.size, self.size]
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.size * self.size
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    /// `T x C x H x W`, values in `[-1, 1]`.
    pub frames: Tensor<f32>,
    pub action: usize,
    pub shape_id: usize,
    pub background_id: usize,
    pub seed: u64,
}

impl VideoClip {
    /// Wrap frames that did not come from a rendered scene. The shape and
    /// background ids are set to [`VideoClip::UNKNOWN`].
    pub fn generated(frames: Tensor<f32>, action: usize, seed: u64) -> Result<Self> {
        if frames.rank() != 4 {
            return Err(Error::invalid(format!(
                "clip frames must be (T, C, H, W), got {:?}",
                frames.shape()
            )));
        }
        Ok(VideoClip {
            frames,
            action,
            shape_id: Self::UNKNOWN,
            background_id: Self::UNKNOWN,
            seed,
        })
    }

    pub const UNKNOWN: usize = usize::MAX;

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn spec(&self) -> ClipSpec {
        let [t, c, h, _] = self.frames.dims4();
        ClipSpec {
            frames: t,
            size: h,
            channels: c,
        }
    }

    /// Frame `t` as `(1, C, H, W)`.
    pub fn frame(&self, t: usize) -> Result<Tensor<f32>> {
        self.frames.batch_item(t)
    }
}

fn scene(action: ActionLabel, seed: u64, spec: &ClipSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = SeededRng::new(seed);
    render::draw_scene(&mut rng, action.action(), spec.frames, spec.size, spec.channels)
}

/// Render the clip for `(action, seed, spec)`. Deterministic.
pub fn gen_clip(action: ActionLabel, seed: u64, spec: &ClipSpec) -> Result<VideoClip> {
    let scene = scene(action, seed, spec)?;
    render_clip(&scene, action.index, seed, spec)
}

/// Scene parameters `gen_clip` would use, without rendering.
pub fn scene_for(action: ActionLabel, seed: u64, spec: &ClipSpec) -> Result<Scene> {
    scene(action, seed, spec)
}

/// Render an explicit scene.
pub fn render_clip(scene: &Scene, action: usize, seed: u64, spec: &ClipSpec) -> Result<VideoClip> {
    spec.validate()?;
    if scene.channels() != spec.channels {
        return Err(Error::invalid(format!(
            "scene has {} colour channels, spec {}",
            scene.channels(),
            spec.channels
        )));
    }
    let len = spec.frame_len();
    let mut data = vec![0.0f32; spec.frames * len];
    for (t, frame) in data.chunks_mut(len).enumerate() {
        scene.render_frame(t, spec.size, frame);
    }
    let [c, h, w] = spec.frame_shape();
    Ok(VideoClip {
        frames: Tensor::new(&[spec.frames, c, h, w], data)?,
        action,
        shape_id: ShapeKind::ALL.iter().position(|&s| s == scene.shape).unwrap(),
        background_id: BackgroundKind::ALL.iter().position(|&b| b == scene.background).unwrap(),
        seed,
    })
}

/// `x_t - x_{t-1}` as `(1, C, H, W)`.
pub fn difference_map(clip: &VideoClip, t: usize) -> Result<Tensor<f32>> {
    if t == 0 || t >= clip.num_frames() {
        return Err(Error::OutOfRange {
            op: "difference_map",
            index: t,
            limit: clip.num_frames(),
        });
    }
    clip.frame(t)?.sub(&clip.frame(t - 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(a: Action) -> ActionLabel {
        ActionLabel::new(a.index(), 8).unwrap()
    }

    #[test]
    fn registry() {
        assert_eq!(
            Action::names(4).unwrap(),
            ["translate-horizontal", "rotate", "small-jitter", "static"]
        );
        assert!(Action::names(9).is_err());
        assert!(ActionLabel::new(4, 4).is_err());
        for a in Action::ALL {
            assert_eq!(Action::from_index(a.index()).unwrap(), a);
        }
    }

    #[test]
    fn deterministic_and_in_range() {
        let spec = ClipSpec::default();
        for a in Action::ALL {
            for seed in 0..6 {
                let c1 = gen_clip(label(a), seed, &spec).unwrap();
                let c2 = gen_clip(label(a), seed, &spec).unwrap();
                assert_eq!(c1, c2);
                assert!(c1.frames.data().iter().all(|v| (-1.0..=1.0).contains(v)));
                assert_eq!(c1.frames.shape(), &[10, 1, 32, 32]);
            }
        }
    }

    #[test]
    fn rgb_clips() {
        let spec = ClipSpec {
            channels: 3,
            ..ClipSpec::default()
        };
        let c = gen_clip(label(Action::Rotate), 3, &spec).unwrap();
        assert_eq!(c.frames.shape(), &[10, 3, 32, 32]);
    }

    #[test]
    fn static_frames_identical() {
        let c = gen_clip(label(Action::Static), 9, &ClipSpec::default()).unwrap();
        let f0 = c.frame(0).unwrap();
        for t in 1..10 {
            assert_eq!(c.frame(t).unwrap(), f0);
            assert!(difference_map(&c, t).unwrap().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn moving_classes_move() {
        for a in Action::ALL.iter().filter(|&&a| a != Action::Static) {
            let c = gen_clip(label(*a), 1, &ClipSpec::default()).unwrap();
            assert!(difference_map(&c, 1).unwrap().max_abs() > 0.05, "{a:?}");
        }
    }

    #[test]
    fn difference_reconstructs() {
        let c = gen_clip(label(Action::Diagonal), 4, &ClipSpec::default()).unwrap();
        for t in 1..10 {
            let d = difference_map(&c, t).unwrap();
            assert!(d.data().iter().all(|v| (-2.0..=2.0).contains(v)));
            let prev = c.frame(t - 1).unwrap();
            let rebuilt = prev.add(&d).unwrap();
            let cur = c.frame(t).unwrap();
            for (r, x) in rebuilt.data().iter().zip(cur.data()) {
                assert!((r - x).abs() <= 1e-6);
            }
        }
        assert!(difference_map(&c, 0).is_err());
        assert!(difference_map(&c, 10).is_err());
    }

    fn flat_translate(v: f64) -> Scene {
        Scene {
            shape: ShapeKind::Triangle,
            radius: 4.5,
            aspect: 0.8,
            angle: 0.4,
            background: BackgroundKind::Flat,
            bg_from: vec![-0.7],
            bg_to: vec![-0.7],
            fg: vec![0.6],
            motion: Motion::Linear {
                x0: 8.3125,
                y0: 15.5625,
                vx: v,
                vy: 0.0,
            },
        }
    }

    #[test]
    fn integer_translation_is_a_shift() {
        let spec = ClipSpec {
            frames: 6,
            ..ClipSpec::default()
        };
        for v in [1i64, 2, 3] {
            let clip = render_clip(&flat_translate(v as f64), 0, 0, &spec).unwrap();
            let s = spec.size;
            for t in 0..spec.frames - 1 {
                let a = clip.frame(t).unwrap();
                let b = clip.frame(t + 1).unwrap();
                for i in 0..s {
                    for j in 0..s - v as usize {
                        assert_eq!(b.data()[i * s + j + v as usize], a.data()[i * s + j]);
                    }
                }
            }
        }
    }

    #[test]
    fn translation_difference_is_confined_to_edges() {
        let spec = ClipSpec {
            frames: 3,
            ..ClipSpec::default()
        };
        let scene = flat_translate(2.0);
        let clip = render_clip(&scene, 0, 0, &spec).unwrap();
        let d = difference_map(&clip, 1).unwrap();
        // Support oracle: a pixel can change only if it is touched by the
        // shape's footprint in either frame but not fully covered in both.
        let s = spec.size;
        let mut cover = [vec![0.0f32; s * s], vec![0.0f32; s * s]];
        for (t, c) in cover.iter_mut().enumerate() {
            let mut mask_scene = scene.clone();
            mask_scene.bg_from = vec![0.0];
            mask_scene.bg_to = vec![0.0];
            mask_scene.fg = vec![1.0];
            mask_scene.render_frame(t, s, c);
        }
        let mut changed = 0;
        for p in 0..s * s {
            let stable = (cover[0][p] == 0.0 && cover[1][p] == 0.0) || (cover[0][p] == 1.0 && cover[1][p] == 1.0);
            if stable {
                assert_eq!(d.data()[p], 0.0);
            } else if d.data()[p] != 0.0 {
                changed += 1;
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn class_centroids_separate_motion() {
        // Nearest-centroid on foreground-centroid velocity features.
        let spec = ClipSpec::default();
        let classes = [Action::TranslateHorizontal, Action::Rotate, Action::Static];
        let features = |clip: &VideoClip| -> [f64; 3] {
            let s = spec.size;
            let cents: Vec<(f64, f64)> = (0..spec.frames)
                .map(|t| {
                    let f = clip.frame(t).unwrap();
                    let (mut m, mut x, mut y) = (0.0, 0.0, 0.0);
                    for i in 0..s {
                        for j in 0..s {
                            let v = f.data()[i * s + j] as f64;
                            if v > 0.0 {
                                m += v;
                                x += v * j as f64;
                                y += v * i as f64;
                            }
                        }
                    }
                    (x / m, y / m)
                })
                .collect();
            let vel: Vec<(f64, f64)> = cents.windows(2).map(|w| (w[1].0 - w[0].0, w[1].1 - w[0].1)).collect();
            let n = vel.len() as f64;
            let mx = vel.iter().map(|v| v.0.abs()).sum::<f64>() / n;
            let my = vel.iter().map(|v| v.1.abs()).sum::<f64>() / n;
            let turn = vel
                .windows(2)
                .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
                .sum::<f64>()
                / (n - 1.0);
            [mx, my, turn]
        };
        let mut train = vec![[0.0; 3]; 3];
        for (k, &a) in classes.iter().enumerate() {
            for seed in 0..20 {
                let f = features(&gen_clip(label(a), seed, &spec).unwrap());
                for d in 0..3 {
                    train[k][d] += f[d] / 20.0;
                }
            }
        }
        let mut correct = 0;
        let mut total = 0;
        for (k, &a) in classes.iter().enumerate() {
            for seed in 100..130 {
                let f = features(&gen_clip(label(a), seed, &spec).unwrap());
                let best = (0..3)
                    .min_by(|&p, &q| {
                        let dp: f64 = (0..3).map(|d| (f[d] - train[p][d]).powi(2)).sum();
                        let dq: f64 = (0..3).map(|d| (f[d] - train[q][d]).powi(2)).sum();
                        dp.partial_cmp(&dq).unwrap()
                    })
                    .unwrap();
                correct += usize::from(best == k);
                total += 1;
            }
        }
        assert!(correct as f64 / total as f64 > 0.9, "{correct}/{total}");
    }
}
