//! Scene description and anti-aliased rasterisation.
//!
//! Coordinates are in pixels with `(0, 0)` at the top-left corner of the
//! top-left pixel; pixel `(i, j)` covers `[j, j+1) x [i, i+1)`. Each pixel is
//! sampled on a 4x4 grid of sub-pixel points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Disc,
    Triangle,
    Cross,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Rectangle,
        ShapeKind::Disc,
        ShapeKind::Triangle,
        ShapeKind::Cross,
    ];

    /// `q` is in shape-local units of the radius.
    fn contains(self, qx: f64, qy: f64, aspect: f64) -> bool {
        match self {
            ShapeKind::Rectangle => qx.abs() <= 1.0 && qy.abs() <= aspect,
            ShapeKind::Disc => qx * qx + qy * qy <= 1.0,
            ShapeKind::Triangle => {
                // Equilateral, circumradius 1, apex pointing up (negative y).
                let s = 3f64.sqrt() / 2.0;
                qy <= 0.5 && (s * qx - 0.5 * qy) <= 0.5 && (-s * qx - 0.5 * qy) <= 0.5
            }
            ShapeKind::Cross => {
                let t = 0.35;
                (qx.abs() <= 1.0 && qy.abs() <= t) || (qy.abs() <= 1.0 && qx.abs() <= t)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundKind {
    Flat,
    HorizontalGradient,
    VerticalGradient,
}

impl BackgroundKind {
    pub const ALL: [BackgroundKind; 3] = [
        BackgroundKind::Flat,
        BackgroundKind::HorizontalGradient,
        BackgroundKind::VerticalGradient,
    ];
}

/// Shape pose at one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub cx: f64,
    pub cy: f64,
    pub scale: f64,
    pub angle: f64,
}

/// Parametric trajectory. Every variant yields a pose per frame index.
#[derive(Clone, Debug, PartialEq)]
pub enum Motion {
    Linear {
        x0: f64,
        y0: f64,
        vx: f64,
        vy: f64,
    },
    Orbit {
        px: f64,
        py: f64,
        radius: f64,
        phase: f64,
        omega: f64,
    },
    Jitter {
        x0: f64,
        y0: f64,
        offsets: Vec<(f64, f64)>,
    },
    Static {
        x0: f64,
        y0: f64,
    },
    ScaleOscillate {
        x0: f64,
        y0: f64,
        amplitude: f64,
        omega: f64,
        phase: f64,
    },
    Bounce {
        x0: f64,
        vx: f64,
        floor: f64,
        height: f64,
        period: f64,
        phase: f64,
    },
}

impl Motion {
    pub fn pose(&self, t: usize, base_angle: f64) -> Pose {
        let tf = t as f64;
        let at = |cx, cy| Pose {
            cx,
            cy,
            scale: 1.0,
            angle: base_angle,
        };
        match *self {
            Motion::Linear { x0, y0, vx, vy } => at(x0 + vx * tf, y0 + vy * tf),
            Motion::Orbit {
                px,
                py,
                radius,
                phase,
                omega,
            } => {
                let th = phase + omega * tf;
                Pose {
                    cx: px + radius * th.cos(),
                    cy: py + radius * th.sin(),
                    scale: 1.0,
                    angle: base_angle + omega * tf,
                }
            }
            Motion::Jitter { x0, y0, ref offsets } => {
                let (dx, dy) = offsets[t];
                at(x0 + dx, y0 + dy)
            }
            Motion::Static { x0, y0 } => at(x0, y0),
            Motion::ScaleOscillate {
                x0,
                y0,
                amplitude,
                omega,
                phase,
            } => Pose {
                scale: 1.0 + amplitude * (omega * tf + phase).sin(),
                ..at(x0, y0)
            },
            Motion::Bounce {
                x0,
                vx,
                floor,
                height,
                period,
                phase,
            } => {
                let s = (std::f64::consts::PI * (tf + phase) / period).sin().abs();
                at(x0 + vx * tf, floor - height * s)
            }
        }
    }
}

/// Everything needed to render a clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub shape: ShapeKind,
    /// Radius in pixels.
    pub radius: f64,
    /// Height/width ratio for rectangles.
    pub aspect: f64,
    pub angle: f64,
    pub background: BackgroundKind,
    /// Background value at the start and end of the gradient, per channel.
    pub bg_from: Vec<f64>,
    pub bg_to: Vec<f64>,
    pub fg: Vec<f64>,
    pub motion: Motion,
}

impl Scene {
    pub fn channels(&self) -> usize {
        self.fg.len()
    }

    fn background_at(&self, c: usize, i: usize, j: usize, size: usize) -> f64 {
        let f = match self.background {
            BackgroundKind::Flat => 0.0,
            BackgroundKind::HorizontalGradient => (j as f64 + 0.5) / size as f64,
            BackgroundKind::VerticalGradient => (i as f64 + 0.5) / size as f64,
        };
        self.bg_from[c] + (self.bg_to[c] - self.bg_from[c]) * f
    }

    /// Fraction of the 4x4 sub-samples of pixel `(i, j)` inside the shape.
    fn coverage(&self, pose: &Pose, i: usize, j: usize) -> f64 {
        let (sin, cos) = (-pose.angle).sin_cos();
        let inv = 1.0 / (self.radius * pose.scale);
        let step = 1.0 / SUPERSAMPLE as f64;
        let mut hits = 0;
        for v in 0..SUPERSAMPLE {
            let py = i as f64 + (v as f64 + 0.5) * step - pose.cy;
            for u in 0..SUPERSAMPLE {
                let px = j as f64 + (u as f64 + 0.5) * step - pose.cx;
                let qx = (cos * px - sin * py) * inv;
                let qy = (sin * px + cos * py) * inv;
                if self.shape.contains(qx, qy, self.aspect) {
                    hits += 1;
                }
            }
        }
        hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
    }

    /// Render frame `t` as `C x size x size` values, channel-major.
    pub fn render_frame(&self, t: usize, size: usize, out: &mut [f32]) {
        let pose = self.motion.pose(t, self.angle);
        let reach = BOUND * self.radius * pose.scale + 1.0;
        let lo = |c: f64| ((c - reach).floor().max(0.0)) as usize;
        let hi = |c: f64| ((c + reach).ceil().max(0.0) as usize).min(size);
        let (i0, i1, j0, j1) = (lo(pose.cy), hi(pose.cy), lo(pose.cx), hi(pose.cx));
        let plane = size * size;
        for c in 0..self.channels() {
            for i in 0..size {
                for j in 0..size {
                    let bg = self.background_at(c, i, j, size);
                    let a = if (i0..i1).contains(&i) && (j0..j1).contains(&j) {
                        self.coverage(&pose, i, j)
                    } else {
                        0.0
                    };
                    out[c * plane + i * size + j] = (bg * (1.0 - a) + self.fg[c] * a) as f32;
                }
            }
        }
    }
}

/// Bounding radius of every shape in units of its radius.
const BOUND: f64 = std::f64::consts::SQRT_2;

fn q16(v: f64) -> f64 {
    (v * 16.0).round() / 16.0
}

fn q16_floor(v: f64) -> f64 {
    (v * 16.0).floor() / 16.0
}

fn sign(rng: &mut SeededRng) -> f64 {
    if rng.coin(0.5) {
        1.0
    } else {
        -1.0
    }
}

/// Start coordinate for a 1-D linear path of total signed travel `travel`
/// keeping `[pos - r, pos + r]` inside `[1, size - 1]` throughout.
fn linear_start(rng: &mut SeededRng, size: f64, r: f64, travel: f64) -> Result<f64> {
    let lo = 1.0 + r - travel.min(0.0);
    let hi = size - 1.0 - r - travel.max(0.0);
    if hi < lo {
        return Err(Error::invalid(format!(
            "shape of radius {r:.2} cannot travel {travel:.2} px in a {size} px frame"
        )));
    }
    Ok(q16(rng.uniform_range(lo, hi)))
}

fn centre(rng: &mut SeededRng, size: f64, reach: f64) -> Result<(f64, f64)> {
    Ok((
        linear_start(rng, size, reach, 0.0)?,
        linear_start(rng, size, reach, 0.0)?,
    ))
}

/// Draw a scene for `action` (a registry name) from `rng`.
pub(crate) fn draw_scene(
    rng: &mut SeededRng,
    action: super::Action,
    frames: usize,
    size: usize,
    channels: usize,
) -> Result<Scene> {
    use super::Action;
    let u = size as f64 / 32.0;
    let sz = size as f64;
    let shape = ShapeKind::ALL[rng.below(ShapeKind::ALL.len())];
    let background = BackgroundKind::ALL[rng.below(BackgroundKind::ALL.len())];
    let mut bg_from = Vec::with_capacity(channels);
    let mut bg_to = Vec::with_capacity(channels);
    let mut fg = Vec::with_capacity(channels);
    for _ in 0..channels {
        let a = rng.uniform_range(-0.9, -0.5);
        let b = if background == BackgroundKind::Flat {
            a
        } else {
            (a + rng.uniform_range(0.2, 0.4)).min(-0.2)
        };
        bg_from.push(a);
        bg_to.push(b);
        fg.push(rng.uniform_range(0.3, 0.9));
    }
    let radius = u * rng.uniform_range(3.5, 5.0);
    let aspect = rng.uniform_range(0.7, 1.0);
    let angle = rng.uniform_range(0.0, std::f64::consts::PI);
    let reach = BOUND * radius;
    let steps = (frames - 1) as f64;

    let motion = match action {
        Action::TranslateHorizontal | Action::TranslateVertical | Action::Diagonal => {
            let per_axis = if action == Action::Diagonal { 0.75 } else { 1.0 };
            let max_speed = ((sz - 2.0 - 2.0 * reach) / steps).max(0.0);
            let speed = q16_floor((u * rng.uniform_range(1.0, 1.75) * per_axis).min(max_speed));
            if speed <= 0.0 {
                return Err(Error::invalid(format!("shape too large for a {size} px frame")));
            }
            let (sx, sy) = (sign(rng), sign(rng));
            let (vx, vy) = match action {
                Action::TranslateHorizontal => (sx * speed, 0.0),
                Action::TranslateVertical => (0.0, sy * speed),
                _ => (sx * speed, sy * speed),
            };
            let x0 = linear_start(rng, sz, reach, vx * steps)?;
            let y0 = linear_start(rng, sz, reach, vy * steps)?;
            Motion::Linear { x0, y0, vx, vy }
        }
        Action::Rotate => {
            let orbit = u * rng.uniform_range(3.0, 5.0);
            let (px, py) = centre(rng, sz, reach + orbit)?;
            let omega = sign(rng) * rng.uniform_range(0.35, 0.6);
            let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
            Motion::Orbit {
                px,
                py,
                radius: orbit,
                phase,
                omega,
            }
        }
        Action::SmallJitter => {
            let amp = 0.75 * u;
            let (x0, y0) = centre(rng, sz, reach + amp)?;
            let offsets = (0..frames)
                .map(|_| (rng.uniform_range(-amp, amp), rng.uniform_range(-amp, amp)))
                .collect();
            Motion::Jitter { x0, y0, offsets }
        }
        Action::Static => {
            let (x0, y0) = centre(rng, sz, reach)?;
            Motion::Static { x0, y0 }
        }
        Action::ScaleOscillate => {
            let amplitude = 0.3;
            let (x0, y0) = centre(rng, sz, reach * (1.0 + amplitude))?;
            Motion::ScaleOscillate {
                x0,
                y0,
                amplitude,
                omega: rng.uniform_range(0.6, 1.0),
                phase: rng.uniform_range(0.0, std::f64::consts::TAU),
            }
        }
        Action::ParabolicBounce => {
            let height = (u * rng.uniform_range(6.0, 10.0)).min(sz - 2.0 - 2.0 * reach).max(0.0);
            let vx = sign(rng) * u * rng.uniform_range(0.3, 0.8);
            let vx = vx.clamp(-(sz - 2.0 - 2.0 * reach) / steps, (sz - 2.0 - 2.0 * reach) / steps);
            let x0 = linear_start(rng, sz, reach, vx * steps)?;
            let floor = sz - 1.0 - reach;
            Motion::Bounce {
                x0,
                vx,
                floor,
                height,
                period: rng.uniform_range(4.0, 6.0),
                phase: rng.uniform_range(0.0, 6.0),
            }
        }
    };
    Ok(Scene {
        shape,
        radius,
        aspect,
        angle,
        background,
        bg_from,
        bg_to,
        fg,
        motion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_contain_their_centre() {
        for s in ShapeKind::ALL {
            assert!(s.contains(0.0, 0.0, 0.8));
            assert!(!s.contains(1.5, 1.5, 0.8));
        }
    }

    #[test]
    fn coverage_is_fractional_at_edges() {
        let scene = Scene {
            shape: ShapeKind::Rectangle,
            radius: 4.0,
            aspect: 1.0,
            angle: 0.0,
            background: BackgroundKind::Flat,
            bg_from: vec![-1.0],
            bg_to: vec![-1.0],
            fg: vec![1.0],
            motion: Motion::Static { x0: 8.5, y0: 8.0 },
        };
        let mut out = vec![0.0f32; 16 * 16];
        scene.render_frame(0, 16, &mut out);
        // x from 4.5 to 12.5: half coverage in columns 4 and 12
        assert_eq!(out[8 * 16 + 4], 0.0);
        assert_eq!(out[8 * 16 + 12], 0.0);
        assert_eq!(out[8 * 16 + 8], 1.0);
        assert_eq!(out[8 * 16 + 3], -1.0);
        assert_eq!(out[2 * 16 + 8], -1.0);
    }
}
