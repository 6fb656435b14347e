//! Procedural test sequences with exact ground truth.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::Sequence;
use crate::error::{Error, Result};
use crate::featmap::Rect;
use crate::features::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Static,
    Distractor,
    Deform,
    Occlusion,
    Zoom,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Static, Preset::Distractor, Preset::Deform, Preset::Occlusion, Preset::Zoom];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Static => "static",
            Preset::Distractor => "distractor",
            Preset::Deform => "deform",
            Preset::Occlusion => "occlusion",
            Preset::Zoom => "zoom",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSpec {
    pub preset: Preset,
    pub frames: usize,
    pub seed: u64,
    pub image_size: usize,
    pub target_size: usize,
    pub motion_amplitude: f64,
}

impl SynthSpec {
    pub fn new(preset: Preset, frames: usize, seed: u64) -> Self {
        Self { preset, frames, seed, image_size: 288, target_size: 40, motion_amplitude: 40.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 frames, got {}", self.frames)));
        }
        if self.target_size < 8 || self.image_size < 4 * self.target_size {
            return Err(Error::InvalidArgument(format!(
                "target size {} must be at least 8 and at most a quarter of the image size {}",
                self.target_size, self.image_size
            )));
        }
        if !(self.motion_amplitude >= 0.0 && self.motion_amplitude.is_finite()) {
            return Err(Error::InvalidArgument(format!("motion amplitude {}", self.motion_amplitude)));
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        format!("{}-{:04}", self.preset, self.seed)
    }
}

/// Smooth value noise on a square lattice, sampled in lattice units.
#[derive(Debug, Clone)]
struct ValueNoise {
    n: usize,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let values = (0..n * n).map(|_| rng.random::<f64>()).collect();
        Self { n, values }
    }

    /// Periodic in both axes with period `n`.
    fn sample(&self, u: f64, v: f64) -> f64 {
        let n = self.n as f64;
        let (u, v) = (u.rem_euclid(n), v.rem_euclid(n));
        let (i0, j0) = (u.floor() as usize % self.n, v.floor() as usize % self.n);
        let (i1, j1) = ((i0 + 1) % self.n, (j0 + 1) % self.n);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tu, tv) = (smooth(u - u.floor()), smooth(v - v.floor()));
        let at = |i: usize, j: usize| self.values[j * self.n + i];
        let top = at(i0, j0) * (1.0 - tu) + at(i1, j0) * tu;
        let bottom = at(i0, j1) * (1.0 - tu) + at(i1, j1) * tu;
        top * (1.0 - tv) + bottom * tv
    }
}

/// Two-octave texture in object-relative coordinates `(u, v)` in [0, 1].
#[derive(Debug, Clone)]
struct ObjectTexture {
    coarse: ValueNoise,
    fine: ValueNoise,
    lo: f64,
    hi: f64,
}

impl ObjectTexture {
    fn sample(&self, u: f64, v: f64) -> f64 {
        let c = self.coarse.sample(u * 3.0, v * 3.0);
        let f = self.fine.sample(u * 6.0, v * 6.0);
        let t = (0.65 * c + 0.35 * f).clamp(0.0, 1.0);
        // stretch the mid range for contrast
        let t = ((t - 0.5) * 2.2 + 0.5).clamp(0.0, 1.0);
        self.lo + (self.hi - self.lo) * t
    }
}

/// Which scene elements to draw; disabling one renders the scene without it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layers {
    pub target: bool,
    pub distractor: bool,
    pub occluder: bool,
}

impl Layers {
    pub const ALL: Layers = Layers { target: true, distractor: true, occluder: true };
}

/// A fully described scene: textures plus per-frame object boxes.
#[derive(Debug, Clone)]
pub struct Scene {
    spec: SynthSpec,
    background: [ValueNoise; 2],
    target_tex: ObjectTexture,
    distractor_tex: ObjectTexture,
    occluder_tex: ValueNoise,
    targets: Vec<Rect>,
    distractors: Vec<Option<Rect>>,
    occluders: Vec<Option<Rect>>,
}

/// Pixel noise amplitude (uniform, peak).
const PIXEL_NOISE: f64 = 0.02;

impl Scene {
    pub fn new(spec: &SynthSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_5eed_0000_0001);
        let background = [ValueNoise::new(12, &mut rng), ValueNoise::new(24, &mut rng)];
        let coarse = ValueNoise::new(3, &mut rng);
        let target_tex = ObjectTexture { coarse: coarse.clone(), fine: ValueNoise::new(6, &mut rng), lo: 0.05, hi: 0.95 };
        // same coarse pattern and palette, different fine detail
        let distractor_tex = ObjectTexture { coarse, fine: ValueNoise::new(6, &mut rng), lo: 0.05, hi: 0.95 };
        let occluder_tex = ValueNoise::new(4, &mut rng);

        let size = spec.image_size as f64;
        let ts = spec.target_size as f64;
        let amp = spec.motion_amplitude;
        let nf = spec.frames;
        let phase = rng.random_range(0.0..TAU);
        let period = rng.random_range(80.0..120.0);
        let center = size / 2.0;
        let wander = |t: f64, a: f64| -> (f64, f64) {
            (center + a * (TAU * t / period + phase).sin(), center + 0.5 * a * (TAU * t / (0.7 * period) + 2.0 * phase).sin())
        };

        let mut targets = Vec::with_capacity(nf);
        let mut distractors = vec![None; nf];
        let mut occluders = vec![None; nf];
        match spec.preset {
            Preset::Static => targets = vec![Rect::new(center, center, ts, ts)?; nf],
            Preset::Distractor => {
                // the target drifts horizontally; the distractor approaches on a
                // diagonal, crosses behind the target mid-sequence and leaves
                let crossing = nf as f64 / 2.0;
                let speed = 1.6 * ts / (nf as f64 / 4.0).max(1.0);
                let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
                for t in 0..nf {
                    let tf = t as f64;
                    let (cx, cy) = wander(tf, 0.5 * amp);
                    targets.push(Rect::new(cx, cy, ts, ts)?);
                    let d = (tf - crossing) * speed;
                    let dx = (cx + dir * d).clamp(ts, size - ts);
                    let dy = (cy + 0.35 * d).clamp(ts, size - ts);
                    distractors[t] = Some(Rect::new(dx, dy, ts, ts)?);
                }
            }
            Preset::Deform => {
                let dperiod = rng.random_range(30.0..45.0);
                for t in 0..nf {
                    let tf = t as f64;
                    let (cx, cy) = wander(tf, amp);
                    let s = 0.3 * (TAU * tf / dperiod).sin();
                    targets.push(Rect::new(cx, cy, ts * (1.0 + s), ts / (1.0 + s))?);
                }
            }
            Preset::Occlusion => {
                let start = (nf as f64 * 0.4).round() as usize;
                let len = (nf / 5).max(5).min(nf - start);
                for t in 0..nf {
                    let (cx, cy) = wander(t as f64, 0.25 * amp);
                    targets.push(Rect::new(cx, cy, ts, ts)?);
                }
                // one occluder covering every target box of the window
                let window = &targets[start..start + len];
                let x0 = window.iter().map(|r| r.left()).fold(f64::INFINITY, f64::min) - 6.0;
                let x1 = window.iter().map(|r| r.right()).fold(f64::NEG_INFINITY, f64::max) + 6.0;
                let y0 = window.iter().map(|r| r.top()).fold(f64::INFINITY, f64::min) - 6.0;
                let y1 = window.iter().map(|r| r.bottom()).fold(f64::NEG_INFINITY, f64::max) + 6.0;
                let occ = Rect::from_xywh(x0, y0, x1 - x0, y1 - y0)?;
                for slot in &mut occluders[start..start + len] {
                    *slot = Some(occ);
                }
            }
            Preset::Zoom => {
                // monotone growth by 1.6x over the sequence
                let rate = 1.6f64.powf(1.0 / (nf - 1) as f64);
                for t in 0..nf {
                    let (cx, cy) = wander(t as f64, 0.5 * amp);
                    let side = ts * rate.powi(t as i32);
                    targets.push(Rect::new(cx, cy, side, side)?);
                }
            }
        }
        for r in &targets {
            if r.left() < 0.0 || r.top() < 0.0 || r.right() > size || r.bottom() > size {
                return Err(Error::InvalidArgument(format!(
                    "motion amplitude {amp} moves the target out of a {size}px image"
                )));
            }
        }
        Ok(Self { spec: spec.clone(), background, target_tex, distractor_tex, occluder_tex, targets, distractors, occluders })
    }

    pub fn groundtruth(&self) -> &[Rect] {
        &self.targets
    }

    /// First and one-past-last frame of the occlusion window, if any.
    pub fn occlusion_window(&self) -> Option<(usize, usize)> {
        let start = self.occluders.iter().position(Option::is_some)?;
        let len = self.occluders[start..].iter().take_while(|o| o.is_some()).count();
        Some((start, start + len))
    }

    pub fn distractor(&self, t: usize) -> Option<Rect> {
        self.distractors[t]
    }

    pub fn render(&self, t: usize, layers: Layers) -> Image {
        let n = self.spec.image_size;
        let mut noise = ChaCha8Rng::seed_from_u64(self.spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ t as u64);
        let target = layers.target.then_some(self.targets[t]);
        let distractor = if layers.distractor { self.distractors[t] } else { None };
        let occluder = if layers.occluder { self.occluders[t] } else { None };
        let mut data = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                let mut v = 0.3
                    + 0.25 * self.background[0].sample(px / 24.0, py / 24.0)
                    + 0.15 * self.background[1].sample(px / 12.0, py / 12.0);
                for (rect, tex) in [(distractor, &self.distractor_tex), (target, &self.target_tex)] {
                    if let Some(r) = rect {
                        let cov = coverage(&r, x, y);
                        if cov > 0.0 {
                            let o = tex.sample((px - r.left()) / r.w, (py - r.top()) / r.h);
                            v = v * (1.0 - cov) + o * cov;
                        }
                    }
                }
                if let Some(r) = occluder {
                    let cov = coverage(&r, x, y);
                    if cov > 0.0 {
                        let o = 0.45 + 0.1 * self.occluder_tex.sample(px / 32.0, py / 32.0);
                        v = v * (1.0 - cov) + o * cov;
                    }
                }
                let jitter = noise.random_range(-PIXEL_NOISE..PIXEL_NOISE);
                data.push(((v + jitter).clamp(0.0, 1.0) * 255.0).round() / 255.0);
            }
        }
        Image::new(n, n, 1, data).expect("rendered frame is well formed")
    }
}

/// Fraction of pixel `(x, y)` covered by `r`.
fn coverage(r: &Rect, x: usize, y: usize) -> f64 {
    let span = |a0: f64, a1: f64, p: usize| {
        let p = p as f64;
        (a1.min(p + 1.0) - a0.max(p)).clamp(0.0, 1.0)
    };
    span(r.left(), r.right(), x) * span(r.top(), r.bottom(), y)
}

/// Renders every frame of a synthetic sequence.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<Sequence> {
    let scene = Scene::new(spec)?;
    let frames = (0..spec.frames).map(|t| scene.render(t, Layers::ALL)).collect();
    Sequence::new(spec.name(), frames, scene.groundtruth().to_vec())
}
