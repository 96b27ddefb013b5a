use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{stream_seed, FormatError};
use crate::mixing::LabeledImage;

pub const RGB_CLASSES: [&str; 5] = ["road", "sky", "building", "car", "pole"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgbClass {
    Road = 0,
    Sky = 1,
    Building = 2,
    Car = 3,
    Pole = 4,
}

const BASE_COLORS: [[f64; 3]; 5] = [
    [0.40, 0.40, 0.42],
    [0.55, 0.75, 0.95],
    [0.65, 0.50, 0.40],
    [0.80, 0.20, 0.20],
    [0.85, 0.80, 0.25],
];
const COLOR_JITTER: f64 = 0.08;
const TEXTURE_NOISE: f64 = 0.04;

/// Target-domain perturbations; all zero means no shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RgbShift {
    /// Rotation of colors about the gray axis, radians.
    pub hue_shift: f64,
    /// Extra per-channel Gaussian noise.
    pub noise: f64,
    /// Probability that a pole is rendered one pixel wide.
    pub pole_thinning: f64,
}

impl RgbShift {
    pub fn none() -> Self {
        RgbShift {
            hue_shift: 0.0,
            noise: 0.0,
            pole_thinning: 0.0,
        }
    }
}

impl Default for RgbShift {
    fn default() -> Self {
        RgbShift {
            hue_shift: 0.8,
            noise: 0.05,
            pole_thinning: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RgbWorldConfig {
    pub seed: u64,
    pub num_classes: u32,
    pub height: usize,
    pub width: usize,
    pub scenes: usize,
    pub shift: RgbShift,
}

impl Default for RgbWorldConfig {
    fn default() -> Self {
        RgbWorldConfig {
            seed: 0,
            num_classes: 5,
            height: 32,
            width: 32,
            scenes: 16,
            shift: RgbShift::default(),
        }
    }
}

impl RgbWorldConfig {
    pub fn validate(&self) -> Result<(), FormatError> {
        if self.num_classes != RGB_CLASSES.len() as u32 {
            return Err(FormatError::Config(format!(
                "the image world has {} classes, got {}",
                RGB_CLASSES.len(),
                self.num_classes
            )));
        }
        if self.height < 12 || self.width < 12 {
            return Err(FormatError::Config(format!(
                "images must be at least 12×12, got {}×{}",
                self.height, self.width
            )));
        }
        let s = &self.shift;
        if !(0.0..=1.0).contains(&s.pole_thinning) || !(s.noise >= 0.0) || !s.hue_shift.is_finite() {
            return Err(FormatError::Config("shift knobs out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

/// Scene geometry and per-class colors, independent of the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgbScene {
    pub height: usize,
    pub width: usize,
    pub road_top: usize,
    pub buildings: Vec<Rect>,
    pub cars: Vec<Rect>,
    pub poles: Vec<Rect>,
    pub colors: [[f64; 3]; 5],
}

impl RgbScene {
    pub fn sample<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Self {
        let h = height as f64;
        let road_top = (h * rng.random_range(0.62..0.72)).round() as usize;
        let mut buildings = Vec::new();
        let mut x = 0;
        while x < width {
            let w = rng.random_range(3..=8).min(width - x);
            if rng.random::<f64>() < 0.8 {
                let top = (h * rng.random_range(0.15..0.5)).round() as usize;
                buildings.push(Rect {
                    top,
                    bottom: road_top,
                    left: x,
                    right: x + w,
                });
            }
            x += w;
        }
        let cars = (0..rng.random_range(1..=3))
            .map(|_| {
                let cw = rng.random_range(5..=9).min(width);
                let ch = rng.random_range(3..=5);
                let bottom = rng.random_range(road_top + 1..height);
                let left = rng.random_range(0..=width - cw);
                Rect {
                    top: (bottom + 1).saturating_sub(ch),
                    bottom: bottom + 1,
                    left,
                    right: left + cw,
                }
            })
            .collect();
        let poles = (0..rng.random_range(1..=3))
            .map(|_| {
                let left = rng.random_range(1..width - 2);
                let top = (h * rng.random_range(0.08..0.3)).round() as usize;
                let bottom = (road_top + rng.random_range(0..=2)).min(height);
                Rect {
                    top,
                    bottom,
                    left,
                    right: left + 2,
                }
            })
            .collect();
        let mut colors = BASE_COLORS;
        for c in colors.iter_mut() {
            for v in c.iter_mut() {
                *v += rng.random_range(-COLOR_JITTER..COLOR_JITTER);
            }
        }
        RgbScene {
            height,
            width,
            road_top,
            buildings,
            cars,
            poles,
            colors,
        }
    }

    /// Label map; poles flagged in `thin` lose their right column.
    pub fn labels(&self, thin: &[bool]) -> Vec<u32> {
        let (h, w) = (self.height, self.width);
        let mut l = vec![RgbClass::Sky as u32; h * w];
        let mut fill = |r: &Rect, class: RgbClass| {
            for y in r.top..r.bottom.min(h) {
                for x in r.left..r.right.min(w) {
                    l[y * w + x] = class as u32;
                }
            }
        };
        for b in &self.buildings {
            fill(b, RgbClass::Building);
        }
        fill(
            &Rect {
                top: self.road_top,
                bottom: h,
                left: 0,
                right: w,
            },
            RgbClass::Road,
        );
        for c in &self.cars {
            fill(c, RgbClass::Car);
        }
        for (p, &t) in self.poles.iter().zip(thin.iter().chain(std::iter::repeat(&false))) {
            let r = if t { Rect { right: p.left + 1, ..*p } } else { *p };
            fill(&r, RgbClass::Pole);
        }
        l
    }
}

/// Rotation by `angle` about the `(1, 1, 1)` axis.
fn hue_matrix(angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let k = 1.0 / 3.0f64.sqrt();
    let t = (1.0 - c) / 3.0;
    [
        [c + t, t - s * k, t + s * k],
        [t + s * k, c + t, t - s * k],
        [t - s * k, t + s * k, c + t],
    ]
}

/// Renders one scene. The texture stream is shared by both domains; the
/// shift stream only drives the target perturbations.
pub fn render_scene(scene: &RgbScene, shift: &RgbShift, texture_seed: u64, shift_seed: u64) -> LabeledImage {
    let mut shift_rng = ChaCha8Rng::seed_from_u64(shift_seed);
    let thin: Vec<bool> = scene
        .poles
        .iter()
        .map(|_| shift_rng.random::<f64>() < shift.pole_thinning)
        .collect();
    let labels = scene.labels(&thin);
    let mut tex = ChaCha8Rng::seed_from_u64(texture_seed);
    let texture = Normal::new(0.0, TEXTURE_NOISE).expect("valid sigma");
    let extra = Normal::new(0.0, shift.noise.max(0.0)).expect("valid sigma");
    let rot = hue_matrix(shift.hue_shift);
    let (h, w) = (scene.height, scene.width);
    let mut channels = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let class = labels[y * w + x] as usize;
            let mut rgb = scene.colors[class];
            if class == RgbClass::Sky as usize {
                let g = 0.12 * y as f64 / h as f64;
                rgb = rgb.map(|v| v + g);
            }
            if class == RgbClass::Building as usize && x % 3 == 1 && y % 3 == 1 {
                rgb = rgb.map(|v| v - 0.15);
            }
            for v in rgb.iter_mut() {
                *v += texture.sample(&mut tex);
            }
            let mut out = [0.0; 3];
            for (i, o) in out.iter_mut().enumerate() {
                *o = rot[i][0] * rgb[0] + rot[i][1] * rgb[1] + rot[i][2] * rgb[2];
                if shift.noise > 0.0 {
                    *o += extra.sample(&mut shift_rng);
                }
            }
            channels.extend(out.iter().map(|v| v.clamp(0.0, 1.0) as f32));
        }
    }
    LabeledImage {
        height: h,
        width: w,
        num_channels: 3,
        channels,
        labels,
    }
}

/// `(source, target)` renderings of scenes `0..cfg.scenes`.
pub fn generate_rgb_world(cfg: &RgbWorldConfig) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>), FormatError> {
    cfg.validate()?;
    let mut source = Vec::with_capacity(cfg.scenes);
    let mut target = Vec::with_capacity(cfg.scenes);
    for i in 0..cfg.scenes as u64 {
        let mut geo = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, i, 0));
        let scene = RgbScene::sample(cfg.height, cfg.width, &mut geo);
        let tex = stream_seed(cfg.seed, i, 1);
        let sh = stream_seed(cfg.seed, i, 2);
        source.push(render_scene(&scene, &RgbShift::none(), tex, sh));
        target.push(render_scene(&scene, &cfg.shift, tex, sh));
    }
    Ok((source, target))
}
