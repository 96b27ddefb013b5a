use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{stream_seed, FormatError};
use crate::mixing::LabeledCloud;

pub const LIDAR_CLASSES: [&str; 4] = ["ground", "car", "person", "trunk"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LidarClass {
    Ground = 0,
    Car = 1,
    Person = 2,
    Trunk = 3,
}

const SENSOR_HEIGHT: f64 = 1.7;
const RANGE_NOISE: f64 = 0.01;
const INTENSITY_NOISE: f64 = 0.03;
const BASE_INTENSITY: [f64; 4] = [0.30, 0.70, 0.50, 0.20];

/// Target-domain perturbations; all zero means no shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarShift {
    /// Fraction of returns dropped (one minus the density factor).
    pub density_drop: f64,
    /// Strength of the non-uniform beam spacing, in `[0, 1]`.
    pub beam_distortion: f64,
    /// Extra range noise, meters.
    pub noise: f64,
    /// Additive intensity offset.
    pub intensity_shift: f64,
}

impl LidarShift {
    pub fn none() -> Self {
        LidarShift {
            density_drop: 0.0,
            beam_distortion: 0.0,
            noise: 0.0,
            intensity_shift: 0.0,
        }
    }
}

impl Default for LidarShift {
    fn default() -> Self {
        LidarShift {
            density_drop: 0.4,
            beam_distortion: 0.5,
            noise: 0.03,
            intensity_shift: -0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarWorldConfig {
    pub seed: u64,
    pub num_classes: u32,
    pub beams: usize,
    pub azimuth_steps: usize,
    pub max_range: f64,
    pub scans: usize,
    pub shift: LidarShift,
}

impl Default for LidarWorldConfig {
    fn default() -> Self {
        LidarWorldConfig {
            seed: 0,
            num_classes: 4,
            beams: 16,
            azimuth_steps: 360,
            max_range: 20.0,
            scans: 8,
            shift: LidarShift::default(),
        }
    }
}

impl LidarWorldConfig {
    pub fn validate(&self) -> Result<(), FormatError> {
        if self.num_classes != LIDAR_CLASSES.len() as u32 {
            return Err(FormatError::Config(format!(
                "the point-cloud world has {} classes, got {}",
                LIDAR_CLASSES.len(),
                self.num_classes
            )));
        }
        if self.beams < 2 || self.azimuth_steps < 8 || !(self.max_range > 2.0) {
            return Err(FormatError::Config(format!(
                "scanner needs ≥ 2 beams, ≥ 8 azimuth steps and range > 2 m, got {} / {} / {}",
                self.beams, self.azimuth_steps, self.max_range
            )));
        }
        let s = &self.shift;
        if !(0.0..1.0).contains(&s.density_drop)
            || !(0.0..=1.0).contains(&s.beam_distortion)
            || !(s.noise >= 0.0)
            || !s.intensity_shift.is_finite()
        {
            return Err(FormatError::Config("shift knobs out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Solid {
    /// Oriented box standing on the ground.
    Box {
        cx: f64,
        cy: f64,
        yaw: f64,
        length: f64,
        width: f64,
        height: f64,
    },
    /// Vertical cylinder standing on the ground.
    Cylinder { cx: f64, cy: f64, radius: f64, height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub solid: Solid,
    pub class: LidarClass,
    pub instance: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarScene {
    pub objects: Vec<SceneObject>,
}

impl LidarScene {
    pub fn sample<R: Rng + ?Sized>(max_range: f64, rng: &mut R) -> Self {
        let far = (0.7 * max_range).max(4.0);
        let mut objects: Vec<SceneObject> = Vec::new();
        let mut centers: Vec<(f64, f64, f64)> = Vec::new();
        let plan = [
            (LidarClass::Car, rng.random_range(3..=5)),
            (LidarClass::Person, rng.random_range(2..=4)),
            (LidarClass::Trunk, rng.random_range(3..=6)),
        ];
        for (class, count) in plan {
            for _ in 0..count {
                for _attempt in 0..50 {
                    let r = rng.random_range(3.0..far);
                    let a = rng.random_range(0.0..TAU);
                    let (cx, cy) = (r * a.cos(), r * a.sin());
                    let solid = match class {
                        LidarClass::Car => Solid::Box {
                            cx,
                            cy,
                            yaw: rng.random_range(0.0..TAU),
                            length: rng.random_range(3.8..4.6),
                            width: rng.random_range(1.6..1.9),
                            height: rng.random_range(1.4..1.7),
                        },
                        LidarClass::Person => Solid::Cylinder {
                            cx,
                            cy,
                            radius: rng.random_range(0.25..0.35),
                            height: rng.random_range(1.6..1.9),
                        },
                        _ => Solid::Cylinder {
                            cx,
                            cy,
                            radius: rng.random_range(0.15..0.35),
                            height: rng.random_range(3.0..5.0),
                        },
                    };
                    let footprint = match solid {
                        Solid::Box { length, .. } => length / 2.0,
                        Solid::Cylinder { radius, .. } => radius,
                    };
                    let clear = centers
                        .iter()
                        .all(|&(x, y, f)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() > f + footprint + 0.5);
                    if clear {
                        centers.push((cx, cy, footprint));
                        objects.push(SceneObject {
                            solid,
                            class,
                            instance: objects.len() as u32 + 1,
                        });
                        break;
                    }
                }
            }
        }
        LidarScene { objects }
    }
}

/// Nearest positive ray parameter hitting `solid`; origin at sensor height.
fn intersect(solid: &Solid, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
    match *solid {
        Solid::Box {
            cx,
            cy,
            yaw,
            length,
            width,
            height,
        } => {
            let (s, c) = yaw.sin_cos();
            let (px, py) = (o[0] - cx, o[1] - cy);
            let lo = [c * px + s * py, -s * px + c * py, o[2]];
            let ld = [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]];
            let half = [length / 2.0, width / 2.0];
            let mut t0 = 0.0f64;
            let mut t1 = f64::INFINITY;
            for k in 0..3 {
                let (a, b) = if k < 2 { (-half[k], half[k]) } else { (0.0, height) };
                if ld[k].abs() < 1e-12 {
                    if lo[k] < a || lo[k] > b {
                        return None;
                    }
                } else {
                    let (mut ta, mut tb) = ((a - lo[k]) / ld[k], (b - lo[k]) / ld[k]);
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                    }
                    t0 = t0.max(ta);
                    t1 = t1.min(tb);
                    if t0 > t1 {
                        return None;
                    }
                }
            }
            (t0 > 1e-9).then_some(t0)
        }
        Solid::Cylinder { cx, cy, radius, height } => {
            let (px, py) = (o[0] - cx, o[1] - cy);
            let a = d[0] * d[0] + d[1] * d[1];
            if a < 1e-12 {
                return None;
            }
            let b = 2.0 * (px * d[0] + py * d[1]);
            let c = px * px + py * py - radius * radius;
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return None;
            }
            let t = (-b - disc.sqrt()) / (2.0 * a);
            let z = o[2] + t * d[2];
            (t > 1e-9 && (0.0..=height).contains(&z)).then_some(t)
        }
    }
}

/// Beam elevations in radians from −24° to +2°, bent towards the lower
/// field of view by `distortion`.
fn elevations(beams: usize, distortion: f64) -> Vec<f64> {
    let (lo, hi) = (-24f64.to_radians(), 2f64.to_radians());
    (0..beams)
        .map(|k| {
            let u = k as f64 / (beams - 1) as f64;
            let u = (1.0 - distortion) * u + distortion * u.powf(2.0);
            lo + (hi - lo) * u
        })
        .collect()
}

/// Casts every beam of the scanner against the scene. Coordinates are in
/// the sensor frame, so the ground lies at `z = −1.7`.
pub fn render_scan(
    scene: &LidarScene,
    beams: usize,
    azimuth_steps: usize,
    max_range: f64,
    shift: &LidarShift,
    noise_seed: u64,
    shift_seed: u64,
) -> LabeledCloud {
    let mut base = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut sh = ChaCha8Rng::seed_from_u64(shift_seed);
    let origin = [0.0, 0.0, SENSOR_HEIGHT];
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut instances = Vec::new();
    for &e in &elevations(beams, shift.beam_distortion) {
        for k in 0..azimuth_steps {
            let range_eps: f64 = StandardNormal.sample(&mut base);
            let int_eps: f64 = StandardNormal.sample(&mut base);
            let a = TAU * k as f64 / azimuth_steps as f64;
            let d = [e.cos() * a.cos(), e.cos() * a.sin(), e.sin()];
            let mut best: Option<(f64, LidarClass, u32)> = None;
            if d[2] < 0.0 {
                best = Some((-SENSOR_HEIGHT / d[2], LidarClass::Ground, 0));
            }
            for obj in &scene.objects {
                if let Some(t) = intersect(&obj.solid, origin, d) {
                    if best.is_none_or(|(bt, _, _)| t < bt) {
                        best = Some((t, obj.class, obj.instance));
                    }
                }
            }
            let (drop, extra_range) = if shift.density_drop > 0.0 || shift.noise > 0.0 {
                let u: f64 = sh.random();
                let n: f64 = StandardNormal.sample(&mut sh);
                (u < shift.density_drop, n * shift.noise)
            } else {
                (false, 0.0)
            };
            let Some((t, class, instance)) = best else {
                continue;
            };
            if t > max_range || drop {
                continue;
            }
            let r = t + range_eps * RANGE_NOISE + extra_range;
            let falloff = 1.0 - 0.3 * t / max_range;
            let intensity = (BASE_INTENSITY[class as usize] * falloff
                + int_eps * INTENSITY_NOISE
                + shift.intensity_shift)
                .clamp(0.0, 1.0);
            let p = [r * d[0], r * d[1], r * d[2]];
            points.push([p[0] as f32 as f64, p[1] as f32 as f64, p[2] as f32 as f64, intensity as f32 as f64]);
            labels.push(class as u32);
            instances.push(instance);
        }
    }
    LabeledCloud {
        points,
        labels,
        instances: Some(instances),
    }
}

/// `(source, target)` scans of scenes `0..cfg.scans`.
pub fn generate_lidar_world(cfg: &LidarWorldConfig) -> Result<(Vec<LabeledCloud>, Vec<LabeledCloud>), FormatError> {
    cfg.validate()?;
    let mut source = Vec::with_capacity(cfg.scans);
    let mut target = Vec::with_capacity(cfg.scans);
    for i in 0..cfg.scans as u64 {
        let mut geo = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, i, 0));
        let scene = LidarScene::sample(cfg.max_range, &mut geo);
        let noise = stream_seed(cfg.seed, i, 1);
        let sh = stream_seed(cfg.seed, i, 2);
        let scan = |shift: &LidarShift| render_scan(&scene, cfg.beams, cfg.azimuth_steps, cfg.max_range, shift, noise, sh);
        source.push(scan(&LidarShift::none()));
        target.push(scan(&cfg.shift));
    }
    Ok((source, target))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LidarWorldConfig {
        LidarWorldConfig {
            scans: 3,
            azimuth_steps: 180,
            ..LidarWorldConfig::default()
        }
    }

    #[test]
    fn zero_shift_is_identity() {
        let cfg = LidarWorldConfig {
            shift: LidarShift::none(),
            ..small()
        };
        let (s, t) = generate_lidar_world(&cfg).unwrap();
        assert_eq!(s, t);
    }

    #[test]
    fn labels_in_range_and_all_classes_seen() {
        let (s, _) = generate_lidar_world(&small()).unwrap();
        let mut seen = [false; 4];
        for c in &s {
            for &l in &c.labels {
                assert!(l < 4);
                seen[l as usize] = true;
            }
        }
        assert_eq!(seen, [true; 4]);
    }

    #[test]
    fn density_drop_thins_every_scan() {
        let (s, t) = generate_lidar_world(&small()).unwrap();
        for (a, b) in s.iter().zip(&t) {
            assert!(b.len() < a.len(), "{} vs {}", b.len(), a.len());
        }
    }

    #[test]
    fn ground_returns_lie_on_the_plane() {
        let cfg = LidarWorldConfig {
            shift: LidarShift::none(),
            ..small()
        };
        let (s, _) = generate_lidar_world(&cfg).unwrap();
        for (p, &l) in s[0].points.iter().zip(&s[0].labels) {
            if l == 0 {
                assert!((p[2] + SENSOR_HEIGHT).abs() < 0.05, "{p:?}");
            }
        }
    }

    #[test]
    fn box_and_cylinder_hits() {
        let b = Solid::Box { cx: 5.0, cy: 0.0, yaw: 0.0, length: 2.0, width: 2.0, height: 2.0 };
        assert!((intersect(&b, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]).unwrap() - 4.0).abs() < 1e-12);
        let c = Solid::Cylinder { cx: 0.0, cy: 5.0, radius: 1.0, height: 2.0 };
        assert!((intersect(&c, [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]).unwrap() - 4.0).abs() < 1e-12);
        assert!(intersect(&c, [0.0, 0.0, 3.0], [0.0, 1.0, 0.0]).is_none());
    }
}
