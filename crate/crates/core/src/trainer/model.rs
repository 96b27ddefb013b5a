use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::TrainerError;
use crate::acquisition::VoxelGrid;
use crate::geometry::{mlr_logits, BallPoint, Curvature, MlrHyperplane, PoincareBall};
use crate::mixing::{LabeledCloud, LabeledImage};
use crate::scalar::{safe_norm, softmax, Real};

/// Channels of a 3×3 RGB patch.
pub const RGB_FEATURES: usize = 27;
/// xyz, intensity and log voxel occupancy.
pub const LIDAR_FEATURES: usize = 5;

pub const DEFAULT_TANGENT_CLIP: f64 = 2.0;

/// `x ↦ exp₀(W₂ tanh(W₁x + b₁) + b₂)`. Parameters are stored flat as
/// `W₁ (hidden × input)`, `b₁`, `W₂ (dim × hidden)`, `b₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyEncoder {
    pub input_dim: usize,
    pub hidden: usize,
    pub dim: usize,
    /// Largest tangent norm before the exponential map.
    pub tangent_clip: f64,
}

impl TinyEncoder {
    pub fn param_count(&self) -> usize {
        self.hidden * self.input_dim + self.hidden + self.dim * self.hidden + self.dim
    }

    /// Tangent vector at the origin for one cell.
    pub fn tangent<T: Real>(&self, params: &[T], x: &[f64]) -> Vec<T> {
        let (i, h) = (self.input_dim, self.hidden);
        let (w1, rest) = params.split_at(h * i);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(self.dim * h);
        let hid: Vec<T> = (0..h)
            .map(|k| T::affine(&w1[k * i..(k + 1) * i], x, b1[k]).tanh())
            .collect();
        (0..self.dim)
            .map(|k| {
                w2[k * h..(k + 1) * h]
                    .iter()
                    .zip(&hid)
                    .fold(b2[k], |acc, (&w, &z)| acc + w * z)
            })
            .collect()
    }

    pub fn embed<T: Real>(&self, params: &[T], x: &[f64], curvature: Curvature) -> BallPoint<T> {
        let mut v = self.tangent(params, x);
        let n = safe_norm(&v);
        if n.value() > self.tangent_clip {
            let s = T::lit(self.tangent_clip) / n;
            v.iter_mut().for_each(|x| *x = *x * s);
        }
        BallPoint::from_guarded(PoincareBall::new(curvature).exp_map0(&v), curvature)
    }

    fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let (i, h) = (self.input_dim, self.hidden);
        let n1 = Normal::new(0.0, (1.0 / i as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, (0.5 / h as f64).sqrt()).unwrap();
        let mut p = vec![0.0; self.param_count()];
        for w in &mut p[..h * i] {
            *w = n1.sample(rng);
        }
        for w in &mut p[h * i + h..h * i + h + self.dim * h] {
            *w = n2.sample(rng);
        }
        p
    }
}

/// Hyperbolic MLR head. Per class, `dim` tangent coordinates `q` with
/// offset `p = exp₀(q)`, followed by the `dim`-vector normal `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlrHead {
    pub classes: usize,
    pub dim: usize,
}

impl MlrHead {
    pub fn param_count(&self) -> usize {
        2 * self.classes * self.dim
    }

    pub fn hyperplanes<T: Real>(&self, params: &[T], curvature: Curvature) -> Vec<MlrHyperplane<T>> {
        let ball = PoincareBall::<T>::new(curvature);
        params
            .chunks(2 * self.dim)
            .map(|c| MlrHyperplane::new(ball.exp_map0(&c[..self.dim]), c[self.dim..].to_vec()))
            .collect()
    }

    fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let q = Normal::new(0.0, 0.05).unwrap();
        let a = Normal::new(0.0, (1.0 / self.dim as f64).sqrt()).unwrap();
        let mut p = Vec::with_capacity(self.param_count());
        for _ in 0..self.classes {
            p.extend((0..self.dim).map(|_| q.sample(rng)));
            p.extend((0..self.dim).map(|_| a.sample(rng)));
        }
        p
    }
}

/// Encoder and head with their parameters in one flat vector, encoder first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub encoder: TinyEncoder,
    pub head: MlrHead,
    pub curvature: Curvature,
    pub params: Vec<f64>,
}

impl Model {
    pub fn zeros(input_dim: usize, hidden: usize, dim: usize, classes: usize, curvature: Curvature) -> Self {
        let encoder = TinyEncoder {
            input_dim,
            hidden,
            dim,
            tangent_clip: DEFAULT_TANGENT_CLIP,
        };
        let head = MlrHead { classes, dim };
        let n = encoder.param_count() + head.param_count();
        Model {
            encoder,
            head,
            curvature,
            params: vec![0.0; n],
        }
    }

    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: usize,
        dim: usize,
        classes: usize,
        curvature: Curvature,
        rng: &mut R,
    ) -> Self {
        let mut m = Self::zeros(input_dim, hidden, dim, classes, curvature);
        let mut p = m.encoder.init(rng);
        p.extend(m.head.init(rng));
        m.params = p;
        m
    }

    pub fn num_classes(&self) -> usize {
        self.head.classes
    }

    /// Splits a parameter slice into encoder and head parts.
    pub fn split<'a, T>(&self, params: &'a [T]) -> (&'a [T], &'a [T]) {
        params.split_at(self.encoder.param_count())
    }

    pub fn embed<T: Real>(&self, params: &[T], x: &[f64]) -> BallPoint<T> {
        let (enc, _) = self.split(params);
        self.encoder.embed(enc, x, self.curvature)
    }

    pub fn hyperplanes<T: Real>(&self, params: &[T]) -> Vec<MlrHyperplane<T>> {
        let (_, head) = self.split(params);
        self.head.hyperplanes(head, self.curvature)
    }

    pub fn logits<T: Real>(
        &self,
        embedding: &BallPoint<T>,
        planes: &[MlrHyperplane<T>],
    ) -> Result<Vec<T>, TrainerError> {
        Ok(mlr_logits(&PoincareBall::new(self.curvature), embedding.coords(), planes)?)
    }
}

/// Embeddings and class probabilities for every input row.
pub fn forward(
    model: &Model,
    inputs: &[Vec<f64>],
) -> Result<(Vec<BallPoint<f64>>, Vec<Vec<f64>>), TrainerError> {
    let planes = model.hyperplanes(&model.params);
    let mut embs = Vec::with_capacity(inputs.len());
    let mut probs = Vec::with_capacity(inputs.len());
    for (row, x) in inputs.iter().enumerate() {
        if x.len() != model.encoder.input_dim {
            return Err(TrainerError::ShapeMismatch(format!(
                "input row {row} has {} features, encoder expects {}",
                x.len(),
                model.encoder.input_dim
            )));
        }
        let e = model.embed(&model.params, x);
        probs.push(softmax(&model.logits(&e, &planes)?));
        embs.push(e);
    }
    Ok((embs, probs))
}

/// Centered 3×3 patch around pixel `i`, edges clamped.
pub fn pixel_features(img: &LabeledImage, i: usize) -> Vec<f64> {
    let (h, w) = (img.height as isize, img.width as isize);
    let (r, c) = ((i / img.width) as isize, (i % img.width) as isize);
    let mut out = Vec::with_capacity(9 * img.num_channels);
    for dr in -1..=1 {
        for dc in -1..=1 {
            let rr = (r + dr).clamp(0, h - 1) as usize;
            let cc = (c + dc).clamp(0, w - 1) as usize;
            out.extend(img.pixel(rr * img.width + cc).iter().map(|&v| 2.0 * v as f64 - 1.0));
        }
    }
    out
}

pub fn image_features(img: &LabeledImage) -> Vec<Vec<f64>> {
    (0..img.pixels()).map(|i| pixel_features(img, i)).collect()
}

/// Per-point features: scaled xyz, intensity and log occupancy of the
/// point's voxel.
pub fn cloud_features(cloud: &LabeledCloud, voxel_size: f64) -> Result<Vec<Vec<f64>>, TrainerError> {
    let grid = VoxelGrid::build(&cloud.xyz(), voxel_size)?;
    Ok(cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let n = grid.members[grid.voxel_of(i)].len() as f64;
            vec![p[0] / 10.0, p[1] / 10.0, p[2] / 2.0, 2.0 * p[3] - 1.0, n.ln() / 2.0]
        })
        .collect())
}
