//! Per-class wrapped-normal distributions on the ball and their estimation
//! by integrating a learned gradient flow.

mod flow;
mod meta;
mod solver;

pub use flow::{flow_field, FlowNetwork, DEFAULT_HIDDEN, V_MAX};
pub use meta::{
    meta_update, wrapped_normal_nll, AugmentedFocal, MetaConfig, MetaObjective, MetaOutcome,
    OuterGradient, ValidationNll,
};
pub use solver::{integrate, rk4_step, OdeSolverConfig, SolverMode};

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BallPoint, Curvature, GeometryError, PoincareBall};
use crate::scalar::{lift, Real};

/// Upper bound on per-coordinate tangent variance.
pub const SIGMA2_MAX: f64 = 4.0;
/// Floor on stored log-variances; `exp(-40)` is numerically a point mass.
pub const LOG_VAR_MIN: f64 = -40.0;

/// Version tag of the JSON checkpoint document.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DistributionError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("no embeddings available for class {0}")]
    EmptyStats(u32),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("adaptive step size underflow at t = {t} (h = {h})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("adaptive solver exceeded {0} steps")]
    TooManySteps(usize),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in flow")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Wrapped normal `exp_μ(PT_{0→μ}(v))`, `v ~ N(0, diag(exp(log_diag_cov)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution<T = f64> {
    pub class_id: u32,
    pub mean: BallPoint<T>,
    pub log_diag_cov: Vec<T>,
}

impl<T: Real> ClassDistribution<T> {
    /// Builds a distribution, clamping log-variances into
    /// `[LOG_VAR_MIN, ln SIGMA2_MAX]`.
    pub fn new(
        class_id: u32,
        mean: BallPoint<T>,
        log_diag_cov: Vec<T>,
    ) -> Result<Self, DistributionError> {
        if log_diag_cov.len() != mean.dim() {
            return Err(DistributionError::DimensionMismatch {
                expected: mean.dim(),
                found: log_diag_cov.len(),
            });
        }
        if log_diag_cov.iter().any(|v| v.is_nan()) {
            return Err(DistributionError::NonFinite);
        }
        let log_diag_cov = log_diag_cov.into_iter().map(clamp_log_var).collect();
        Ok(ClassDistribution {
            class_id,
            mean,
            log_diag_cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn curvature(&self) -> Curvature {
        self.mean.curvature()
    }

    pub fn variances(&self) -> Vec<T> {
        self.log_diag_cov.iter().map(|v| v.exp()).collect()
    }

    /// `θ = [μ, log σ²]`.
    pub fn flatten(&self) -> Vec<T> {
        let mut theta = self.mean.coords().to_vec();
        theta.extend_from_slice(&self.log_diag_cov);
        theta
    }

    /// Inverse of [`flatten`](Self::flatten); projects the mean into the
    /// ball and clamps the variances.
    pub fn from_flat(
        class_id: u32,
        theta: &[T],
        curvature: Curvature,
    ) -> Result<Self, DistributionError> {
        if !theta.len().is_multiple_of(2) {
            return Err(DistributionError::DimensionMismatch {
                expected: theta.len() + 1,
                found: theta.len(),
            });
        }
        let d = theta.len() / 2;
        let ball = PoincareBall::<T>::new(curvature);
        let mean = project_mean(&ball, &theta[..d]);
        ClassDistribution::new(
            class_id,
            BallPoint::from_guarded(mean, curvature),
            theta[d..].to_vec(),
        )
    }

    /// Reparameterised sample from standard-normal `noise`.
    pub fn sample_from_noise(&self, noise: &[f64]) -> Vec<T> {
        let ball = self.mean.ball();
        let v: Vec<T> = noise
            .iter()
            .zip(&self.log_diag_cov)
            .map(|(&e, &lv)| (lv * T::lit(0.5)).exp() * T::lit(e))
            .collect();
        let mu = self.mean.coords();
        ball.exp_map(&ball.transport_from_origin(&v, mu), mu)
    }

    /// Tangent vector of `y` at the mean, expressed in the origin frame.
    pub fn tangent_at_mean(&self, y: &[T]) -> Result<Vec<T>, GeometryError> {
        origin_frame_log(&self.mean.ball(), self.mean.coords(), y)
    }
}

impl ClassDistribution<f64> {
    pub fn lift<T: Real>(&self) -> ClassDistribution<T> {
        ClassDistribution {
            class_id: self.class_id,
            mean: BallPoint::from_guarded(lift(self.mean.coords()), self.curvature()),
            log_diag_cov: lift(&self.log_diag_cov),
        }
    }
}

impl<T: Real> ClassDistribution<T> {
    pub fn to_f64(&self) -> ClassDistribution<f64> {
        ClassDistribution {
            class_id: self.class_id,
            mean: BallPoint::from_guarded(
                self.mean.coords().iter().map(|v| v.value()).collect(),
                self.curvature(),
            ),
            log_diag_cov: self.log_diag_cov.iter().map(|v| v.value()).collect(),
        }
    }
}

fn clamp_log_var<T: Real>(v: T) -> T {
    v.max(T::lit(LOG_VAR_MIN)).min(T::lit(SIGMA2_MAX.ln()))
}

fn project_mean<T: Real>(ball: &PoincareBall<T>, mu: &[T]) -> Vec<T> {
    let mut m = mu.to_vec();
    ball.project(&mut m);
    m
}

fn origin_frame_log<T: Real>(
    ball: &PoincareBall<T>,
    mu: &[T],
    y: &[T],
) -> Result<Vec<T>, GeometryError> {
    let v = ball.log_map(y, mu)?;
    let s = T::one() - T::lit(ball.curvature().c()) * crate::scalar::norm_sq(mu);
    Ok(v.into_iter().map(|vi| vi / s).collect())
}

/// Draws `n` points from `dist`; deterministic for a given random stream.
pub fn wrapped_normal_sample<R: Rng + ?Sized>(
    dist: &ClassDistribution<f64>,
    n: usize,
    rng: &mut R,
) -> Result<Vec<BallPoint<f64>>, DistributionError> {
    if n == 0 {
        return Err(DistributionError::NoSamples);
    }
    let d = dist.dim();
    Ok((0..n)
        .map(|_| {
            let noise: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            BallPoint::from_guarded(dist.sample_from_noise(&noise), dist.curvature())
        })
        .collect())
}

/// Sufficient statistics of a class's embeddings, taken in the tangent
/// space at the current mean and transported to the origin frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats<T> {
    pub class_id: u32,
    pub count: usize,
    pub tangent_mean: Vec<T>,
    pub tangent_second_moment: Vec<T>,
}

impl<T: Real> ClassStats<T> {
    pub fn at(
        ball: &PoincareBall<T>,
        class_id: u32,
        mean: &[T],
        embeddings: &[Vec<f64>],
    ) -> Result<Self, DistributionError> {
        if embeddings.is_empty() {
            return Err(DistributionError::EmptyStats(class_id));
        }
        let d = mean.len();
        let mut m1 = vec![T::zero(); d];
        let mut m2 = vec![T::zero(); d];
        for y in embeddings {
            if y.len() != d {
                return Err(DistributionError::DimensionMismatch {
                    expected: d,
                    found: y.len(),
                });
            }
            let v = origin_frame_log(ball, mean, &lift::<T>(y))?;
            for k in 0..d {
                m1[k] = m1[k] + v[k];
                m2[k] = m2[k] + v[k] * v[k];
            }
        }
        let n = T::lit(embeddings.len() as f64);
        Ok(ClassStats {
            class_id,
            count: embeddings.len(),
            tangent_mean: m1.into_iter().map(|v| v / n).collect(),
            tangent_second_moment: m2.into_iter().map(|v| v / n).collect(),
        })
    }
}

/// Closed-form starting point for the flow: equal-weight gyromidpoint and
/// per-coordinate tangent variance around it.
pub fn moment_estimate(
    class_id: u32,
    embeddings: &[Vec<f64>],
    curvature: Curvature,
) -> Result<ClassDistribution<f64>, DistributionError> {
    if embeddings.is_empty() {
        return Err(DistributionError::EmptyStats(class_id));
    }
    let ball = PoincareBall::<f64>::new(curvature);
    let refs: Vec<&[f64]> = embeddings.iter().map(|e| e.as_slice()).collect();
    let mu = ball.gyromidpoint(&refs, &vec![1.0; refs.len()])?;
    let stats = ClassStats::at(&ball, class_id, &mu, embeddings)?;
    let log_var = stats
        .tangent_mean
        .iter()
        .zip(&stats.tangent_second_moment)
        .map(|(m, s)| ((s - m * m).max(0.0) + 1e-6).ln())
        .collect();
    ClassDistribution::new(class_id, BallPoint::from_guarded(mu, curvature), log_var)
}

/// Runs the gradient flow from the moment estimate. `params` carries the
/// network weights in whatever scalar type gradients are needed for.
pub fn estimate_distribution<T: Real>(
    net: &FlowNetwork,
    params: &[T],
    class_id: u32,
    embeddings: &[Vec<f64>],
    curvature: Curvature,
    solver: &OdeSolverConfig,
) -> Result<ClassDistribution<T>, DistributionError> {
    let init = moment_estimate(class_id, embeddings, curvature)?;
    if init.dim() != net.dim {
        return Err(DistributionError::DimensionMismatch {
            expected: net.dim,
            found: init.dim(),
        });
    }
    let theta0: Vec<T> = lift(&init.flatten());
    let ball = PoincareBall::<T>::new(curvature);
    let d = net.dim;
    let field = |theta: &[T]| {
        let mu = project_mean(&ball, &theta[..d]);
        let stats = ClassStats::at(&ball, class_id, &mu, embeddings)?;
        net.velocity(params, theta, &stats)
    };
    let theta = integrate(field, &theta0, solver)?;
    ClassDistribution::from_flat(class_id, &theta, curvature)
}

/// Labeled embeddings grouped by class.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingSplit {
    pub classes: BTreeMap<u32, Vec<Vec<f64>>>,
}

impl EmbeddingSplit {
    pub fn total(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn push(&mut self, class_id: u32, embedding: Vec<f64>) {
        self.classes.entry(class_id).or_default().push(embedding);
    }
}

/// Estimates every class in `split` with an `f64` network. Classes whose
/// flow fails are returned alongside the error.
pub fn estimate_all(
    net: &FlowNetwork,
    split: &EmbeddingSplit,
    curvature: Curvature,
    solver: &OdeSolverConfig,
) -> (BTreeMap<u32, ClassDistribution<f64>>, Vec<(u32, DistributionError)>) {
    let mut out = BTreeMap::new();
    let mut failed = Vec::new();
    for (&c, embs) in &split.classes {
        match estimate_distribution(net, &net.params, c, embs, curvature, solver) {
            Ok(d) => {
                out.insert(c, d);
            }
            Err(e) => failed.push((c, e)),
        }
    }
    (out, failed)
}

/// Versioned JSON document holding distributions and the flow network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionCheckpoint {
    pub version: u32,
    pub distributions: Vec<ClassDistribution<f64>>,
    pub network: FlowNetwork,
}

impl DistributionCheckpoint {
    pub fn new(distributions: Vec<ClassDistribution<f64>>, network: FlowNetwork) -> Self {
        DistributionCheckpoint {
            version: CHECKPOINT_VERSION,
            distributions,
            network,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, DistributionError> {
        let ck: DistributionCheckpoint =
            serde_json::from_str(s).map_err(|e| DistributionError::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(DistributionError::Checkpoint(format!(
                "unsupported version {}",
                ck.version
            )));
        }
        let expected = FlowNetwork::param_count(ck.network.dim, ck.network.hidden);
        if ck.network.params.len() != expected {
            return Err(DistributionError::Checkpoint(format!(
                "network has {} parameters, shape needs {expected}",
                ck.network.params.len()
            )));
        }
        for d in &ck.distributions {
            d.mean.ball().check_inside(d.mean.coords())?;
        }
        Ok(ck)
    }
}
