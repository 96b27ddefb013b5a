use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{estimate_distribution, ClassDistribution, DistributionError, EmbeddingSplit, FlowNetwork, OdeSolverConfig};
use crate::autodiff::{gradient, Tape, Var};
use crate::geometry::{mlr_logits, Curvature, MlrHyperplane, PoincareBall};
use crate::scalar::{focal_term, lift, log_softmax, norm_sq, Real};

/// How the outer gradient passes through the solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OuterGradient {
    /// Reverse-mode differentiation of the unrolled solver.
    Backprop,
    /// Simultaneous-perturbation finite differences with step `perturbation`.
    Spsa { perturbation: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaConfig {
    pub learning_rate: f64,
    pub gradient: OuterGradient,
    /// Global gradient-norm clip.
    pub clip: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            learning_rate: 0.01,
            gradient: OuterGradient::Backprop,
            clip: 1.0,
        }
    }
}

/// Validation objective evaluated on distributions fitted to the train split.
pub trait MetaObjective {
    /// `seed` fixes any sampling so repeated calls see the same noise.
    fn loss<T: Real>(
        &self,
        distributions: &BTreeMap<u32, ClassDistribution<T>>,
        val: &EmbeddingSplit,
        seed: u64,
    ) -> Result<T, DistributionError>;
}

/// Mean per-class negative log-likelihood of the validation embeddings under
/// the fitted wrapped normals.
#[derive(Debug, Clone, Copy, Default)]
pub struct ValidationNll;

/// Validation NLL plus a focal classification term on reparameterised
/// synthetic samples, scored by a fixed hyperbolic MLR head whose rows are
/// indexed by class id.
#[derive(Debug, Clone)]
pub struct AugmentedFocal {
    pub classifier: Vec<MlrHyperplane<f64>>,
    pub samples_per_class: usize,
    pub gamma: f64,
    pub weight: f64,
}

/// Wrapped-normal NLL of `y` up to an additive constant.
pub fn wrapped_normal_nll<T: Real>(dist: &ClassDistribution<T>, y: &[T]) -> Result<T, DistributionError> {
    let v = dist.tangent_at_mean(y)?;
    let half = T::lit(0.5);
    let mut nll = T::zero();
    for (vi, &lv) in v.iter().zip(&dist.log_diag_cov) {
        nll = nll + half * (*vi * *vi * (-lv).exp() + lv);
    }
    // Volume change of the exponential map at geodesic distance r = 2‖v‖.
    let d = v.len();
    if d > 1 {
        let sc = T::lit(dist.curvature().c().sqrt());
        let r = T::lit(2.0) * norm_sq(&v).sqrt();
        let s = sc * r;
        if s.value() > 1e-6 {
            nll = nll + T::lit((d - 1) as f64) * (s.sinh() / s).ln();
        }
    }
    Ok(nll)
}

impl MetaObjective for ValidationNll {
    fn loss<T: Real>(
        &self,
        distributions: &BTreeMap<u32, ClassDistribution<T>>,
        val: &EmbeddingSplit,
        _seed: u64,
    ) -> Result<T, DistributionError> {
        let mut total = T::zero();
        let mut classes = 0usize;
        for (c, embs) in &val.classes {
            let Some(dist) = distributions.get(c) else {
                continue;
            };
            if embs.is_empty() {
                continue;
            }
            let mut sum = T::zero();
            for y in embs {
                sum = sum + wrapped_normal_nll(dist, &lift::<T>(y))?;
            }
            total = total + sum / T::lit(embs.len() as f64);
            classes += 1;
        }
        if classes == 0 {
            return Err(DistributionError::EmptySplit("validation"));
        }
        Ok(total / T::lit(classes as f64))
    }
}

impl MetaObjective for AugmentedFocal {
    fn loss<T: Real>(
        &self,
        distributions: &BTreeMap<u32, ClassDistribution<T>>,
        val: &EmbeddingSplit,
        seed: u64,
    ) -> Result<T, DistributionError> {
        let base = ValidationNll.loss(distributions, val, seed)?;
        if self.weight == 0.0 || self.samples_per_class == 0 {
            return Ok(base);
        }
        let planes: Vec<MlrHyperplane<T>> = self
            .classifier
            .iter()
            .map(|h| MlrHyperplane::new(lift(&h.offset), lift(&h.normal)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut focal = T::zero();
        let mut n = 0usize;
        for (&c, dist) in distributions {
            let idx = c as usize;
            if idx >= planes.len() {
                return Err(DistributionError::DimensionMismatch {
                    expected: planes.len(),
                    found: idx + 1,
                });
            }
            let ball = PoincareBall::<T>::new(dist.curvature());
            for _ in 0..self.samples_per_class {
                let noise: Vec<f64> = (0..dist.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
                let z = dist.sample_from_noise(&noise);
                let logits = mlr_logits(&ball, &z, &planes)?;
                focal = focal + focal_term(log_softmax(&logits)[idx], self.gamma);
                n += 1;
            }
        }
        Ok(base + T::lit(self.weight) * focal / T::lit(n.max(1) as f64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaOutcome {
    pub network: FlowNetwork,
    /// Validation loss under the parameters before the update.
    pub val_loss: f64,
    /// Validation classes with no train embeddings; left out of the loss.
    pub skipped_classes: Vec<u32>,
}

fn fit<T: Real>(
    net: &FlowNetwork,
    params: &[T],
    train: &EmbeddingSplit,
    classes: &[u32],
    curvature: Curvature,
    solver: &OdeSolverConfig,
) -> Result<BTreeMap<u32, ClassDistribution<T>>, DistributionError> {
    classes
        .iter()
        .map(|&c| {
            let d = estimate_distribution(net, params, c, &train.classes[&c], curvature, solver)?;
            Ok((c, d))
        })
        .collect()
}

/// One outer step: fit distributions on `train` by integrating the flow,
/// score them on `val`, and move the network parameters down the gradient.
#[allow(clippy::too_many_arguments)]
pub fn meta_update<O: MetaObjective, R: Rng + ?Sized>(
    net: &FlowNetwork,
    train: &EmbeddingSplit,
    val: &EmbeddingSplit,
    curvature: Curvature,
    solver: &OdeSolverConfig,
    objective: &O,
    config: &MetaConfig,
    rng: &mut R,
) -> Result<MetaOutcome, DistributionError> {
    if train.total() == 0 {
        return Err(DistributionError::EmptySplit("training"));
    }
    if val.total() == 0 {
        return Err(DistributionError::EmptySplit("validation"));
    }
    let mut classes = Vec::new();
    let mut skipped_classes = Vec::new();
    for (&c, embs) in &val.classes {
        if embs.is_empty() {
            continue;
        }
        match train.classes.get(&c) {
            Some(t) if !t.is_empty() => classes.push(c),
            _ => skipped_classes.push(c),
        }
    }
    if classes.is_empty() {
        return Err(DistributionError::EmptySplit("shared-class"));
    }
    let seed: u64 = rng.random();

    let (val_loss, mut grad) = match config.gradient {
        OuterGradient::Backprop => {
            Tape::reset();
            let params = Var::params(&net.params);
            let dists = fit(net, &params, train, &classes, curvature, solver)?;
            let loss = objective.loss(&dists, val, seed)?;
            let g = gradient(loss).wrt_all(&params);
            Tape::reset();
            (loss.val(), g)
        }
        OuterGradient::Spsa { perturbation } => {
            let eval = |p: &[f64]| -> Result<f64, DistributionError> {
                let dists = fit(net, p, train, &classes, curvature, solver)?;
                objective.loss(&dists, val, seed)
            };
            let base = eval(&net.params)?;
            let delta: Vec<f64> = (0..net.params.len())
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let shifted = |sign: f64| -> Vec<f64> {
                net.params
                    .iter()
                    .zip(&delta)
                    .map(|(p, d)| p + sign * perturbation * d)
                    .collect()
            };
            let diff = eval(&shifted(1.0))? - eval(&shifted(-1.0))?;
            let g = delta.iter().map(|d| diff / (2.0 * perturbation * d)).collect();
            (base, g)
        }
    };
    if !val_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(DistributionError::NonFinite);
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > config.clip {
        let s = config.clip / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    let mut network = net.clone();
    for (p, g) in network.params.iter_mut().zip(&grad) {
        *p -= config.learning_rate * g;
    }
    Ok(MetaOutcome {
        network,
        val_loss,
        skipped_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::wrapped_normal_sample;
    use crate::geometry::BallPoint;

    fn splits(seed: u64) -> (EmbeddingSplit, EmbeddingSplit) {
        let k = Curvature::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[0.5, 0.0], [-0.25, 0.43], [-0.25, -0.43]];
        let (mut train, mut val) = (EmbeddingSplit::default(), EmbeddingSplit::default());
        for (c, mu) in centers.iter().enumerate() {
            let d = ClassDistribution::new(
                c as u32,
                BallPoint::new(mu.to_vec(), k).unwrap(),
                vec![(0.02f64).ln(); 2],
            )
            .unwrap();
            for (i, s) in wrapped_normal_sample(&d, 24, &mut rng).unwrap().into_iter().enumerate() {
                if i % 3 == 0 {
                    val.push(c as u32, s.into_coords());
                } else {
                    train.push(c as u32, s.into_coords());
                }
            }
        }
        (train, val)
    }

    #[test]
    fn nll_matches_gaussian_at_the_mean_direction() {
        let k = Curvature::default();
        let d = ClassDistribution::new(0, BallPoint::origin(1, k), vec![0.0]).unwrap();
        // In one dimension there is no volume term: v = log_0(y) = artanh(y).
        let y = 0.3f64;
        let v = y.atanh();
        let nll = wrapped_normal_nll(&d, &[y]).unwrap();
        assert!((nll - 0.5 * v * v).abs() < 1e-12);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let (train, val) = splits(0);
        let net = FlowNetwork::zeros(2, 8);
        let k = Curvature::default();
        let cfg = MetaConfig::default();
        let solver = OdeSolverConfig::fixed_euler();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = EmbeddingSplit::default();
        assert!(matches!(
            meta_update(&net, &train, &empty, k, &solver, &ValidationNll, &cfg, &mut rng),
            Err(DistributionError::EmptySplit("validation"))
        ));
        assert!(matches!(
            meta_update(&net, &empty, &val, k, &solver, &ValidationNll, &cfg, &mut rng),
            Err(DistributionError::EmptySplit("training"))
        ));
    }

    #[test]
    fn absent_train_class_is_skipped() {
        let (mut train, val) = splits(1);
        train.classes.remove(&2);
        let net = FlowNetwork::init(2, 8, &mut ChaCha8Rng::seed_from_u64(3));
        let out = meta_update(
            &net,
            &train,
            &val,
            Curvature::default(),
            &OdeSolverConfig::fixed_euler(),
            &ValidationNll,
            &MetaConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        assert_eq!(out.skipped_classes, vec![2]);
    }

    #[test]
    fn updates_are_deterministic_and_leave_splits_alone() {
        let (train, val) = splits(2);
        let (t0, v0) = (train.clone(), val.clone());
        let net = FlowNetwork::init(2, 8, &mut ChaCha8Rng::seed_from_u64(5));
        let run = |grad| {
            let cfg = MetaConfig {
                gradient: grad,
                ..MetaConfig::default()
            };
            meta_update(
                &net,
                &train,
                &val,
                Curvature::default(),
                &OdeSolverConfig::adaptive_rk4(),
                &ValidationNll,
                &cfg,
                &mut ChaCha8Rng::seed_from_u64(6),
            )
            .unwrap()
        };
        for g in [OuterGradient::Backprop, OuterGradient::Spsa { perturbation: 1e-3 }] {
            let (a, b) = (run(g), run(g));
            assert_eq!(a, b);
            assert_ne!(a.network, net);
        }
        assert_eq!((train, val), (t0, v0));
    }

    #[test]
    fn backprop_gradient_matches_finite_differences() {
        let (train, val) = splits(3);
        let net = FlowNetwork::init(2, 4, &mut ChaCha8Rng::seed_from_u64(7));
        let k = Curvature::default();
        let solver = OdeSolverConfig::fixed_euler();
        let classes = [0, 1, 2];
        Tape::reset();
        let params = Var::params(&net.params);
        let dists = fit(&net, &params, &train, &classes, k, &solver).unwrap();
        let g = gradient(ValidationNll.loss(&dists, &val, 0).unwrap()).wrt_all(&params);
        Tape::reset();
        let eval = |p: &[f64]| {
            let d = fit(&net, p, &train, &classes, k, &solver).unwrap();
            ValidationNll.loss(&d, &val, 0).unwrap()
        };
        let h = 1e-6;
        for i in (0..net.params.len()).step_by(7) {
            let mut up = net.params.clone();
            let mut dn = net.params.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * fd.abs().max(1e-2), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn augmented_objective_adds_a_focal_term() {
        let (train, val) = splits(4);
        let net = FlowNetwork::zeros(2, 4);
        let k = Curvature::default();
        let dists = fit(&net, &net.params, &train, &[0, 1, 2], k, &OdeSolverConfig::fixed_euler()).unwrap();
        let clf: Vec<MlrHyperplane<f64>> = [[1.0, 0.0], [-0.5, 0.87], [-0.5, -0.87]]
            .iter()
            .map(|a| MlrHyperplane::new(vec![0.0, 0.0], a.to_vec()))
            .collect();
        let obj = AugmentedFocal {
            classifier: clf,
            samples_per_class: 4,
            gamma: 2.0,
            weight: 1.0,
        };
        let base = ValidationNll.loss(&dists, &val, 9).unwrap();
        let aug = obj.loss(&dists, &val, 9).unwrap();
        assert!(aug > base);
        assert_eq!(aug, obj.loss(&dists, &val, 9).unwrap());
    }
}
