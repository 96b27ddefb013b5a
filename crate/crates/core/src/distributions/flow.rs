use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClassStats, DistributionError};
use crate::scalar::{lift, norm_sq, Real};

/// Largest velocity norm the flow field may return.
pub const V_MAX: f64 = 10.0;

pub const DEFAULT_HIDDEN: usize = 32;

/// Two-layer `tanh` network `g_φ(θ, stats) → dθ/dt` for one embedding
/// dimension. Parameters are stored flat: `W1 (hidden × in)`, `b1`,
/// `W2 (out × hidden)`, `b2`, with `in = 4·dim + 1` and `out = 2·dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowNetwork {
    pub dim: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

impl FlowNetwork {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        let n = Self::param_count(dim, hidden);
        FlowNetwork {
            dim,
            hidden,
            params: vec![0.0; n],
        }
    }

    /// Scaled-normal first layer, small second layer.
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(dim, hidden);
        let (n_in, n_out) = (net.input_dim(), net.output_dim());
        let w1 = Normal::new(0.0, (1.0 / n_in as f64).sqrt()).unwrap();
        let w2 = Normal::new(0.0, 0.01).unwrap();
        let (a, b) = (hidden * n_in, hidden * n_in + hidden);
        for p in &mut net.params[..a] {
            *p = w1.sample(rng);
        }
        for p in &mut net.params[b..b + n_out * hidden] {
            *p = w2.sample(rng);
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        4 * self.dim + 1
    }

    pub fn output_dim(&self) -> usize {
        2 * self.dim
    }

    pub fn param_count(dim: usize, hidden: usize) -> usize {
        let (i, o) = (4 * dim + 1, 2 * dim);
        hidden * i + hidden + o * hidden + o
    }

    fn check(&self) -> Result<(), DistributionError> {
        if self.params.len() != Self::param_count(self.dim, self.hidden) {
            return Err(DistributionError::DimensionMismatch {
                expected: Self::param_count(self.dim, self.hidden),
                found: self.params.len(),
            });
        }
        Ok(())
    }

    /// Velocity with externally supplied parameters (e.g. tape variables),
    /// using this network's shape.
    pub fn velocity<T: Real>(
        &self,
        params: &[T],
        theta: &[T],
        stats: &ClassStats<T>,
    ) -> Result<Vec<T>, DistributionError> {
        self.check()?;
        if params.len() != self.params.len() {
            return Err(DistributionError::DimensionMismatch {
                expected: self.params.len(),
                found: params.len(),
            });
        }
        if theta.len() != self.output_dim() || stats.tangent_mean.len() != self.dim {
            return Err(DistributionError::DimensionMismatch {
                expected: self.output_dim(),
                found: theta.len(),
            });
        }
        if stats.count == 0 {
            return Err(DistributionError::EmptyStats(stats.class_id));
        }
        let mut input = Vec::with_capacity(self.input_dim());
        input.extend_from_slice(theta);
        input.push(T::lit((stats.count as f64).ln_1p()));
        input.extend_from_slice(&stats.tangent_mean);
        input.extend_from_slice(&stats.tangent_second_moment);

        let (n_in, n_out, h) = (self.input_dim(), self.output_dim(), self.hidden);
        let (w1, rest) = params.split_at(h * n_in);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(n_out * h);
        let hidden: Vec<T> = (0..h)
            .map(|j| {
                let row = &w1[j * n_in..(j + 1) * n_in];
                row.iter()
                    .zip(&input)
                    .fold(b1[j], |acc, (&w, &x)| acc + w * x)
                    .tanh()
            })
            .collect();
        let mut out: Vec<T> = (0..n_out)
            .map(|k| {
                let row = &w2[k * h..(k + 1) * h];
                row.iter()
                    .zip(&hidden)
                    .fold(b2[k], |acc, (&w, &x)| acc + w * x)
            })
            .collect();
        let n2 = norm_sq(&out);
        if !n2.is_finite() {
            return Err(DistributionError::NonFinite);
        }
        if n2.value() > V_MAX * V_MAX {
            let s = T::lit(V_MAX) / n2.sqrt();
            for o in &mut out {
                *o = *o * s;
            }
        }
        Ok(out)
    }
}

/// `dθ/dt` for flattened distribution parameters `θ = [μ, log σ²]`.
pub fn flow_field<T: Real>(
    theta: &[T],
    stats: &ClassStats<T>,
    net: &FlowNetwork,
) -> Result<Vec<T>, DistributionError> {
    net.velocity(&lift::<T>(&net.params), theta, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stats(dim: usize, count: usize, scale: f64) -> ClassStats<f64> {
        ClassStats {
            class_id: 0,
            count,
            tangent_mean: (0..dim).map(|i| scale * (i as f64 - 1.0)).collect(),
            tangent_second_moment: (0..dim).map(|i| scale * (i as f64 + 0.5)).collect(),
        }
    }

    #[test]
    fn zero_network_is_stationary() {
        let net = FlowNetwork::zeros(3, DEFAULT_HIDDEN);
        let v = flow_field(&[0.1; 6], &stats(3, 10, 1.0), &net).unwrap();
        assert_eq!(v, vec![0.0; 6]);
    }

    #[test]
    fn velocity_is_clipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = FlowNetwork::init(3, DEFAULT_HIDDEN, &mut rng);
        for p in &mut net.params {
            *p *= 1e4;
        }
        let v = flow_field(&[5.0; 6], &stats(3, 1000, 1e3), &net).unwrap();
        let n = norm_sq(&v).sqrt();
        assert!(n <= V_MAX * (1.0 + 1e-12) && n > V_MAX * 0.999, "{n}");
    }

    #[test]
    fn empty_stats_rejected() {
        let net = FlowNetwork::zeros(2, 4);
        assert!(matches!(
            flow_field(&[0.0; 4], &stats(2, 0, 1.0), &net),
            Err(DistributionError::EmptyStats(0))
        ));
    }

    #[test]
    fn finite_difference_jacobian_exists() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = FlowNetwork::init(2, 8, &mut rng);
        let theta = [0.1, -0.2, 0.05, 0.3];
        let s = stats(2, 7, 0.4);
        let base = flow_field(&theta, &s, &net).unwrap();
        // Shrinking the perturbation shrinks the change linearly.
        for i in 0..theta.len() {
            let mut diffs = Vec::new();
            for h in [1e-3, 1e-4, 1e-5] {
                let mut t = theta;
                t[i] += h;
                let out = flow_field(&t, &s, &net).unwrap();
                let d: f64 = out.iter().zip(&base).map(|(a, b)| (a - b).abs()).sum();
                diffs.push(d / h);
            }
            assert!(diffs.iter().all(|d| d.is_finite()));
            assert!((diffs[1] - diffs[2]).abs() <= 1e-3 * diffs[2].max(1e-6) + 1e-9);
        }
    }
}
