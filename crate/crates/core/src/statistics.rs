// SPDX-License-Identifier: Apache-2.0

//! Test statistics and the exact posterior evaluators used by the benchmarks.
//!
//! Every statistic here rejects `H0: theta = theta0` for *small* values. A
//! statistic with the opposite orientation can be wrapped in [`Negated`].

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in parameter space.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterPoint(Vec<f64>);

impl ParameterPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("parameter point has no coordinates"));
        }
        if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("non-finite parameter coordinate {c}")));
        }
        Ok(Self(coords))
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![value])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Debug for ParameterPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "θ{:?}", self.0)
    }
}

/// A single observed data vector.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("observation has no values"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite observation value {v}")));
        }
        Ok(Self(values))
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![value])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Debug for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{:?}", self.0)
    }
}

/// A test statistic `λ(x; θ)`, typically a posterior density.
///
/// Implementations must be deterministic. The raw [`eval`](Self::eval) may
/// assume correctly sized slices; use [`evaluate_statistic`] for checked
/// evaluation.
pub trait TestStatistic: Send + Sync {
    fn name(&self) -> &str;
    fn theta_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn eval(&self, x: &[f64], theta: &[f64]) -> f64;
}

impl<S: TestStatistic + ?Sized> TestStatistic for &S {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn theta_dim(&self) -> usize {
        (**self).theta_dim()
    }
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }
    fn eval(&self, x: &[f64], theta: &[f64]) -> f64 {
        (**self).eval(x, theta)
    }
}

/// Checked evaluation of `λ(x; θ)`.
pub fn evaluate_statistic(
    stat: &dyn TestStatistic,
    x: &Observation,
    theta: &ParameterPoint,
) -> Result<f64> {
    evaluate_raw(stat, x.values(), theta.coords())
}

pub(crate) fn evaluate_raw(stat: &dyn TestStatistic, x: &[f64], theta: &[f64]) -> Result<f64> {
    if x.len() != stat.obs_dim() {
        return Err(Error::invalid(format!(
            "{}: observation has dimension {}, expected {}",
            stat.name(),
            x.len(),
            stat.obs_dim()
        )));
    }
    if theta.len() != stat.theta_dim() {
        return Err(Error::invalid(format!(
            "{}: parameter has dimension {}, expected {}",
            stat.name(),
            theta.len(),
            stat.theta_dim()
        )));
    }
    let value = stat.eval(x, theta);
    if !value.is_finite() {
        return Err(Error::Evaluation {
            x: x.to_vec(),
            theta: theta.to_vec(),
            reason: format!("{} returned {value}", stat.name()),
        });
    }
    Ok(value)
}

/// Flips the orientation of a statistic that rejects for large values.
#[derive(Debug, Clone)]
pub struct Negated<S> {
    inner: S,
    name: String,
}

impl<S: TestStatistic> Negated<S> {
    pub fn new(inner: S) -> Self {
        let name = format!("-{}", inner.name());
        Self { inner, name }
    }
}

impl<S: TestStatistic> TestStatistic for Negated<S> {
    fn name(&self) -> &str {
        &self.name
    }
    fn theta_dim(&self) -> usize {
        self.inner.theta_dim()
    }
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }
    fn eval(&self, x: &[f64], theta: &[f64]) -> f64 {
        -self.inner.eval(x, theta)
    }
}

fn check_variance(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be a positive finite number, got {v}")))
    }
}

fn log_isotropic_normal(point: &[f64], mean: &[f64], variance: f64) -> f64 {
    let sq: f64 = point.iter().zip(mean).map(|(p, m)| (p - m) * (p - m)).sum();
    -0.5 * point.len() as f64 * (2.0 * PI * variance).ln() - 0.5 * sq / variance
}

/// Exact posterior of `θ ~ N(μ0, τ² I)`, `X | θ ~ N(θ, σ² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianConjugatePosterior {
    prior_mean: Vec<f64>,
    prior_variance: f64,
    noise_variance: f64,
}

impl GaussianConjugatePosterior {
    pub fn new(prior_mean: Vec<f64>, prior_variance: f64, noise_variance: f64) -> Result<Self> {
        check_variance("prior_variance", prior_variance)?;
        check_variance("noise_variance", noise_variance)?;
        if prior_mean.is_empty() || prior_mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("prior mean must be a non-empty finite vector"));
        }
        Ok(Self {
            prior_mean,
            prior_variance,
            noise_variance,
        })
    }

    pub fn prior_mean(&self) -> &[f64] {
        &self.prior_mean
    }

    pub fn prior_variance(&self) -> f64 {
        self.prior_variance
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Weight placed on the observation in the posterior mean.
    pub fn shrinkage(&self) -> f64 {
        self.prior_variance / (self.prior_variance + self.noise_variance)
    }

    pub fn posterior_variance(&self) -> f64 {
        self.prior_variance * self.noise_variance / (self.prior_variance + self.noise_variance)
    }

    pub fn posterior_mean(&self, x: &[f64]) -> Vec<f64> {
        let total = self.prior_variance + self.noise_variance;
        x.iter()
            .zip(&self.prior_mean)
            .map(|(xi, m)| (xi * self.prior_variance + m * self.noise_variance) / total)
            .collect()
    }

    pub fn log_density(&self, x: &[f64], theta: &[f64]) -> f64 {
        log_isotropic_normal(theta, &self.posterior_mean(x), self.posterior_variance())
    }
}

/// Posterior of the 1D conjugate Gaussian model.
pub fn conjugate_posterior_1d(
    prior_mean: f64,
    prior_variance: f64,
    noise_variance: f64,
) -> Result<GaussianConjugatePosterior> {
    GaussianConjugatePosterior::new(vec![prior_mean], prior_variance, noise_variance)
}

impl TestStatistic for GaussianConjugatePosterior {
    fn name(&self) -> &str {
        "gaussian-conjugate-posterior"
    }
    fn theta_dim(&self) -> usize {
        self.prior_mean.len()
    }
    fn obs_dim(&self) -> usize {
        self.prior_mean.len()
    }
    fn eval(&self, x: &[f64], theta: &[f64]) -> f64 {
        self.log_density(x, theta).exp()
    }
}

/// Exact posterior of `θ ~ N(0, τ² I₂)` with the two-component likelihood
/// `X | θ ~ w N(θ, σ₁² I) + (1 - w) N(θ, σ₂² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixturePosterior2D {
    prior_variance: f64,
    component_variances: [f64; 2],
    mixture_weight: f64,
}

/// One Gaussian component of the mixture posterior at a fixed observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    pub variance: f64,
}

impl GaussianMixturePosterior2D {
    pub fn new(prior_variance: f64, component_variances: [f64; 2], mixture_weight: f64) -> Result<Self> {
        check_variance("prior_variance", prior_variance)?;
        check_variance("component variance 1", component_variances[0])?;
        check_variance("component variance 2", component_variances[1])?;
        if !(mixture_weight > 0.0 && mixture_weight < 1.0) {
            return Err(Error::invalid(format!(
                "mixture weight must lie in (0, 1), got {mixture_weight}"
            )));
        }
        Ok(Self {
            prior_variance,
            component_variances,
            mixture_weight,
        })
    }

    pub fn prior_variance(&self) -> f64 {
        self.prior_variance
    }

    pub fn component_variances(&self) -> [f64; 2] {
        self.component_variances
    }

    pub fn mixture_weight(&self) -> f64 {
        self.mixture_weight
    }

    pub fn shrinkage(&self, component: usize) -> f64 {
        let s2 = self.component_variances[component];
        self.prior_variance / (self.prior_variance + s2)
    }

    pub fn components(&self, x: &[f64]) -> [PosteriorComponent; 2] {
        let tau2 = self.prior_variance;
        let weights = [self.mixture_weight, 1.0 - self.mixture_weight];
        let origin = [0.0; 2];
        let log_w: [f64; 2] = std::array::from_fn(|k| {
            weights[k].ln() + log_isotropic_normal(x, &origin, tau2 + self.component_variances[k])
        });
        let top = log_w[0].max(log_w[1]);
        let unnorm = [(log_w[0] - top).exp(), (log_w[1] - top).exp()];
        let total = unnorm[0] + unnorm[1];
        std::array::from_fn(|k| {
            let s2 = self.component_variances[k];
            let shrink = tau2 / (tau2 + s2);
            PosteriorComponent {
                weight: unnorm[k] / total,
                mean: [shrink * x[0], shrink * x[1]],
                variance: tau2 * s2 / (tau2 + s2),
            }
        })
    }
}

/// Posterior of the 2D Gaussian-mixture model.
pub fn mixture_posterior_2d(
    prior_variance: f64,
    component_variances: [f64; 2],
    mixture_weight: f64,
) -> Result<GaussianMixturePosterior2D> {
    GaussianMixturePosterior2D::new(prior_variance, component_variances, mixture_weight)
}

impl TestStatistic for GaussianMixturePosterior2D {
    fn name(&self) -> &str {
        "gaussian-mixture-posterior-2d"
    }
    fn theta_dim(&self) -> usize {
        2
    }
    fn obs_dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], theta: &[f64]) -> f64 {
        self.components(x)
            .iter()
            .map(|c| c.weight * log_isotropic_normal(theta, &c.mean, c.variance).exp())
            .sum()
    }
}

/// Pre-computed statistic values, keyed by observation id and exact
/// parameter coordinates.
///
/// Observations are the one-element vector `[x_id]`. Lookups that miss the
/// table evaluate to NaN, which [`evaluate_statistic`] reports as an
/// evaluation error.
#[derive(Debug, Clone, Default)]
pub struct TabulatedStatistic {
    theta_dim: usize,
    values: HashMap<(u64, Vec<u64>), f64>,
}

fn theta_key(theta: &[f64]) -> Vec<u64> {
    // -0.0 and 0.0 must land on the same key
    theta.iter().map(|t| (t + 0.0).to_bits()).collect()
}

impl TabulatedStatistic {
    pub fn new(theta_dim: usize) -> Self {
        Self {
            theta_dim,
            values: HashMap::new(),
        }
    }

    pub fn insert(&mut self, x_id: u64, theta: &[f64], lambda: f64) -> Result<()> {
        if theta.len() != self.theta_dim {
            return Err(Error::invalid(format!(
                "table row has {} parameter coordinates, expected {}",
                theta.len(),
                self.theta_dim
            )));
        }
        if !lambda.is_finite() {
            return Err(Error::invalid(format!("table row for x_id {x_id} has non-finite lambda")));
        }
        self.values.insert((x_id, theta_key(theta)), lambda);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Distinct observation ids, ascending.
    pub fn observation_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.values.keys().map(|(id, _)| *id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

impl TestStatistic for TabulatedStatistic {
    fn name(&self) -> &str {
        "tabulated"
    }
    fn theta_dim(&self) -> usize {
        self.theta_dim
    }
    fn obs_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], theta: &[f64]) -> f64 {
        if x[0] < 0.0 || x[0].fract() != 0.0 {
            return f64::NAN;
        }
        self.values
            .get(&(x[0] as u64, theta_key(theta)))
            .copied()
            .unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn obs(v: f64) -> Observation {
        Observation::scalar(v).unwrap()
    }

    fn par(v: f64) -> ParameterPoint {
        ParameterPoint::scalar(v).unwrap()
    }

    #[test]
    fn conjugate_density_matches_closed_form() {
        let post = conjugate_posterior_1d(0.0, 1.0, 1.0).unwrap();
        let inv_sqrt_pi = 1.0 / PI.sqrt();
        // posterior N(1, 0.5) evaluated at its mean
        assert_relative_eq!(evaluate_statistic(&post, &obs(2.0), &par(1.0)).unwrap(), inv_sqrt_pi, max_relative = 1e-12);
        assert_relative_eq!(evaluate_statistic(&post, &obs(0.0), &par(0.0)).unwrap(), inv_sqrt_pi, max_relative = 1e-12);
        let left = evaluate_statistic(&post, &obs(2.0), &par(0.0)).unwrap();
        let right = evaluate_statistic(&post, &obs(2.0), &par(2.0)).unwrap();
        assert_eq!(left, right);
        assert_relative_eq!(evaluate_statistic(&post, &obs(2.0), &par(1.0)).unwrap(), 0.564190, epsilon = 1e-6);
    }

    #[test]
    fn conjugate_parameters() {
        let post = conjugate_posterior_1d(0.0, 1.0, 1.0).unwrap();
        assert_eq!(post.posterior_mean(&[2.0]), vec![1.0]);
        assert_eq!(post.posterior_variance(), 0.5);
        assert_eq!(post.posterior_mean(&[0.0]), vec![0.0]);

        let flat = conjugate_posterior_1d(0.0, 1e12, 1.0).unwrap();
        assert_relative_eq!(flat.posterior_mean(&[3.0])[0], 3.0, epsilon = 1e-9);
        assert_relative_eq!(flat.posterior_variance(), 1.0, epsilon = 1e-9);

        let shifted = conjugate_posterior_1d(2.0, 3.0, 1.0).unwrap();
        // (x τ² + μ σ²) / (τ² + σ²)
        assert_relative_eq!(shifted.posterior_mean(&[1.0])[0], (3.0 + 2.0) / 4.0);
        assert_relative_eq!(shifted.posterior_variance(), 0.75);
    }

    #[test]
    fn rejects_bad_variances_and_dimensions() {
        assert!(matches!(conjugate_posterior_1d(0.0, 0.0, 1.0), Err(Error::InvalidInput(_))));
        assert!(matches!(conjugate_posterior_1d(0.0, 1.0, -1.0), Err(Error::InvalidInput(_))));
        assert!(mixture_posterior_2d(2.0, [1.0, 0.0], 0.5).is_err());
        assert!(mixture_posterior_2d(2.0, [1.0, 0.01], 1.0).is_err());

        let post = conjugate_posterior_1d(0.0, 1.0, 1.0).unwrap();
        let x2 = Observation::new(vec![1.0, 2.0]).unwrap();
        assert!(matches!(evaluate_statistic(&post, &x2, &par(0.0)), Err(Error::InvalidInput(_))));
        assert!(ParameterPoint::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn mode_of_conjugate_posterior() {
        let post = conjugate_posterior_1d(0.0, 2.5, 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x: f64 = rng.random_range(-10.0..10.0);
            let mode = x * 2.5 / (2.5 + 0.7);
            assert_relative_eq!(post.posterior_mean(&[x])[0], mode, max_relative = 1e-12);
            let at_mode = post.eval(&[x], &[mode]);
            assert!(at_mode >= post.eval(&[x], &[mode + 1e-3]));
            assert!(at_mode >= post.eval(&[x], &[mode - 1e-3]));
        }
    }

    #[test]
    fn evaluation_is_pure() {
        let post = mixture_posterior_2d(2.0, [1.0, 0.01], 0.5).unwrap();
        let a = post.eval(&[0.3, -1.2], &[0.1, -0.9]);
        let b = post.eval(&[0.3, -1.2], &[0.1, -0.9]);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn mixture_components_at_origin() {
        let post = mixture_posterior_2d(2.0, [1.0, 0.01], 0.5).unwrap();
        let comps = post.components(&[0.0, 0.0]);
        assert_eq!(comps[0].mean, [0.0, 0.0]);
        assert_eq!(comps[1].mean, [0.0, 0.0]);
        assert_relative_eq!(post.shrinkage(0), 2.0 / 3.0);
        assert_relative_eq!(post.shrinkage(1), 200.0 / 201.0);
        assert_relative_eq!(post.shrinkage(1), 0.99502, epsilon = 1e-5);
    }

    #[test]
    fn identical_components_collapse_to_single_gaussian() {
        let mix = mixture_posterior_2d(2.0, [1.0, 1.0], 0.5).unwrap();
        let single = GaussianConjugatePosterior::new(vec![0.0, 0.0], 2.0, 1.0).unwrap();
        for (x, th) in [([0.5, -1.0], [0.2, 0.3]), ([3.0, 3.0], [2.0, 2.1])] {
            assert_relative_eq!(mix.eval(&x, &th), single.eval(&x, &th), max_relative = 1e-12);
        }
        assert_relative_eq!(single.posterior_variance(), 2.0 / 3.0);
    }

    #[test]
    fn broad_component_dominates_far_from_origin() {
        let post = mixture_posterior_2d(2.0, [1.0, 0.01], 0.5).unwrap();
        let comps = post.components(&[8.5, -8.5]);
        // marginal weights: N(x; 0, 3I) vs N(x; 0, 2.01I) at |x|² = 144.5
        let log_broad = -(2.0 * PI * 3.0).ln() - 144.5 / 6.0;
        let log_narrow = -(2.0 * PI * 2.01).ln() - 144.5 / 4.02;
        let narrow = 1.0 / (1.0 + (log_broad - log_narrow).exp());
        assert_relative_eq!(comps[1].weight, narrow, max_relative = 1e-9);
        assert!(comps[0].weight > 0.9999);
        assert!(comps[1].weight < 1e-4);
    }

    #[test]
    fn mixture_is_exchangeable_under_component_swap() {
        let a = mixture_posterior_2d(2.0, [1.0, 0.01], 0.3).unwrap();
        let b = mixture_posterior_2d(2.0, [0.01, 1.0], 0.7).unwrap();
        for (x, th) in [([0.5, -1.0], [0.2, 0.3]), ([1.5, 0.0], [1.4, 0.05])] {
            assert_relative_eq!(a.eval(&x, &th), b.eval(&x, &th), max_relative = 1e-12);
        }
    }

    #[test]
    fn densities_integrate_to_one_on_wide_grids() {
        let post = conjugate_posterior_1d(0.0, 1.0, 1.0).unwrap();
        let h = 0.01;
        let total: f64 = (0..=2000).map(|i| post.eval(&[2.0], &[-10.0 + i as f64 * h]) * h).sum();
        assert!((total - 1.0).abs() < 1e-3, "{total}");

        let mix = mixture_posterior_2d(2.0, [1.0, 0.01], 0.5).unwrap();
        // fine enough spacing to resolve the narrow component (sd ≈ 0.1)
        let h = 0.02;
        let n = 1001;
        for x in [[0.0, 0.0], [1.0, -2.0], [8.5, -8.5]] {
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let th = [-10.0 + i as f64 * h, -10.0 + j as f64 * h];
                    total += mix.eval(&x, &th) * h * h;
                }
            }
            assert!((total - 1.0).abs() < 1e-3, "x={x:?} total={total}");
        }
    }

    #[test]
    fn tabulated_lookup_and_miss() {
        let mut table = TabulatedStatistic::new(1);
        table.insert(3, &[0.5], 0.25).unwrap();
        table.insert(3, &[-0.0], 0.75).unwrap();
        assert_eq!(table.eval(&[3.0], &[0.5]), 0.25);
        assert_eq!(table.eval(&[3.0], &[0.0]), 0.75);
        let miss = evaluate_statistic(&table, &obs(4.0), &par(0.5));
        assert!(matches!(miss, Err(Error::Evaluation { .. })));
        assert_eq!(table.observation_ids(), vec![3]);
    }

    #[test]
    fn negation_flips_sign() {
        let post = conjugate_posterior_1d(0.0, 1.0, 1.0).unwrap();
        let neg = Negated::new(post.clone());
        assert_eq!(neg.eval(&[1.0], &[0.3]), -post.eval(&[1.0], &[0.3]));
        assert_eq!(neg.name(), "-gaussian-conjugate-posterior");
    }
}
