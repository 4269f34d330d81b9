// SPDX-License-Identifier: Apache-2.0

//! Synthetic benchmark scenarios with exact posteriors and closed-form
//! coverage oracles.
//!
//! * `gauss1d`: `θ ~ N(0, 1)` for training, `X | θ ~ N(θ, 1)`, calibration
//!   and diagnostics from `U(-10, 10)`, a single target at `θ* = 4`.
//! * `gmm2d`: `θ ~ N(0, 2 I)` for training,
//!   `X | θ ~ ½ N(θ, I) + ½ N(θ, 0.01 I)`, calibration and diagnostics from
//!   `U([-10, 10]²)`, targets at `(8.5, -8.5)`, `(-8.5, -8.5)` and `(0, 0)`.
//!
//! Every split draws from its own ChaCha8 stream: the generator is seeded
//! with the scenario seed and then switched to stream `0` (train), `1`
//! (calibration), `2` (diagnostic) or `3` (target). Splits are therefore
//! disjoint streams and can be generated in any order.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::calibration::{ConditionalCdf, RejectionProbability};
use crate::error::{Error, Result};
use crate::sample::{LabeledSample, SampleSet, SplitRole};
use crate::statistics::{
    GaussianConjugatePosterior, GaussianMixturePosterior2D, Observation, ParameterPoint, TestStatistic,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioName {
    Gauss1d,
    Gmm2d,
}

impl ScenarioName {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Gauss1d => "gauss1d",
            ScenarioName::Gmm2d => "gmm2d",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss1d" => Ok(ScenarioName::Gauss1d),
            "gmm2d" => Ok(ScenarioName::Gmm2d),
            other => Err(Error::invalid(format!("unknown scenario {other:?} (expected gauss1d or gmm2d)"))),
        }
    }
}

/// A distribution over parameters (`π`, `r` or `p_target`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ParameterDistribution {
    /// Isotropic normal.
    Normal { mean: Vec<f64>, variance: f64 },
    /// Product of independent uniforms.
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
}

impl ParameterDistribution {
    pub fn dim(&self) -> usize {
        match self {
            ParameterDistribution::Normal { mean, .. } => mean.len(),
            ParameterDistribution::Uniform { lower, .. } => lower.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ParameterDistribution::Normal { mean, variance } => {
                if mean.is_empty() || mean.iter().any(|m| !m.is_finite()) {
                    return Err(Error::invalid("normal mean must be a non-empty finite vector"));
                }
                if !(variance.is_finite() && *variance > 0.0) {
                    return Err(Error::invalid("normal variance must be positive"));
                }
            }
            ParameterDistribution::Uniform { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::invalid("uniform bounds must be non-empty and equally long"));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && u > l)) {
                    return Err(Error::invalid("uniform bounds must be finite with lower < upper"));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ParameterDistribution::Normal { mean, variance } => {
                let sd = variance.sqrt();
                mean.iter()
                    .map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
            ParameterDistribution::Uniform { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| l + (u - l) * rng.random::<f64>())
                .collect(),
        }
    }

    /// Whether `self` puts positive density wherever `other` has
    /// non-negligible mass. A normal counts as covered by a box holding its
    /// mean ± 6 standard deviations on every axis.
    pub fn dominates(&self, other: &ParameterDistribution) -> bool {
        use ParameterDistribution::*;
        match (self, other) {
            (Normal { .. }, _) => true,
            (Uniform { lower, upper }, Normal { mean, variance }) => {
                let reach = 6.0 * variance.sqrt();
                mean.iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(m, (l, u))| *l <= m - reach && *u >= m + reach)
            }
            (Uniform { lower, upper }, Uniform { lower: ol, upper: ou }) => lower
                .iter()
                .zip(upper)
                .zip(ol.iter().zip(ou))
                .all(|((l, u), (a, b))| l <= a && u >= b),
        }
    }
}

/// The data-generating distribution `p(x | θ)`; observations share θ's
/// dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Likelihood {
    /// `X ~ N(θ, σ² I)`.
    Gaussian { noise_variance: f64 },
    /// `X ~ w N(θ, σ₁² I) + (1 - w) N(θ, σ₂² I)`.
    GaussianMixture { variances: [f64; 2], weight: f64 },
}

impl Likelihood {
    fn validate(&self) -> Result<()> {
        match self {
            Likelihood::Gaussian { noise_variance } if noise_variance.is_finite() && *noise_variance > 0.0 => Ok(()),
            Likelihood::GaussianMixture { variances, weight }
                if variances.iter().all(|v| v.is_finite() && *v > 0.0) && *weight > 0.0 && *weight < 1.0 =>
            {
                Ok(())
            }
            _ => Err(Error::invalid(format!("invalid likelihood {self:?}"))),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R) -> Vec<f64> {
        let variance = match self {
            Likelihood::Gaussian { noise_variance } => *noise_variance,
            Likelihood::GaussianMixture { variances, weight } => {
                if rng.random::<f64>() < *weight {
                    variances[0]
                } else {
                    variances[1]
                }
            }
        };
        let sd = variance.sqrt();
        theta
            .iter()
            .map(|t| t + sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetSpec {
    /// One observation per listed true parameter.
    Fixed { thetas: Vec<Vec<f64>> },
    /// `count` labeled draws from a target label distribution.
    Drawn {
        distribution: ParameterDistribution,
        count: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub calibration: usize,
    pub diagnostic: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: ScenarioName,
    pub prior: ParameterDistribution,
    pub reference: ParameterDistribution,
    pub likelihood: Likelihood,
    pub targets: TargetSpec,
    pub sizes: SplitSizes,
    /// Default oversampling factor for the rejection-probability fit.
    pub oversampling: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn gauss1d(seed: u64) -> Self {
        Scenario {
            name: ScenarioName::Gauss1d,
            prior: ParameterDistribution::Normal {
                mean: vec![0.0],
                variance: 1.0,
            },
            reference: ParameterDistribution::Uniform {
                lower: vec![-10.0],
                upper: vec![10.0],
            },
            likelihood: Likelihood::Gaussian { noise_variance: 1.0 },
            targets: TargetSpec::Fixed {
                thetas: vec![vec![4.0]],
            },
            sizes: SplitSizes {
                train: 100_000,
                calibration: 50_000,
                diagnostic: 50_000,
            },
            oversampling: 10,
            seed,
        }
    }

    pub fn gmm2d(seed: u64) -> Self {
        Scenario {
            name: ScenarioName::Gmm2d,
            prior: ParameterDistribution::Normal {
                mean: vec![0.0, 0.0],
                variance: 2.0,
            },
            reference: ParameterDistribution::Uniform {
                lower: vec![-10.0, -10.0],
                upper: vec![10.0, 10.0],
            },
            likelihood: Likelihood::GaussianMixture {
                variances: [1.0, 0.01],
                weight: 0.5,
            },
            targets: TargetSpec::Fixed {
                thetas: vec![vec![8.5, -8.5], vec![-8.5, -8.5], vec![0.0, 0.0]],
            },
            sizes: SplitSizes {
                train: 50_000,
                calibration: 30_000,
                diagnostic: 20_000,
            },
            oversampling: 10,
            seed,
        }
    }

    pub fn by_name(name: ScenarioName, seed: u64) -> Self {
        match name {
            ScenarioName::Gauss1d => Self::gauss1d(seed),
            ScenarioName::Gmm2d => Self::gmm2d(seed),
        }
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        self.reference.validate()?;
        self.likelihood.validate()?;
        let d = self.dim();
        if self.reference.dim() != d {
            return Err(Error::invalid("prior and reference have different dimensions"));
        }
        if !self.reference.dominates(&self.prior) {
            return Err(Error::invalid("reference distribution does not cover the prior"));
        }
        if let Likelihood::GaussianMixture { .. } = self.likelihood {
            if d != 2 {
                return Err(Error::invalid("the mixture likelihood is two-dimensional"));
            }
        }
        match &self.targets {
            TargetSpec::Fixed { thetas } => {
                if thetas.iter().any(|t| t.len() != d || t.iter().any(|v| !v.is_finite())) {
                    return Err(Error::invalid("target parameters must match the scenario dimension"));
                }
            }
            TargetSpec::Drawn { distribution, count } => {
                distribution.validate()?;
                if distribution.dim() != d || *count == 0 {
                    return Err(Error::invalid("drawn targets need a matching dimension and count ≥ 1"));
                }
            }
        }
        let s = self.sizes;
        if s.train == 0 || s.calibration == 0 || s.diagnostic == 0 {
            return Err(Error::invalid("every split needs at least one row"));
        }
        if self.oversampling == 0 {
            return Err(Error::invalid("oversampling factor must be at least 1"));
        }
        Ok(())
    }

    /// The exact posterior under the scenario's prior and likelihood.
    pub fn posterior(&self) -> Result<Box<dyn TestStatistic>> {
        let ParameterDistribution::Normal { mean, variance } = &self.prior else {
            return Err(Error::invalid("exact posteriors need a normal prior"));
        };
        match &self.likelihood {
            Likelihood::Gaussian { noise_variance } => Ok(Box::new(GaussianConjugatePosterior::new(
                mean.clone(),
                *variance,
                *noise_variance,
            )?)),
            Likelihood::GaussianMixture { variances, weight } => {
                if mean.iter().any(|m| *m != 0.0) {
                    return Err(Error::invalid("the mixture posterior assumes a zero prior mean"));
                }
                Ok(Box::new(GaussianMixturePosterior2D::new(*variance, *variances, *weight)?))
            }
        }
    }

    fn rng(&self, role: SplitRole) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(role.stream());
        rng
    }

    fn draw(&self, role: SplitRole, dist: &ParameterDistribution, n: usize) -> Result<SampleSet> {
        let mut rng = self.rng(role);
        let rows = (0..n)
            .map(|_| {
                let theta = dist.sample(&mut rng);
                let x = self.likelihood.sample(&theta, &mut rng);
                Ok(LabeledSample {
                    theta: ParameterPoint::new(theta)?,
                    x: Observation::new(x)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleSet::new(role, rows)?.with_reference(describe(dist)))
    }

    /// Draws a single split.
    pub fn sample_split(&self, role: SplitRole) -> Result<SampleSet> {
        self.validate()?;
        match role {
            SplitRole::Train => self.draw(role, &self.prior, self.sizes.train),
            SplitRole::Calibration => self.draw(role, &self.reference, self.sizes.calibration),
            SplitRole::Diagnostic => self.draw(role, &self.reference, self.sizes.diagnostic),
            SplitRole::Target => match &self.targets {
                TargetSpec::Drawn { distribution, count } => self.draw(role, distribution, *count),
                TargetSpec::Fixed { thetas } => {
                    let mut rng = self.rng(role);
                    let rows = thetas
                        .iter()
                        .map(|theta| {
                            let x = self.likelihood.sample(theta, &mut rng);
                            Ok(LabeledSample {
                                theta: ParameterPoint::new(theta.clone())?,
                                x: Observation::new(x)?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(SampleSet::new(role, rows)?.with_reference("fixed"))
                }
            },
        }
    }
}

fn describe(dist: &ParameterDistribution) -> String {
    match dist {
        ParameterDistribution::Normal { mean, variance } => format!("normal(mean={mean:?}, variance={variance})"),
        ParameterDistribution::Uniform { lower, upper } => format!("uniform(lower={lower:?}, upper={upper:?})"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSplits {
    pub train: SampleSet,
    pub calibration: SampleSet,
    pub diagnostic: SampleSet,
    pub targets: SampleSet,
}

/// Draws all four splits.
pub fn sample_scenario(scenario: &Scenario) -> Result<ScenarioSplits> {
    Ok(ScenarioSplits {
        train: scenario.sample_split(SplitRole::Train)?,
        calibration: scenario.sample_split(SplitRole::Calibration)?,
        diagnostic: scenario.sample_split(SplitRole::Diagnostic)?,
        targets: scenario.sample_split(SplitRole::Target)?,
    })
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    std_normal().cdf(z)
}

/// Closed-form frequentist behavior of the exact posterior density used as a
/// statistic in the 1D conjugate Gaussian model.
///
/// With shrinkage `s = τ² / (τ² + σ²)`, the posterior mean is
/// `m(X) = s X + (1 - s) μ₀` and `θ - m(X) = a - b Z` under `X ~ N(θ, σ²)`,
/// where `a = (1 - s)(θ - μ₀)` and `b = s σ`. The density is decreasing in
/// `|θ - m(X)|`, so every tail probability reduces to normal CDFs.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussOracle1d {
    posterior: GaussianConjugatePosterior,
}

impl GaussOracle1d {
    pub fn new(posterior: GaussianConjugatePosterior) -> Result<Self> {
        if posterior.prior_mean().len() != 1 {
            return Err(Error::invalid("the closed-form oracle is one-dimensional"));
        }
        Ok(Self { posterior })
    }

    /// Prior `N(0, 1)`, noise variance 1.
    pub fn standard() -> Self {
        Self {
            posterior: GaussianConjugatePosterior::new(vec![0.0], 1.0, 1.0).expect("static parameters"),
        }
    }

    pub fn posterior(&self) -> &GaussianConjugatePosterior {
        &self.posterior
    }

    fn offset_scale(&self, theta: f64) -> (f64, f64) {
        let s = self.posterior.shrinkage();
        let a = (1.0 - s) * (theta - self.posterior.prior_mean()[0]);
        let b = s * self.posterior.noise_variance().sqrt();
        (a, b)
    }

    /// `P(|θ - m(X)| ≥ distance)` under `X ~ p(x | θ)`.
    fn tail(&self, theta: f64, distance: f64) -> f64 {
        if distance <= 0.0 {
            return 1.0;
        }
        if distance.is_infinite() {
            return 0.0;
        }
        let (a, b) = self.offset_scale(theta);
        let n = std_normal();
        (n.cdf(-(a + distance) / b) + n.cdf((a - distance) / b)).clamp(0.0, 1.0)
    }

    /// Exact `F(t; θ) = P(λ(X; θ) ≤ t)`.
    pub fn cdf(&self, theta: f64, t: f64) -> f64 {
        let v = self.posterior.posterior_variance();
        let peak = 1.0 / (2.0 * std::f64::consts::PI * v).sqrt();
        if t >= peak {
            return 1.0;
        }
        if t <= 0.0 {
            return 0.0;
        }
        let distance = (-2.0 * v * (t / peak).ln()).sqrt();
        self.tail(theta, distance)
    }

    /// Exact p-value `h(x; θ₀)`.
    pub fn pvalue(&self, x: f64, theta0: f64) -> f64 {
        let m = self.posterior.posterior_mean(&[x])[0];
        self.tail(theta0, (theta0 - m).abs())
    }

    /// Local coverage of the exact-posterior HPD interval at `θ`.
    pub fn hpd_coverage(&self, theta: f64, credibility: f64) -> f64 {
        let z = normal_quantile(0.5 + credibility / 2.0);
        let half = z * self.posterior.posterior_variance().sqrt();
        let (a, b) = self.offset_scale(theta);
        let n = std_normal();
        n.cdf((a + half) / b) - n.cdf((a - half) / b)
    }
}

struct OracleAt<'a> {
    oracle: &'a GaussOracle1d,
    theta: f64,
}

impl ConditionalCdf for OracleAt<'_> {
    fn cdf(&self, t: f64) -> f64 {
        self.oracle.cdf(self.theta, t)
    }
}

impl RejectionProbability for GaussOracle1d {
    fn theta_dim(&self) -> usize {
        1
    }

    fn at<'a>(&'a self, theta: &[f64]) -> Box<dyn ConditionalCdf + 'a> {
        Box::new(OracleAt {
            oracle: self,
            theta: theta[0],
        })
    }
}

/// `Φ(θ + z√2) - Φ(θ - z√2)`: coverage of the 1D benchmark's exact HPD
/// interval, `z` the `(1 + credibility) / 2` normal quantile.
pub fn analytic_hpd_coverage_1d(theta: f64, credibility: f64) -> f64 {
    let z = normal_quantile(0.5 + credibility / 2.0);
    let r = z * std::f64::consts::SQRT_2;
    normal_cdf(theta + r) - normal_cdf(theta - r)
}

/// `1 - Φ(2d - θ₀) + Φ(-2d - θ₀)` with `d = |θ₀ - x/2|`: the exact p-value of
/// the 1D benchmark posterior.
pub fn oracle_pvalue_1d(x: f64, theta0: f64) -> f64 {
    let d = (theta0 - x / 2.0).abs();
    normal_cdf(-(2.0 * d - theta0)) + normal_cdf(-2.0 * d - theta0)
}
