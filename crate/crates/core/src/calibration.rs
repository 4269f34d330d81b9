// SPDX-License-Identifier: Apache-2.0

//! Amortized rejection probabilities, p-values and critical values.
//!
//! Two estimators are fitted from a labeled calibration set drawn from
//! `r(θ) p(x | θ)`:
//!
//! * [`RejectionProbabilityModel`] estimates `F(t; θ) = P(λ(X; θ) ≤ t | θ)`
//!   for every `t` and `θ` at once. Composing it with the statistic gives
//!   the amortized p-value `h(x; θ) = F(λ(x; θ); θ)`.
//! * [`CriticalValueModel`] estimates the `α`-quantile `t_θ = F⁻¹(α; θ)` for a
//!   single fixed level.
//!
//! The shipped backend for both is a k-nearest-neighbor local empirical
//! distribution: the statistic values of the `k` calibration rows nearest to
//! `θ` (standardized Euclidean distance) are pooled, and the CDF or quantile
//! of that pool is returned. The CDF is a step function in `t`, so
//! monotonicity holds by construction. Ties use `λ ≤ t` throughout.
//!
//! All randomness flows through an explicit `u64` seed feeding
//! [`ChaCha8Rng`].

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::{NeighborIndex, Standardizer};
use crate::sample::{SampleSet, SplitRole};
use crate::statistics::{evaluate_raw, Observation, ParameterPoint, TestStatistic};

/// A model answer together with whether the query left the calibration hull.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    /// The query lies outside the bounding box of the calibration parameters.
    pub extrapolated: bool,
}

/// `(θᵢ, λ(xᵢ; θᵢ))` for one calibration row.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationPair {
    pub theta: ParameterPoint,
    pub lambda: f64,
}

/// One row of the augmented calibration sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedRow {
    /// Index of the originating calibration row.
    pub row: usize,
    pub theta: ParameterPoint,
    pub cutoff: f64,
    /// `λ(xᵢ; θᵢ) ≤ cutoff`.
    pub indicator: bool,
    /// The originating row's own statistic value.
    pub statistic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSet {
    pub rows: Vec<AugmentedRow>,
    pub calibration_size: usize,
    pub oversampling: usize,
    pub seed: u64,
}

impl AugmentedSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// How the neighbor pool at a query point is turned into a distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalFit {
    /// Every neighbor counts equally: the plain empirical CDF of the pool.
    #[default]
    Constant,
    /// Local quadratic regression of the indicators `1{λᵢ ≤ t}` on the
    /// standardized neighbor offsets, with tricube weights on the k-NN
    /// radius. Removes the curvature bias of the plain pool where the
    /// distribution of `λ` bends quickly in `θ`, at some cost in variance.
    /// The resulting step function is made monotone by rearrangement
    /// (sorting its levels) and clamped to `[0, 1]`.
    Quadratic,
}

impl LocalFit {
    pub fn as_str(self) -> &'static str {
        match self {
            LocalFit::Constant => "constant",
            LocalFit::Quadratic => "quadratic",
        }
    }

    /// Number of regression terms in dimension `dim`.
    pub fn terms(self, dim: usize) -> usize {
        match self {
            LocalFit::Constant => 1,
            LocalFit::Quadratic => 1 + dim + dim * (dim + 1) / 2,
        }
    }
}

impl std::str::FromStr for LocalFit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LocalFit::Constant),
            "quadratic" => Ok(LocalFit::Quadratic),
            other => Err(Error::invalid(format!("unknown local fit {other:?} (expected constant or quadratic)"))),
        }
    }
}

/// Neighbor-count policy shared by all k-NN estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KnnConfig {
    /// Fixed neighbor count. `None` selects `max(250, ⌈n^(2/3)⌉)` for the
    /// constant fit and `max(250, ⌈n^(3/4)⌉)` for the quadratic fit.
    pub k: Option<usize>,
    #[serde(default)]
    pub fit: LocalFit,
}

impl KnnConfig {
    pub fn fixed(k: usize) -> Self {
        Self {
            k: Some(k),
            fit: LocalFit::Constant,
        }
    }

    pub fn quadratic() -> Self {
        Self {
            k: None,
            fit: LocalFit::Quadratic,
        }
    }

    pub fn with_fit(mut self, fit: LocalFit) -> Self {
        self.fit = fit;
        self
    }

    fn resolve(&self, n: usize, floor: usize) -> Result<usize> {
        match self.k {
            Some(0) => Err(Error::invalid("neighbor count k must be at least 1")),
            Some(k) if k > n => Err(Error::invalid(format!(
                "neighbor count k = {k} exceeds the {n} available rows"
            ))),
            Some(k) => Ok(k),
            None => Ok(match self.fit {
                LocalFit::Constant => default_neighbors(n, floor),
                LocalFit::Quadratic => ceil_power(n, 3, 4).max(floor).min(n),
            }),
        }
    }
}

/// Smallest `m` with `m^den ≥ n^num`, i.e. `⌈n^(num/den)⌉` without rounding
/// error.
fn ceil_power(n: usize, num: u32, den: u32) -> usize {
    let target = (n as u128).pow(num);
    let mut m = (n as f64).powf(num as f64 / den as f64).ceil() as u128;
    while m > 0 && (m - 1).pow(den) >= target {
        m -= 1;
    }
    while m.pow(den) < target {
        m += 1;
    }
    m as usize
}

/// `min(n, max(floor, ⌈n^(2/3)⌉))`, computed in exact integer arithmetic.
pub fn default_neighbors(n: usize, floor: usize) -> usize {
    ceil_power(n, 2, 3).max(floor).min(n)
}

pub(crate) const CALIBRATION_NEIGHBOR_FLOOR: usize = 250;

/// Evaluates `λ(xᵢ; θᵢ)` on every calibration row, in row order.
pub fn collect_statistics(cal: &SampleSet, stat: &dyn TestStatistic) -> Result<Vec<CalibrationPair>> {
    cal.require_role(SplitRole::Calibration, "collecting calibration statistics")?;
    if cal.is_empty() {
        return Err(Error::invalid("calibration set is empty"));
    }
    cal.rows()
        .par_iter()
        .map(|row| {
            let lambda = evaluate_raw(stat, row.x.values(), row.theta.coords())?;
            Ok(CalibrationPair {
                theta: row.theta.clone(),
                lambda,
            })
        })
        .collect()
}

/// Resamples `oversampling` cutoffs per pair from the pooled statistic values.
pub fn augment_pairs(pairs: &[CalibrationPair], oversampling: usize, seed: u64) -> Result<AugmentedSet> {
    if pairs.is_empty() {
        return Err(Error::invalid("calibration set is empty"));
    }
    if oversampling == 0 {
        return Err(Error::invalid("oversampling factor K must be at least 1"));
    }
    if let Some(p) = pairs.iter().find(|p| !p.lambda.is_finite()) {
        return Err(Error::Evaluation {
            x: Vec::new(),
            theta: p.theta.coords().to_vec(),
            reason: format!("calibration statistic is {}", p.lambda),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(pairs.len() * oversampling);
    for (i, pair) in pairs.iter().enumerate() {
        for _ in 0..oversampling {
            let cutoff = pairs[rng.random_range(0..pairs.len())].lambda;
            rows.push(AugmentedRow {
                row: i,
                theta: pair.theta.clone(),
                cutoff,
                indicator: pair.lambda <= cutoff,
                statistic: pair.lambda,
            });
        }
    }
    Ok(AugmentedSet {
        rows,
        calibration_size: pairs.len(),
        oversampling,
        seed,
    })
}

/// Builds the augmented calibration sample `{(θᵢ, tᵢⱼ, Yᵢⱼ)}`.
pub fn build_augmented_set(
    cal: &SampleSet,
    stat: &dyn TestStatistic,
    oversampling: usize,
    seed: u64,
) -> Result<AugmentedSet> {
    let pairs = collect_statistics(cal, stat)?;
    augment_pairs(&pairs, oversampling, seed)
}

/// `F̂(· ; θ)` frozen at a single parameter value.
pub trait ConditionalCdf: Send + Sync {
    fn cdf(&self, t: f64) -> f64;

    fn extrapolated(&self) -> bool {
        false
    }
}

/// Anything that can answer `F(t; θ)`.
///
/// The k-NN [`RejectionProbabilityModel`] is the shipped implementation;
/// exact oracles used in testing implement it too.
pub trait RejectionProbability: Send + Sync {
    fn theta_dim(&self) -> usize;

    fn at<'a>(&'a self, theta: &[f64]) -> Box<dyn ConditionalCdf + 'a>;

    fn rejection_probability(&self, theta: &[f64], t: f64) -> Estimate {
        let local = self.at(theta);
        Estimate {
            value: local.cdf(t),
            extrapolated: local.extrapolated(),
        }
    }
}

/// Anything that can answer the critical value `t̂_θ` at one fixed level.
pub trait CriticalValues: Send + Sync {
    fn theta_dim(&self) -> usize;
    fn alpha(&self) -> f64;
    fn critical_value(&self, theta: &[f64]) -> Estimate;
}

/// Sorted statistic values pooled from the nearest calibration rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDistribution {
    sorted: Vec<f64>,
    // F̂ just after each sorted value; `None` for equal weights
    levels: Option<Vec<f64>>,
    extrapolated: bool,
}

impl LocalDistribution {
    pub fn new(mut values: Vec<f64>, extrapolated: bool) -> Self {
        values.sort_unstable_by(f64::total_cmp);
        Self {
            sorted: values,
            levels: None,
            extrapolated,
        }
    }

    /// Pool with signed weights summing to one. Cumulative weights are
    /// rearranged into nondecreasing order and clamped to `[0, 1]`.
    pub fn weighted(mut pairs: Vec<(f64, f64)>, extrapolated: bool) -> Self {
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        let mut levels: Vec<f64> = pairs
            .iter()
            .map(|(_, w)| {
                acc += w;
                acc
            })
            .collect();
        levels.sort_unstable_by(f64::total_cmp);
        levels.iter_mut().for_each(|l| *l = l.clamp(0.0, 1.0));
        if let Some(last) = levels.last_mut() {
            *last = 1.0;
        }
        Self {
            sorted: pairs.into_iter().map(|(v, _)| v).collect(),
            levels: Some(levels),
            extrapolated,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn is_extrapolated(&self) -> bool {
        self.extrapolated
    }

    /// Weight of pooled values `≤ t` (the fraction of them, for equal weights).
    pub fn cdf(&self, t: f64) -> f64 {
        let count = self.sorted.partition_point(|v| *v <= t);
        match &self.levels {
            None => count as f64 / self.sorted.len() as f64,
            Some(_) if count == 0 => 0.0,
            Some(levels) => levels[count - 1],
        }
    }

    /// For equal weights, linear interpolation between order statistics at
    /// rank `α (k + 1)`, clamped to `[1, k]`. For weighted pools, the
    /// smallest pooled value whose level reaches `α`.
    pub fn quantile(&self, alpha: f64) -> f64 {
        if let Some(levels) = &self.levels {
            let j = levels.partition_point(|l| *l < alpha).min(levels.len() - 1);
            return self.sorted[j];
        }
        let k = self.sorted.len();
        let pos = (alpha * (k as f64 + 1.0)).clamp(1.0, k as f64);
        let lower = pos.floor() as usize;
        let frac = pos - lower as f64;
        let a = self.sorted[lower - 1];
        if lower >= k || frac == 0.0 {
            a
        } else {
            a + frac * (self.sorted[lower] - a)
        }
    }
}

impl ConditionalCdf for LocalDistribution {
    fn cdf(&self, t: f64) -> f64 {
        LocalDistribution::cdf(self, t)
    }

    fn extrapolated(&self) -> bool {
        self.extrapolated
    }
}

/// Calibration `(θ, λ)` table with its neighbor index.
#[derive(Debug, Clone)]
struct LocalPools {
    theta_dim: usize,
    thetas: Vec<f64>,
    lambdas: Vec<f64>,
    k: usize,
    fit: LocalFit,
    index: NeighborIndex,
}

impl LocalPools {
    fn new(theta_dim: usize, thetas: Vec<f64>, lambdas: Vec<f64>, k: usize, fit: LocalFit) -> Result<Self> {
        if lambdas.is_empty() || thetas.len() != lambdas.len() * theta_dim {
            return Err(Error::invalid("calibration table shape does not match its dimension"));
        }
        if k == 0 || k > lambdas.len() {
            return Err(Error::invalid(format!(
                "neighbor count {k} must lie in [1, {}]",
                lambdas.len()
            )));
        }
        if lambdas.iter().any(|l| !l.is_finite()) {
            return Err(Error::invalid("calibration statistics must be finite"));
        }
        if k <= fit.terms(theta_dim) && fit != LocalFit::Constant {
            return Err(Error::invalid(format!(
                "the {} fit in dimension {theta_dim} needs more than {} neighbors, got {k}",
                fit.as_str(),
                fit.terms(theta_dim)
            )));
        }
        let index = NeighborIndex::build(&thetas, theta_dim)?;
        Ok(Self {
            theta_dim,
            thetas,
            lambdas,
            k,
            fit,
            index,
        })
    }

    fn from_pairs(pairs: &[CalibrationPair], k: usize, fit: LocalFit) -> Result<Self> {
        let theta_dim = pairs
            .first()
            .ok_or_else(|| Error::invalid("no calibration pairs"))?
            .theta
            .dim();
        let mut thetas = Vec::with_capacity(pairs.len() * theta_dim);
        for p in pairs {
            if p.theta.dim() != theta_dim {
                return Err(Error::invalid("calibration pairs have mixed dimensions"));
            }
            thetas.extend_from_slice(p.theta.coords());
        }
        let lambdas = pairs.iter().map(|p| p.lambda).collect();
        Self::new(theta_dim, thetas, lambdas, k, fit)
    }

    fn check_dim(&self, theta: &[f64]) {
        assert_eq!(
            theta.len(),
            self.theta_dim,
            "query has dimension {}, model has {}",
            theta.len(),
            self.theta_dim
        );
    }

    fn local(&self, theta: &[f64]) -> LocalDistribution {
        self.check_dim(theta);
        let near = self.index.nearest(theta, self.k);
        let extrapolated = !self.index.contains(theta);
        match self.fit {
            LocalFit::Constant => {
                LocalDistribution::new(near.into_iter().map(|i| self.lambdas[i]).collect(), extrapolated)
            }
            LocalFit::Quadratic => {
                let weights = self.quadratic_weights(theta, &near);
                LocalDistribution::weighted(
                    near.iter().map(|&i| self.lambdas[i]).zip(weights).collect(),
                    extrapolated,
                )
            }
        }
    }

    /// Equivalent-kernel weights of a tricube-weighted local quadratic fit
    /// evaluated at `theta`. Falls back to normalized tricube weights when
    /// the neighbors do not determine a quadratic surface.
    fn quadratic_weights(&self, theta: &[f64], near: &[usize]) -> Vec<f64> {
        let d = self.theta_dim;
        let mut query = vec![0.0; d];
        self.index.standardizer().apply(theta, &mut query);
        let offsets: Vec<Vec<f64>> = near
            .iter()
            .map(|&i| self.index.scaled_row(i).iter().zip(&query).map(|(a, b)| a - b).collect())
            .collect();
        let radius = offsets
            .iter()
            .map(|o| o.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if radius == 0.0 {
            return vec![1.0 / near.len() as f64; near.len()];
        }
        let h = radius * (1.0 + 1e-9);
        let kernel: Vec<f64> = offsets
            .iter()
            .map(|o| {
                let r = o.iter().map(|v| v * v).sum::<f64>().sqrt() / h;
                (1.0 - r * r * r).powi(3)
            })
            .collect();
        let p = self.fit.terms(d);
        let features = |o: &[f64]| {
            let mut f = Vec::with_capacity(p);
            f.push(1.0);
            f.extend(o.iter().map(|v| v / h));
            for a in 0..d {
                for b in a..d {
                    f.push(o[a] / h * o[b] / h);
                }
            }
            f
        };
        let design: Vec<Vec<f64>> = offsets.iter().map(|o| features(o)).collect();
        let mut gram = DMatrix::<f64>::zeros(p, p);
        for (f, w) in design.iter().zip(&kernel) {
            for r in 0..p {
                for c in 0..p {
                    gram[(r, c)] += w * f[r] * f[c];
                }
            }
        }
        let mut unit = DVector::<f64>::zeros(p);
        unit[0] = 1.0;
        let solved = gram
            .cholesky()
            .map(|c| c.solve(&unit))
            .filter(|g| g.iter().all(|v| v.is_finite()));
        match solved {
            Some(g) => design
                .iter()
                .zip(&kernel)
                .map(|(f, w)| w * f.iter().zip(g.iter()).map(|(a, b)| a * b).sum::<f64>())
                .collect(),
            None => {
                let total: f64 = kernel.iter().sum();
                kernel.iter().map(|w| w / total).collect()
            }
        }
    }

    fn cdf(&self, theta: &[f64], t: f64) -> Estimate {
        if self.fit != LocalFit::Constant {
            let local = self.local(theta);
            return Estimate {
                value: local.cdf(t),
                extrapolated: local.is_extrapolated(),
            };
        }
        self.check_dim(theta);
        let below = self
            .index
            .nearest(theta, self.k)
            .into_iter()
            .filter(|&i| self.lambdas[i] <= t)
            .count();
        Estimate {
            value: below as f64 / self.k as f64,
            extrapolated: !self.index.contains(theta),
        }
    }

    fn distinct_values(&self) -> usize {
        let mut v = self.lambdas.clone();
        v.sort_unstable_by(f64::total_cmp);
        v.dedup();
        v.len()
    }

    fn table(&self) -> CalibrationTable {
        CalibrationTable {
            thetas: self.thetas.chunks_exact(self.theta_dim).map(<[f64]>::to_vec).collect(),
            lambdas: self.lambdas.clone(),
        }
    }

    fn from_table(table: CalibrationTable, theta_dim: usize, k: usize, fit: LocalFit) -> Result<Self> {
        if table.thetas.len() != table.lambdas.len() {
            return Err(Error::invalid("artifact calibration table is ragged"));
        }
        let mut thetas = Vec::with_capacity(table.lambdas.len() * theta_dim);
        for t in &table.thetas {
            if t.len() != theta_dim {
                return Err(Error::invalid("artifact calibration row has the wrong dimension"));
            }
            thetas.extend_from_slice(t);
        }
        Self::new(theta_dim, thetas, table.lambdas, k, fit)
    }
}

/// Estimated rejection probability `F̂(t; θ)`.
#[derive(Debug, Clone)]
pub struct RejectionProbabilityModel {
    pools: LocalPools,
    calibration_size: usize,
    oversampling: usize,
    augmented_rows: usize,
    seed: u64,
    metadata: BTreeMap<String, String>,
}

/// Fits the k-NN rejection-probability estimator to an augmented sample.
///
/// The indicator rows determine each calibration row's own statistic value;
/// the estimator pools those values per neighborhood.
pub fn fit_rejection_model(augmented: &AugmentedSet, config: &KnnConfig) -> Result<RejectionProbabilityModel> {
    let n = augmented.calibration_size;
    if n == 0 || augmented.rows.is_empty() {
        return Err(Error::invalid("augmented calibration set is empty"));
    }
    let mut pairs: Vec<Option<CalibrationPair>> = vec![None; n];
    for r in &augmented.rows {
        if r.indicator != (r.statistic <= r.cutoff) {
            return Err(Error::invalid(format!(
                "augmented row for calibration row {} has an inconsistent indicator",
                r.row
            )));
        }
        let slot = pairs
            .get_mut(r.row)
            .ok_or_else(|| Error::invalid(format!("augmented row refers to missing row {}", r.row)))?;
        match slot {
            None => {
                *slot = Some(CalibrationPair {
                    theta: r.theta.clone(),
                    lambda: r.statistic,
                })
            }
            Some(p) if p.theta == r.theta && p.lambda.to_bits() == r.statistic.to_bits() => {}
            Some(_) => {
                return Err(Error::invalid(format!(
                    "augmented rows disagree about calibration row {}",
                    r.row
                )))
            }
        }
    }
    let pairs = pairs
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::invalid(format!("calibration row {i} has no augmented rows"))))
        .collect::<Result<Vec<_>>>()?;
    let k = config.resolve(n, CALIBRATION_NEIGHBOR_FLOOR)?;
    let pools = LocalPools::from_pairs(&pairs, k, config.fit)?;
    if pools.distinct_values() < 2 {
        log::warn!("all calibration statistics are equal; the rejection probability is a single step");
    }
    Ok(RejectionProbabilityModel {
        pools,
        calibration_size: n,
        oversampling: augmented.oversampling,
        augmented_rows: augmented.rows.len(),
        seed: augmented.seed,
        metadata: BTreeMap::new(),
    })
}

impl RejectionProbabilityModel {
    pub fn theta_dim(&self) -> usize {
        self.pools.theta_dim
    }

    pub fn neighbors(&self) -> usize {
        self.pools.k
    }

    pub fn local_fit(&self) -> LocalFit {
        self.pools.fit
    }

    pub fn calibration_size(&self) -> usize {
        self.calibration_size
    }

    pub fn oversampling(&self) -> usize {
        self.oversampling
    }

    pub fn augmented_rows(&self) -> usize {
        self.augmented_rows
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn standardizer(&self) -> &Standardizer {
        self.pools.index.standardizer()
    }

    /// Calibration parameters, row-major.
    pub fn calibration_thetas(&self) -> &[f64] {
        &self.pools.thetas
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }

    /// The pooled neighbor statistics at `theta`.
    pub fn local_distribution(&self, theta: &[f64]) -> LocalDistribution {
        self.pools.local(theta)
    }

    /// Vectorized p-values for parallel `(θ, λ)` arrays (row-major `thetas`).
    pub fn pvalues_from_arrays(&self, thetas: &[f64], lambdas: &[f64]) -> Result<Vec<f64>> {
        let dim = self.theta_dim();
        if thetas.len() != lambdas.len() * dim {
            return Err(Error::invalid(format!(
                "{} parameter values do not match {} statistics of dimension {dim}",
                thetas.len(),
                lambdas.len()
            )));
        }
        Ok(thetas
            .par_chunks_exact(dim)
            .zip(lambdas.par_iter())
            .map(|(theta, &lambda)| self.pools.cdf(theta, lambda).value)
            .collect())
    }

    pub fn to_artifact(&self) -> ModelArtifact {
        ModelArtifact {
            format: ARTIFACT_FORMAT.to_string(),
            version: ARTIFACT_VERSION,
            kind: ModelKind::RejectionProbability,
            theta_dim: self.theta_dim(),
            neighbors: self.pools.k,
            local_fit: self.pools.fit,
            calibration_size: self.calibration_size,
            oversampling: Some(self.oversampling),
            augmented_rows: Some(self.augmented_rows),
            alpha: None,
            seed: Some(self.seed),
            standardization: self.standardizer().clone(),
            metadata: self.metadata.clone(),
            calibration: self.pools.table(),
        }
    }

    pub fn from_artifact(artifact: ModelArtifact) -> Result<Self> {
        artifact.check(ModelKind::RejectionProbability)?;
        let pools = LocalPools::from_table(artifact.calibration, artifact.theta_dim, artifact.neighbors, artifact.local_fit)?;
        check_standardization(&pools, &artifact.standardization)?;
        Ok(Self {
            calibration_size: artifact.calibration_size,
            oversampling: artifact.oversampling.unwrap_or(1),
            augmented_rows: artifact.augmented_rows.unwrap_or(artifact.calibration_size),
            seed: artifact.seed.unwrap_or_default(),
            metadata: artifact.metadata,
            pools,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_artifact().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_artifact(ModelArtifact::load(path)?)
    }
}

impl RejectionProbability for RejectionProbabilityModel {
    fn theta_dim(&self) -> usize {
        self.pools.theta_dim
    }

    fn at<'a>(&'a self, theta: &[f64]) -> Box<dyn ConditionalCdf + 'a> {
        Box::new(self.pools.local(theta))
    }

    fn rejection_probability(&self, theta: &[f64], t: f64) -> Estimate {
        self.pools.cdf(theta, t)
    }
}

/// Fits the rejection model straight from flat arrays.
///
/// `thetas` is row-major with `theta_dim` columns and one row per entry of
/// `lambdas`.
pub fn fit_rejection_from_arrays(
    thetas: &[f64],
    theta_dim: usize,
    lambdas: &[f64],
    oversampling: usize,
    config: &KnnConfig,
    seed: u64,
) -> Result<RejectionProbabilityModel> {
    if theta_dim == 0 || thetas.len() != lambdas.len() * theta_dim {
        return Err(Error::invalid(format!(
            "{} parameter values do not match {} statistics of dimension {theta_dim}",
            thetas.len(),
            lambdas.len()
        )));
    }
    let pairs = thetas
        .chunks_exact(theta_dim)
        .zip(lambdas)
        .map(|(t, &lambda)| {
            Ok(CalibrationPair {
                theta: ParameterPoint::new(t.to_vec())?,
                lambda,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let augmented = augment_pairs(&pairs, oversampling, seed)?;
    fit_rejection_model(&augmented, config)
}

/// Amortized p-value `ĥ(x; θ₀) = F̂(λ(x; θ₀); θ₀)`.
pub fn pvalue(
    model: &dyn RejectionProbability,
    stat: &dyn TestStatistic,
    x: &Observation,
    theta0: &ParameterPoint,
) -> Result<Estimate> {
    if model.theta_dim() != theta0.dim() {
        return Err(Error::invalid(format!(
            "model has parameter dimension {}, query has {}",
            model.theta_dim(),
            theta0.dim()
        )));
    }
    let lambda = evaluate_raw(stat, x.values(), theta0.coords())?;
    Ok(model.rejection_probability(theta0.coords(), lambda))
}

/// Estimated critical values `t̂_θ = F̂⁻¹(α; θ)` at one level.
#[derive(Debug, Clone)]
pub struct CriticalValueModel {
    pools: LocalPools,
    alpha: f64,
    metadata: BTreeMap<String, String>,
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("level alpha must lie in (0, 1), got {alpha}")))
    }
}

/// k-NN quantile regression of `λ` on `θ`.
pub fn fit_quantile_model(pairs: &[CalibrationPair], alpha: f64, config: &KnnConfig) -> Result<CriticalValueModel> {
    check_alpha(alpha)?;
    if pairs.len() < 2 {
        return Err(Error::invalid(format!(
            "quantile regression needs at least 2 calibration pairs, got {}",
            pairs.len()
        )));
    }
    let k = config.resolve(pairs.len(), CALIBRATION_NEIGHBOR_FLOOR)?;
    Ok(CriticalValueModel {
        pools: LocalPools::from_pairs(pairs, k, config.fit)?,
        alpha,
        metadata: BTreeMap::new(),
    })
}

impl CriticalValueModel {
    pub fn theta_dim(&self) -> usize {
        self.pools.theta_dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn neighbors(&self) -> usize {
        self.pools.k
    }

    pub fn local_fit(&self) -> LocalFit {
        self.pools.fit
    }

    pub fn calibration_size(&self) -> usize {
        self.pools.lambdas.len()
    }

    pub fn calibration_thetas(&self) -> &[f64] {
        &self.pools.thetas
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }

    /// Quantile of the same neighbor pool at another level; nondecreasing in
    /// `alpha` for fixed `theta`.
    pub fn quantile_at(&self, theta: &[f64], alpha: f64) -> Result<Estimate> {
        check_alpha(alpha)?;
        let local = self.pools.local(theta);
        Ok(Estimate {
            value: local.quantile(alpha),
            extrapolated: local.is_extrapolated(),
        })
    }

    pub fn to_artifact(&self) -> ModelArtifact {
        ModelArtifact {
            format: ARTIFACT_FORMAT.to_string(),
            version: ARTIFACT_VERSION,
            kind: ModelKind::CriticalValue,
            theta_dim: self.theta_dim(),
            neighbors: self.pools.k,
            local_fit: self.pools.fit,
            calibration_size: self.calibration_size(),
            oversampling: None,
            augmented_rows: None,
            alpha: Some(self.alpha),
            seed: None,
            standardization: self.pools.index.standardizer().clone(),
            metadata: self.metadata.clone(),
            calibration: self.pools.table(),
        }
    }

    pub fn from_artifact(artifact: ModelArtifact) -> Result<Self> {
        artifact.check(ModelKind::CriticalValue)?;
        let alpha = artifact
            .alpha
            .ok_or_else(|| Error::invalid("critical-value artifact has no alpha"))?;
        check_alpha(alpha)?;
        let pools = LocalPools::from_table(artifact.calibration, artifact.theta_dim, artifact.neighbors, artifact.local_fit)?;
        check_standardization(&pools, &artifact.standardization)?;
        Ok(Self {
            pools,
            alpha,
            metadata: artifact.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_artifact().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_artifact(ModelArtifact::load(path)?)
    }
}

impl CriticalValues for CriticalValueModel {
    fn theta_dim(&self) -> usize {
        self.pools.theta_dim
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn critical_value(&self, theta: &[f64]) -> Estimate {
        let local = self.pools.local(theta);
        Estimate {
            value: local.quantile(self.alpha),
            extrapolated: local.is_extrapolated(),
        }
    }
}

/// Pointwise critical value query.
pub fn critical_value(model: &dyn CriticalValues, theta: &ParameterPoint) -> Result<Estimate> {
    if model.theta_dim() != theta.dim() {
        return Err(Error::invalid(format!(
            "model has parameter dimension {}, query has {}",
            model.theta_dim(),
            theta.dim()
        )));
    }
    Ok(model.critical_value(theta.coords()))
}

pub const ARTIFACT_FORMAT: &str = "freb-model";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    RejectionProbability,
    CriticalValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub thetas: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
}

/// Versioned on-disk form of a fitted model.
///
/// The neighbor index is rebuilt on load from the stored table, in stored
/// row order, so queries after a round trip are bit-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub theta_dim: usize,
    pub neighbors: usize,
    #[serde(default)]
    pub local_fit: LocalFit,
    pub calibration_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oversampling: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmented_rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub standardization: Standardizer,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub calibration: CalibrationTable,
}

impl ModelArtifact {
    fn check(&self, kind: ModelKind) -> Result<()> {
        if self.format != ARTIFACT_FORMAT {
            return Err(Error::invalid(format!("unknown artifact format {:?}", self.format)));
        }
        if self.version != ARTIFACT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported artifact version {} (expected {ARTIFACT_VERSION})",
                self.version
            )));
        }
        if self.kind != kind {
            return Err(Error::invalid(format!("artifact holds a {:?} model, expected {kind:?}", self.kind)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn check_standardization(pools: &LocalPools, stored: &Standardizer) -> Result<()> {
    let rebuilt = pools.index.standardizer();
    let same = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
    if same(&rebuilt.mean, &stored.mean) && same(&rebuilt.scale, &stored.scale) {
        Ok(())
    } else {
        Err(Error::invalid("stored standardization does not match the calibration table"))
    }
}
