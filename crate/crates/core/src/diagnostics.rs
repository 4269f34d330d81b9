// SPDX-License-Identifier: Apache-2.0

//! Local coverage diagnostics.
//!
//! Each row of an independent diagnostic set is scored with `W = 1` when the
//! set built from its `x` contains its `θ`, and `W` is then smoothed over
//! parameter space with a k-NN local mean. Membership is decided at `θ`
//! itself rather than on a grid.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{default_neighbors, CriticalValues, KnnConfig, RejectionProbability};
use crate::confidence::hpd_threshold;
use crate::error::{Error, Result};
use crate::grid::ParameterGrid;
use crate::knn::NeighborIndex;
use crate::sample::{SampleSet, SplitRole};
use crate::statistics::{evaluate_raw, Observation, ParameterPoint, TestStatistic};

pub const COVERAGE_NEIGHBOR_FLOOR: usize = 200;
pub const MIN_DIAGNOSTIC_RECORDS: usize = 100;

/// Two-sided 95% standard normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRecord {
    pub theta: ParameterPoint,
    pub covered: bool,
}

/// Pointwise set-membership test `θ ∈ B(x)`.
pub trait MembershipRule: Send + Sync {
    fn contains(&self, x: &[f64], theta: &[f64]) -> Result<bool>;
}

impl<F> MembershipRule for F
where
    F: Fn(&[f64], &[f64]) -> Result<bool> + Send + Sync,
{
    fn contains(&self, x: &[f64], theta: &[f64]) -> Result<bool> {
        self(x, theta)
    }
}

/// Highest-posterior-density credible set, thresholded on a grid.
pub struct HpdRule<'a> {
    pub posterior: &'a dyn TestStatistic,
    pub grid: &'a ParameterGrid,
    pub credibility: f64,
}

impl MembershipRule for HpdRule<'_> {
    fn contains(&self, x: &[f64], theta: &[f64]) -> Result<bool> {
        let obs = Observation::new(x.to_vec())?;
        let c = hpd_threshold(self.posterior, &obs, self.grid, self.credibility)?;
        Ok(evaluate_raw(self.posterior, x, theta)? >= c)
    }
}

/// FreB set through the p-value route: `ĥ(x; θ) > α`.
pub struct PvalueRule<'a> {
    pub model: &'a dyn RejectionProbability,
    pub statistic: &'a dyn TestStatistic,
    pub alpha: f64,
}

impl MembershipRule for PvalueRule<'_> {
    fn contains(&self, x: &[f64], theta: &[f64]) -> Result<bool> {
        let lambda = evaluate_raw(self.statistic, x, theta)?;
        Ok(self.model.rejection_probability(theta, lambda).value > self.alpha)
    }
}

/// FreB set through the critical-value route: `λ(x; θ) > t̂_θ`.
pub struct CritvalRule<'a> {
    pub model: &'a dyn CriticalValues,
    pub statistic: &'a dyn TestStatistic,
}

impl MembershipRule for CritvalRule<'_> {
    fn contains(&self, x: &[f64], theta: &[f64]) -> Result<bool> {
        let lambda = evaluate_raw(self.statistic, x, theta)?;
        Ok(lambda > self.model.critical_value(theta).value)
    }
}

/// Scores every diagnostic row, in order.
pub fn coverage_indicators(diag: &SampleSet, rule: &dyn MembershipRule) -> Result<Vec<DiagnosticRecord>> {
    diag.require_role(SplitRole::Diagnostic, "coverage diagnostics")?;
    diag.rows()
        .par_iter()
        .map(|row| {
            Ok(DiagnosticRecord {
                theta: row.theta.clone(),
                covered: rule.contains(row.x.values(), row.theta.coords())?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageEstimate {
    /// Local mean of `W`.
    pub value: f64,
    /// Wilson-score 95% half-width on the local count.
    pub half_width: f64,
    /// Center of the Wilson interval.
    pub center: f64,
    pub extrapolated: bool,
}

impl CoverageEstimate {
    pub fn lower(&self) -> f64 {
        (self.center - self.half_width).max(0.0)
    }

    pub fn upper(&self) -> f64 {
        (self.center + self.half_width).min(1.0)
    }
}

/// Wilson score interval for `successes` out of `n`, as (center, half-width).
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    (center, half)
}

/// k-NN local mean of coverage indicators.
#[derive(Debug, Clone)]
pub struct CoverageModel {
    index: NeighborIndex,
    covered: Vec<bool>,
    neighbors: usize,
}

pub fn fit_coverage_model(records: &[DiagnosticRecord], config: &KnnConfig) -> Result<CoverageModel> {
    if records.len() < MIN_DIAGNOSTIC_RECORDS {
        return Err(Error::invalid(format!(
            "coverage model needs at least {MIN_DIAGNOSTIC_RECORDS} records, got {}",
            records.len()
        )));
    }
    let dim = records[0].theta.dim();
    if records.iter().any(|r| r.theta.dim() != dim) {
        return Err(Error::invalid("diagnostic records have mixed parameter dimensions"));
    }
    let neighbors = match config.k {
        Some(0) => return Err(Error::invalid("k must be at least 1")),
        Some(k) if k > records.len() => {
            return Err(Error::invalid(format!("k = {k} exceeds the {} diagnostic records", records.len())))
        }
        Some(k) => k,
        None => default_neighbors(records.len(), COVERAGE_NEIGHBOR_FLOOR),
    };
    let points: Vec<f64> = records.iter().flat_map(|r| r.theta.coords().iter().copied()).collect();
    Ok(CoverageModel {
        index: NeighborIndex::build(&points, dim)?,
        covered: records.iter().map(|r| r.covered).collect(),
        neighbors,
    })
}

impl CoverageModel {
    pub fn theta_dim(&self) -> usize {
        self.index.dim()
    }

    pub fn neighbors(&self) -> usize {
        self.neighbors
    }

    pub fn sample_count(&self) -> usize {
        self.covered.len()
    }

    pub fn estimate(&self, theta: &[f64]) -> CoverageEstimate {
        let near = self.index.nearest(theta, self.neighbors);
        let hits = near.iter().filter(|&&i| self.covered[i]).count();
        let (center, half_width) = wilson_interval(hits, near.len(), Z95);
        CoverageEstimate {
            value: hits as f64 / near.len() as f64,
            half_width,
            center,
            extrapolated: !self.index.contains(theta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverageFlag {
    Ok,
    Under,
    Over,
}

impl CoverageFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            CoverageFlag::Ok => "ok",
            CoverageFlag::Under => "under",
            CoverageFlag::Over => "over",
        }
    }

    /// `Under`/`Over` when the Wilson band lies entirely below/above `nominal`.
    pub fn classify(estimate: &CoverageEstimate, nominal: f64) -> Self {
        if estimate.upper() < nominal {
            CoverageFlag::Under
        } else if estimate.lower() > nominal {
            CoverageFlag::Over
        } else {
            CoverageFlag::Ok
        }
    }
}

impl fmt::Display for CoverageFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub grid: ParameterGrid,
    pub estimates: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub flags: Vec<CoverageFlag>,
    pub nominal: f64,
    pub sample_count: usize,
    pub neighbors: usize,
}

/// Evaluates the coverage model at every grid point.
pub fn coverage_map(model: &CoverageModel, grid: &ParameterGrid, nominal: f64) -> Result<CoverageReport> {
    if !(nominal > 0.0 && nominal < 1.0) {
        return Err(Error::invalid(format!("nominal coverage must lie in (0, 1), got {nominal}")));
    }
    if grid.dim() != model.theta_dim() {
        return Err(Error::invalid(format!(
            "grid has dimension {}, diagnostic records have {}",
            grid.dim(),
            model.theta_dim()
        )));
    }
    let d = grid.dim();
    let estimates: Vec<CoverageEstimate> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; d],
            |buf, i| {
                grid.point_into(i, buf);
                model.estimate(buf)
            },
        )
        .collect();
    Ok(CoverageReport {
        grid: grid.clone(),
        flags: estimates.iter().map(|e| CoverageFlag::classify(e, nominal)).collect(),
        estimates: estimates.iter().map(|e| e.value).collect(),
        half_widths: estimates.iter().map(|e| e.half_width).collect(),
        nominal,
        sample_count: model.sample_count(),
        neighbors: model.neighbors(),
    })
}

/// A maximal run of consecutive grid points (in grid order) sharing a flag.
#[derive(Debug, Clone, PartialEq)]
pub struct FlaggedRegion {
    pub flag: CoverageFlag,
    pub first: Vec<f64>,
    pub last: Vec<f64>,
    pub points: usize,
    pub min_estimate: f64,
    pub max_estimate: f64,
}

impl CoverageReport {
    pub fn flagged_count(&self) -> usize {
        self.flags.iter().filter(|f| **f != CoverageFlag::Ok).count()
    }

    pub fn flagged_regions(&self) -> Vec<FlaggedRegion> {
        let mut regions: Vec<FlaggedRegion> = Vec::new();
        let mut prev: Option<(usize, CoverageFlag)> = None;
        for (i, (&flag, &est)) in self.flags.iter().zip(&self.estimates).enumerate() {
            if flag == CoverageFlag::Ok {
                prev = None;
                continue;
            }
            match (prev, regions.last_mut()) {
                (Some((j, f)), Some(r)) if j + 1 == i && f == flag => {
                    r.last = self.grid.point(i);
                    r.points += 1;
                    r.min_estimate = r.min_estimate.min(est);
                    r.max_estimate = r.max_estimate.max(est);
                }
                _ => regions.push(FlaggedRegion {
                    flag,
                    first: self.grid.point(i),
                    last: self.grid.point(i),
                    points: 1,
                    min_estimate: est,
                    max_estimate: est,
                }),
            }
            prev = Some((i, flag));
        }
        regions
    }

    /// CSV with columns `theta_1..theta_d, estimate, half_width, flag`.
    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        let mut out = out;
        if let Some(c) = comment {
            writeln!(out, "# {c}").map_err(|e| Error::io(Path::new("<report>"), e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.grid.dim()).map(|i| format!("theta_{i}")).collect();
        header.extend(["estimate", "half_width", "flag"].map(String::from));
        w.write_record(&header)?;
        let mut theta = vec![0.0; self.grid.dim()];
        for i in 0..self.grid.len() {
            self.grid.point_into(i, &mut theta);
            let mut rec: Vec<String> = theta.iter().map(|v| crate::io::format_float(*v)).collect();
            rec.push(crate::io::format_float(self.estimates[i]));
            rec.push(crate::io::format_float(self.half_widths[i]));
            rec.push(self.flags[i].as_str().to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(Path::new("<report>"), e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file), comment)
    }
}
