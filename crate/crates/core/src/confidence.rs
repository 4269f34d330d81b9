// SPDX-License-Identifier: Apache-2.0

//! Credible and confidence sets on parameter grids.
//!
//! Three constructions share the [`ParameterSet`] representation:
//!
//! * HPD credible sets: the highest-density grid points holding at least the
//!   requested posterior mass.
//! * FreB sets from amortized p-values: `{θ : ĥ(x; θ) > α}`.
//! * FreB sets from critical values: `{θ : λ(x; θ) > t̂_θ}`.
//!
//! The grid-wide model lookups are the expensive part of the two FreB
//! routes, and they do not depend on `x`. [`PvalueSurface`] and
//! [`CriticalValueSurface`] evaluate them once per grid and are then reused
//! for every observation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{check_alpha, ConditionalCdf, CriticalValues, RejectionProbability};
use crate::error::{Error, Result};
use crate::grid::ParameterGrid;
use crate::statistics::{Observation, TestStatistic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetRoute {
    Hpd,
    FrebPvalue,
    FrebCritval,
}

impl SetRoute {
    pub fn as_str(self) -> &'static str {
        match self {
            SetRoute::Hpd => "hpd",
            SetRoute::FrebPvalue => "freb-pvalue",
            SetRoute::FrebCritval => "freb-critval",
        }
    }
}

impl fmt::Display for SetRoute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SetRoute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hpd" => Ok(SetRoute::Hpd),
            "freb-pvalue" | "pvalue" => Ok(SetRoute::FrebPvalue),
            "freb-critval" | "critval" => Ok(SetRoute::FrebCritval),
            other => Err(Error::invalid(format!("unknown set route {other:?}"))),
        }
    }
}

/// A subset of grid points.
///
/// `alpha` is the miscoverage level; for HPD sets it is one minus the
/// credibility.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    grid: ParameterGrid,
    mask: Vec<bool>,
    alpha: f64,
    route: SetRoute,
}

impl ParameterSet {
    pub fn new(grid: ParameterGrid, mask: Vec<bool>, alpha: f64, route: SetRoute) -> Result<Self> {
        if mask.len() != grid.len() {
            return Err(Error::invalid(format!(
                "mask has {} entries for a grid of {} points",
                mask.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            mask,
            alpha,
            route,
        })
    }

    pub fn grid(&self) -> &ParameterGrid {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn route(&self) -> SetRoute {
        self.route
    }

    pub fn member_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.member_count() == 0
    }

    /// Membership of the grid point nearest to `theta`; false off the grid.
    pub fn contains(&self, theta: &[f64]) -> bool {
        self.grid.nearest_index(theta).is_some_and(|i| self.mask[i])
    }

    /// Coordinates of every member, row-major.
    pub fn members(&self) -> Vec<Vec<f64>> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| self.grid.point(i))
            .collect()
    }

    /// Maximal runs of consecutive members in flattened grid order, as
    /// half-open index ranges. In 1D these are the connected pieces.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &m) in self.mask.iter().enumerate() {
            match (m, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, self.mask.len()));
        }
        runs
    }

    /// Number of grid points in exactly one of the two sets.
    pub fn symmetric_difference(&self, other: &ParameterSet) -> Result<usize> {
        if self.grid != other.grid {
            return Err(Error::invalid("sets live on different grids"));
        }
        Ok(self.mask.iter().zip(&other.mask).filter(|(a, b)| a != b).count())
    }

    pub fn is_subset_of(&self, other: &ParameterSet) -> bool {
        self.grid == other.grid && self.mask.iter().zip(&other.mask).all(|(a, b)| !a || *b)
    }

    pub fn to_file(&self) -> ParameterSetFile {
        let mut mask_rle: Vec<(bool, usize)> = Vec::new();
        for &m in &self.mask {
            match mask_rle.last_mut() {
                Some((v, n)) if *v == m => *n += 1,
                _ => mask_rle.push((m, 1)),
            }
        }
        ParameterSetFile {
            grid: self.grid.clone(),
            mask_rle,
            alpha: self.alpha,
            route: self.route,
            size: set_size(self),
            metadata: BTreeMap::new(),
        }
    }

    pub fn from_file(file: ParameterSetFile) -> Result<Self> {
        let mut mask = Vec::with_capacity(file.grid.len());
        for (v, n) in file.mask_rle {
            mask.extend(std::iter::repeat_n(v, n));
        }
        Self::new(file.grid, mask, file.alpha, file.route)
    }
}

/// JSON form of a [`ParameterSet`]: grid, run-length-encoded mask, level and
/// route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSetFile {
    pub grid: ParameterGrid,
    /// `(value, run length)` pairs covering the mask in grid order.
    pub mask_rle: Vec<(bool, usize)>,
    pub alpha: f64,
    pub route: SetRoute,
    pub size: f64,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl ParameterSetFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Lebesgue measure of the set: members × cell measure.
pub fn set_size(set: &ParameterSet) -> f64 {
    set.member_count() as f64 * set.grid.cell_measure()
}

fn check_dims(stat: &dyn TestStatistic, x: &Observation, grid: &ParameterGrid) -> Result<()> {
    if stat.obs_dim() != x.dim() {
        return Err(Error::invalid(format!(
            "observation has dimension {}, statistic expects {}",
            x.dim(),
            stat.obs_dim()
        )));
    }
    if stat.theta_dim() != grid.dim() {
        return Err(Error::invalid(format!(
            "grid has dimension {}, statistic expects {}",
            grid.dim(),
            stat.theta_dim()
        )));
    }
    Ok(())
}

/// `λ(x; θ)` over every grid point, in grid order.
pub fn evaluate_on_grid(stat: &dyn TestStatistic, x: &Observation, grid: &ParameterGrid) -> Result<Vec<f64>> {
    check_dims(stat, x, grid)?;
    let d = grid.dim();
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; d],
            |buf, i| {
                grid.point_into(i, buf);
                stat.eval(x.values(), buf)
            },
        )
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            x: x.values().to_vec(),
            theta: grid.point(i),
            reason: format!("{} returned {}", stat.name(), values[i]),
        });
    }
    Ok(values)
}

/// Density level `c` of the HPD set from grid densities: the smallest
/// density among the highest-density points whose normalized mass first
/// reaches `credibility`.
pub fn hpd_threshold_from_densities(densities: &[f64], credibility: f64) -> Result<f64> {
    if !(credibility > 0.0 && credibility < 1.0) {
        return Err(Error::invalid(format!("credibility must lie in (0, 1), got {credibility}")));
    }
    if densities.iter().any(|d| *d < 0.0) {
        return Err(Error::invalid("posterior densities must be non-negative"));
    }
    let total: f64 = densities.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::invalid("posterior has no mass on the grid"));
    }
    let mut sorted = densities.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let goal = credibility * total;
    let mut acc = 0.0;
    for &d in &sorted {
        acc += d;
        if acc >= goal {
            return Ok(d);
        }
    }
    // rounding left the running sum just short of the goal
    Ok(*sorted.iter().rev().find(|d| **d > 0.0).unwrap_or(&sorted[0]))
}

/// HPD level for a posterior evaluator at `x`.
pub fn hpd_threshold(
    posterior: &dyn TestStatistic,
    x: &Observation,
    grid: &ParameterGrid,
    credibility: f64,
) -> Result<f64> {
    hpd_threshold_from_densities(&evaluate_on_grid(posterior, x, grid)?, credibility)
}

/// Highest-posterior-density credible set. Points tied with the threshold
/// density are included.
pub fn hpd_set(
    posterior: &dyn TestStatistic,
    x: &Observation,
    grid: &ParameterGrid,
    credibility: f64,
) -> Result<ParameterSet> {
    let densities = evaluate_on_grid(posterior, x, grid)?;
    let c = hpd_threshold_from_densities(&densities, credibility)?;
    let mask = densities.iter().map(|d| *d >= c).collect();
    ParameterSet::new(grid.clone(), mask, 1.0 - credibility, SetRoute::Hpd)
}

/// `F̂(· ; θ)` frozen at every grid point.
pub struct PvalueSurface<'a> {
    grid: &'a ParameterGrid,
    local: Vec<Box<dyn ConditionalCdf + 'a>>,
}

impl<'a> PvalueSurface<'a> {
    pub fn new(model: &'a dyn RejectionProbability, grid: &'a ParameterGrid) -> Result<Self> {
        if model.theta_dim() != grid.dim() {
            return Err(Error::invalid(format!(
                "grid has dimension {}, model expects {}",
                grid.dim(),
                model.theta_dim()
            )));
        }
        let d = grid.dim();
        let local = (0..grid.len())
            .into_par_iter()
            .map_init(
                || vec![0.0; d],
                |buf, i| {
                    grid.point_into(i, buf);
                    model.at(buf)
                },
            )
            .collect();
        Ok(Self { grid, local })
    }

    pub fn grid(&self) -> &ParameterGrid {
        self.grid
    }

    /// Whether any grid point lies outside the calibration hull.
    pub fn any_extrapolated(&self) -> bool {
        self.local.iter().any(|l| l.extrapolated())
    }

    /// `ĥ(x; θ)` at every grid point.
    pub fn pvalues(&self, stat: &dyn TestStatistic, x: &Observation) -> Result<Vec<f64>> {
        let lambdas = evaluate_on_grid(stat, x, self.grid)?;
        Ok(lambdas
            .par_iter()
            .zip(self.local.par_iter())
            .map(|(l, cdf)| cdf.cdf(*l))
            .collect())
    }

    pub fn set(&self, stat: &dyn TestStatistic, x: &Observation, alpha: f64) -> Result<ParameterSet> {
        check_alpha(alpha)?;
        let mask = self.pvalues(stat, x)?.into_iter().map(|h| h > alpha).collect();
        ParameterSet::new(self.grid.clone(), mask, alpha, SetRoute::FrebPvalue)
    }
}

/// FreB confidence set `{θ : ĥ(x; θ) > α}`.
pub fn freb_set_pvalue(
    model: &dyn RejectionProbability,
    stat: &dyn TestStatistic,
    x: &Observation,
    grid: &ParameterGrid,
    alpha: f64,
) -> Result<ParameterSet> {
    PvalueSurface::new(model, grid)?.set(stat, x, alpha)
}

/// `t̂_θ` at every grid point for one fitted level.
pub struct CriticalValueSurface<'a> {
    grid: &'a ParameterGrid,
    alpha: f64,
    cutoffs: Vec<f64>,
    extrapolated: Vec<bool>,
}

impl<'a> CriticalValueSurface<'a> {
    pub fn new(model: &dyn CriticalValues, grid: &'a ParameterGrid) -> Result<Self> {
        if model.theta_dim() != grid.dim() {
            return Err(Error::invalid(format!(
                "grid has dimension {}, model expects {}",
                grid.dim(),
                model.theta_dim()
            )));
        }
        let d = grid.dim();
        let (cutoffs, extrapolated) = (0..grid.len())
            .into_par_iter()
            .map_init(
                || vec![0.0; d],
                |buf, i| {
                    grid.point_into(i, buf);
                    let e = model.critical_value(buf);
                    (e.value, e.extrapolated)
                },
            )
            .unzip();
        Ok(Self {
            grid,
            alpha: model.alpha(),
            cutoffs,
            extrapolated,
        })
    }

    pub fn cutoffs(&self) -> &[f64] {
        &self.cutoffs
    }

    pub fn any_extrapolated(&self) -> bool {
        self.extrapolated.iter().any(|e| *e)
    }

    pub fn set(&self, stat: &dyn TestStatistic, x: &Observation) -> Result<ParameterSet> {
        let lambdas = evaluate_on_grid(stat, x, self.grid)?;
        let mask = lambdas.iter().zip(&self.cutoffs).map(|(l, c)| l > c).collect();
        ParameterSet::new(self.grid.clone(), mask, self.alpha, SetRoute::FrebCritval)
    }
}

/// FreB confidence set `{θ : λ(x; θ) > t̂_θ}`.
pub fn freb_set_critval(
    model: &dyn CriticalValues,
    stat: &dyn TestStatistic,
    x: &Observation,
    grid: &ParameterGrid,
    alpha: f64,
) -> Result<ParameterSet> {
    check_alpha(alpha)?;
    if (alpha - model.alpha()).abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "critical values were fitted at alpha = {}, requested {alpha}",
            model.alpha()
        )));
    }
    CriticalValueSurface::new(model, grid)?.set(stat, x)
}
