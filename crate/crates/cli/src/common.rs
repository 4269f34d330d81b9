// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use freb::benchmarks::{Scenario, ScenarioName};
use freb::calibration::ModelKind;
use freb::grid::{GridAxis, ParameterGrid};
use freb::io::{read_split_csv, SplitFile};
use freb::statistics::TestStatistic;
use serde::{Deserialize, Serialize};

use crate::exit::usage;

/// How a confidence set is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// `{θ : ĥ(x; θ) > α}` from a rejection-probability model.
    Pvalue,
    /// `{θ : λ(x; θ) > t̂_θ}` from a critical-value model.
    Critval,
    /// Highest-posterior-density set at credibility `1 − α`.
    Hpd,
}

impl Method {
    pub fn needs_model(self) -> Option<ModelKind> {
        match self {
            Method::Pvalue => Some(ModelKind::RejectionProbability),
            Method::Critval => Some(ModelKind::CriticalValue),
            Method::Hpd => None,
        }
    }
}

pub fn parse_scenario(s: &str) -> Result<ScenarioName, String> {
    s.parse().map_err(|e: freb::Error| e.to_string())
}

/// Exact posterior of a built-in study.
pub fn builtin_statistic(name: ScenarioName) -> Result<Box<dyn TestStatistic>> {
    Ok(Scenario::by_name(name, 0).posterior()?)
}

/// `LOWER:UPPER:COUNT`, applied to every axis.
pub fn parse_grid(spec: &str, dim: usize) -> Result<ParameterGrid> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || usage(format!("grid {spec:?}: expected LOWER:UPPER:COUNT"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lower: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let upper: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    ParameterGrid::new(vec![GridAxis { lower, upper, count }; dim]).map_err(|e| usage(format!("grid {spec:?}: {e}")))
}

pub fn grid_or_default(spec: Option<&str>, dim: usize) -> Result<ParameterGrid> {
    match (spec, dim) {
        (Some(s), _) => parse_grid(s, dim),
        (None, 1) => Ok(ParameterGrid::default_1d()),
        (None, 2) => Ok(ParameterGrid::default_2d()),
        (None, d) => Err(usage(format!("no default grid in dimension {d}; pass --grid"))),
    }
}

pub fn read_split(path: &Path) -> Result<SplitFile> {
    read_split_csv(path).with_context(|| format!("reading {}", path.display()))
}

pub fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| usage(format!("missing required --{flag}")))
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(usage(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}
