// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use freb::benchmarks::ScenarioName;
use freb::calibration::{augment_pairs, collect_statistics, fit_quantile_model, fit_rejection_model, KnnConfig, LocalFit};
use freb::io::read_statistic_table;
use freb::sample::SplitRole;
use freb::statistics::{ParameterPoint, TestStatistic};
use freb::CalibrationPair;
use serde::{Deserialize, Serialize};

use crate::common::{builtin_statistic, check_alpha, parse_scenario, read_split, require};
use crate::config::{write_json, Provenance};
use crate::exit::usage;
use crate::Globals;

pub const KEYS: &[&str] = &[
    "calibration",
    "statistic",
    "statistic-table",
    "route",
    "alpha",
    "oversampling",
    "k",
    "local-fit",
];

pub const REJECTION_MODEL: &str = "rejection_model.json";
pub const CRITVAL_MODEL: &str = "critval_model.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Pvalue,
    Critval,
    Both,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CalibrateArgs {
    /// Calibration split CSV.
    #[arg(long)]
    pub calibration: Option<PathBuf>,

    /// Built-in statistic: the exact posterior of gauss1d or gmm2d.
    #[arg(long, value_parser = parse_scenario)]
    pub statistic: Option<ScenarioName>,

    /// Pre-computed statistics, columns theta_1..theta_d,x_id,lambda, where
    /// x_id is the 0-based data row of the calibration CSV.
    #[arg(long)]
    pub statistic_table: Option<PathBuf>,

    /// Which models to fit (default both).
    #[arg(long, value_enum)]
    pub route: Option<Route>,

    /// Level of the critical-value model (default 0.1).
    #[arg(long)]
    pub alpha: Option<f64>,

    /// K, random cutoffs per calibration row (default 10).
    #[arg(short = 'K', long)]
    pub oversampling: Option<usize>,

    /// Neighbor count k (default depends on --local-fit).
    #[arg(long)]
    pub k: Option<usize>,

    /// constant (pooled empirical CDF) or quadratic (local quadratic fit).
    #[arg(long)]
    pub local_fit: Option<LocalFit>,
}

#[derive(Serialize)]
struct Manifest {
    config_hash: String,
    seed: u64,
    statistic: String,
    route: Route,
    alpha: f64,
    oversampling: usize,
    calibration_size: usize,
    augmented_rows: Option<usize>,
    neighbors: usize,
    local_fit: LocalFit,
    inputs: BTreeMap<String, String>,
    models: Vec<&'static str>,
}

enum Source {
    Builtin(ScenarioName),
    Table(PathBuf),
}

pub fn run(g: &Globals, flags: &CalibrateArgs) -> Result<()> {
    let a = g.config.fill(flags)?;
    let source = match (&a.statistic, &a.statistic_table) {
        (Some(name), None) => Source::Builtin(*name),
        (None, Some(path)) => Source::Table(path.clone()),
        (None, None) => return Err(usage("missing statistic source: pass --statistic or --statistic-table")),
        (Some(_), Some(_)) => return Err(usage("--statistic and --statistic-table are mutually exclusive")),
    };
    let cal_path = require(&a.calibration, "calibration")?.clone();
    let route = a.route.unwrap_or(Route::Both);
    let alpha = a.alpha.unwrap_or(0.1);
    check_alpha(alpha)?;
    let oversampling = a.oversampling.unwrap_or(10);
    if oversampling == 0 {
        return Err(usage("oversampling K must be at least 1"));
    }
    let knn = KnnConfig {
        k: a.k,
        fit: a.local_fit.unwrap_or_default(),
    };

    let mut inputs: Vec<(&str, &PathBuf)> = vec![("calibration", &cal_path)];
    if let Source::Table(p) = &source {
        inputs.push(("statistic-table", p));
    }
    let provenance = Provenance::new("calibrate", g.seed, &a, &inputs)?;
    let hash = provenance.hash();

    let cal = read_split(&cal_path)?
        .into_sample_set()
        .with_context(|| format!("reading {}", cal_path.display()))?;
    let (pairs, statistic_name) = match &source {
        Source::Builtin(name) => {
            let stat = builtin_statistic(*name)?;
            (collect_statistics(&cal, stat.as_ref())?, name.to_string())
        }
        Source::Table(path) => {
            if cal.role() != SplitRole::Calibration {
                return Err(freb::Error::Provenance(format!(
                    "calibration requires a calibration set, got a {} set",
                    cal.role()
                ))
                .into());
            }
            let table = read_statistic_table(path).with_context(|| format!("reading {}", path.display()))?;
            (tabulated_pairs(&cal, &table)?, "table".to_string())
        }
    };

    let mut meta = BTreeMap::new();
    meta.insert("config_hash".to_string(), hash.clone());
    meta.insert("statistic".to_string(), statistic_name.clone());
    meta.insert("split".to_string(), SplitRole::Calibration.to_string());

    let mut models = Vec::new();
    let mut neighbors = 0;
    let mut augmented_rows = None;
    let mut local_fit = knn.fit;
    if matches!(route, Route::Pvalue | Route::Both) {
        let aug = augment_pairs(&pairs, oversampling, g.seed)?;
        let mut model = fit_rejection_model(&aug, &knn)?;
        model.metadata_mut().extend(meta.clone());
        model.save(&g.out.join(REJECTION_MODEL))?;
        neighbors = model.neighbors();
        local_fit = model.local_fit();
        augmented_rows = Some(model.augmented_rows());
        models.push(REJECTION_MODEL);
    }
    if matches!(route, Route::Critval | Route::Both) {
        let mut model = fit_quantile_model(&pairs, alpha, &knn)?;
        model.metadata_mut().extend(meta.clone());
        model.save(&g.out.join(CRITVAL_MODEL))?;
        neighbors = model.neighbors();
        models.push(CRITVAL_MODEL);
    }
    write_json(
        &g.out.join("calibration_manifest.json"),
        &Manifest {
            config_hash: hash,
            seed: g.seed,
            statistic: statistic_name,
            route,
            alpha,
            oversampling,
            calibration_size: pairs.len(),
            augmented_rows,
            neighbors,
            local_fit,
            inputs: provenance.inputs,
            models,
        },
    )
}

/// Looks up `λ` for every calibration row; row `i` is `x_id = i`.
fn tabulated_pairs(cal: &freb::SampleSet, table: &dyn TestStatistic) -> Result<Vec<CalibrationPair>> {
    if table.theta_dim() != cal.theta_dim() {
        return Err(freb::Error::InvalidInput(format!(
            "statistic table has {} parameter columns, calibration split has {}",
            table.theta_dim(),
            cal.theta_dim()
        ))
        .into());
    }
    cal.iter()
        .enumerate()
        .map(|(i, row)| {
            let lambda = table.eval(&[i as f64], row.theta.coords());
            if lambda.is_nan() {
                return Err(freb::Error::InvalidInput(format!(
                    "statistic table has no entry for calibration row {i} at theta {:?}",
                    row.theta.coords()
                ))
                .into());
            }
            Ok(CalibrationPair {
                theta: ParameterPoint::new(row.theta.coords().to_vec())?,
                lambda,
            })
        })
        .collect()
}
