// SPDX-License-Identifier: Apache-2.0

use std::collections::HashSet;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use freb::benchmarks::ScenarioName;
use freb::calibration::KnnConfig;
use freb::diagnostics::{
    coverage_indicators, coverage_map, fit_coverage_model, CritvalRule, HpdRule, MembershipRule, PvalueRule,
};
use freb::sample::{SampleSet, SplitRole};
use serde::{Deserialize, Serialize};

use crate::common::{grid_or_default, parse_grid, parse_scenario, read_split, require, Method};
use crate::config::Provenance;
use crate::exit::usage;
use crate::infer::{method_name, plan, Loaded};
use crate::Globals;

pub const KEYS: &[&str] = &["diagnostic", "nominal", "coverage-grid", "coverage-k"];

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct DiagnoseArgs {
    /// Diagnostic split CSV, drawn independently of the calibration split.
    #[arg(long)]
    pub diagnostic: Option<PathBuf>,

    /// Model artifact written by `calibrate` (not needed for hpd).
    #[arg(long)]
    pub model: Option<PathBuf>,

    /// Set construction (default: the model's route, or hpd without a model).
    #[arg(long, value_enum)]
    pub method: Option<Method>,

    /// Miscoverage level of the sets being checked (default 0.1).
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Nominal coverage the map is compared against (default 1 − alpha).
    #[arg(long)]
    pub nominal: Option<f64>,

    /// Built-in statistic (default: the one recorded in the model).
    #[arg(long, value_parser = parse_scenario)]
    pub statistic: Option<ScenarioName>,

    /// Grid for hpd sets, LOWER:UPPER:COUNT on every axis.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,

    /// Where the coverage map is evaluated (default -9:9:181 in 1D,
    /// -9:9:37 in 2D).
    #[arg(long, allow_hyphen_values = true)]
    pub coverage_grid: Option<String>,

    /// Neighbor count of the coverage regression (default
    /// max(200, ⌈n^(2/3)⌉)).
    #[arg(long)]
    pub coverage_k: Option<usize>,
}

fn point(theta: &[f64]) -> String {
    let coords: Vec<String> = theta.iter().map(|v| format!("{v:.4}")).collect();
    format!("({})", coords.join(", "))
}

/// Refuses a diagnostic split that shares parameter draws with the
/// calibration data behind `model`.
fn check_overlap(diag: &SampleSet, model: &Loaded) -> Result<()> {
    let d = model.theta_dim();
    let seen: HashSet<Vec<u64>> = model
        .calibration_thetas()
        .chunks_exact(d)
        .map(|t| t.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    let shared = diag
        .iter()
        .filter(|r| seen.contains(&r.theta.coords().iter().map(|v| (v + 0.0).to_bits()).collect::<Vec<_>>()))
        .count();
    if shared > 0 {
        return Err(freb::Error::Provenance(format!(
            "{shared} diagnostic rows repeat parameter values from the model's calibration data"
        ))
        .into());
    }
    Ok(())
}

pub fn run(g: &Globals, flags: &DiagnoseArgs) -> Result<()> {
    let a = g.config.fill(flags)?;
    if let Some(n) = a.nominal {
        if !(n > 0.0 && n < 1.0) {
            return Err(usage(format!("nominal coverage must lie in (0, 1), got {n}")));
        }
    }
    let diag_path = require(&a.diagnostic, "diagnostic")?.clone();
    let mut inputs = vec![("diagnostic", &diag_path)];
    if let Some(m) = &a.model {
        inputs.push(("model", m));
    }
    let hash = Provenance::new("diagnose", g.seed, &a, &inputs)?.hash();
    let p = plan(a.model.as_ref(), a.method, a.alpha, a.statistic)?;
    let nominal = a.nominal.unwrap_or(1.0 - p.alpha);
    let dim = p.statistic.theta_dim();
    let cov_grid = match (&a.coverage_grid, dim) {
        (Some(s), _) => parse_grid(s, dim)?,
        (None, 1) => parse_grid("-9:9:181", 1)?,
        (None, _) => parse_grid("-9:9:37", dim)?,
    };

    let split = read_split(&diag_path)?;
    if split.role == Some(SplitRole::Calibration) {
        return Err(freb::Error::Provenance(format!("{} is marked as calibration data", diag_path.display())).into());
    }
    let diag = split
        .into_sample_set()
        .with_context(|| format!("reading {}", diag_path.display()))?;
    if let Some(m) = &p.model {
        check_overlap(&diag, m)?;
    }

    let set_grid = grid_or_default(a.grid.as_deref(), dim)?;
    let rule: Box<dyn MembershipRule + '_> = match (&p.model, p.method) {
        (Some(Loaded::Rejection(m)), Method::Pvalue) => Box::new(PvalueRule {
            model: m,
            statistic: p.statistic.as_ref(),
            alpha: p.alpha,
        }),
        (Some(Loaded::Critval(m)), Method::Critval) => Box::new(CritvalRule {
            model: m,
            statistic: p.statistic.as_ref(),
        }),
        _ => Box::new(HpdRule {
            posterior: p.statistic.as_ref(),
            grid: &set_grid,
            credibility: 1.0 - p.alpha,
        }),
    };
    let records = coverage_indicators(&diag, rule.as_ref())?;
    let model = fit_coverage_model(
        &records,
        &KnnConfig {
            k: a.coverage_k,
            ..KnnConfig::default()
        },
    )?;
    let report = coverage_map(&model, &cov_grid, nominal)?;
    if report.estimates.iter().any(|e| !e.is_finite()) {
        return Err(crate::exit::NumericalError("coverage estimate is not finite".into()).into());
    }
    report.save_csv(&g.out.join("coverage.csv"), Some(&format!("config_hash: {hash}")))?;

    let regions = report.flagged_regions();
    println!(
        "{} alpha={}: {} of {} grid points flagged against nominal {} (B''={}, k={})",
        method_name(p.method),
        p.alpha,
        report.flagged_count(),
        cov_grid.len(),
        nominal,
        report.sample_count,
        report.neighbors
    );
    for r in &regions {
        println!(
            "{} {} .. {}: {} points, estimate {:.4} .. {:.4}",
            r.flag.as_str(),
            point(&r.first),
            point(&r.last),
            r.points,
            r.min_estimate,
            r.max_estimate
        );
    }
    Ok(())
}
