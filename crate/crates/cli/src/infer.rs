// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use freb::benchmarks::ScenarioName;
use freb::calibration::{CriticalValueModel, ModelArtifact, ModelKind, RejectionProbabilityModel};
use freb::confidence::{hpd_set, CriticalValueSurface, PvalueSurface};
use freb::io::format_float;
use freb::statistics::TestStatistic;
use freb::{set_size, ParameterSet};
use serde::{Deserialize, Serialize};

use crate::common::{builtin_statistic, check_alpha, grid_or_default, parse_scenario, read_split, require, Method};
use crate::config::Provenance;
use crate::exit::usage;
use crate::Globals;

pub const KEYS: &[&str] = &["model", "targets", "method", "alpha", "statistic", "grid"];

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct InferArgs {
    /// Model artifact written by `calibrate` (not needed for hpd).
    #[arg(long)]
    pub model: Option<PathBuf>,

    /// Split CSV of target observations with their true parameters.
    #[arg(long)]
    pub targets: Option<PathBuf>,

    /// Set construction (default: the model's route, or hpd without a model).
    #[arg(long, value_enum)]
    pub method: Option<Method>,

    /// Miscoverage level; hpd sets use credibility 1 − alpha (default 0.1,
    /// or the level a critical-value model was fitted at).
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Built-in statistic (default: the one recorded in the model).
    #[arg(long, value_parser = parse_scenario)]
    pub statistic: Option<ScenarioName>,

    /// Parameter grid LOWER:UPPER:COUNT on every axis (default
    /// -10:10:2001 in 1D, -10:10:201 in 2D).
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
}

/// A fitted model of either kind.
pub enum Loaded {
    Rejection(RejectionProbabilityModel),
    Critval(CriticalValueModel),
}

impl Loaded {
    pub fn load(path: &PathBuf) -> Result<Self> {
        let artifact = ModelArtifact::load(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(match artifact.kind {
            ModelKind::RejectionProbability => Loaded::Rejection(RejectionProbabilityModel::from_artifact(artifact)?),
            ModelKind::CriticalValue => Loaded::Critval(CriticalValueModel::from_artifact(artifact)?),
        })
    }

    pub fn method(&self) -> Method {
        match self {
            Loaded::Rejection(_) => Method::Pvalue,
            Loaded::Critval(_) => Method::Critval,
        }
    }

    pub fn statistic(&self) -> Option<&str> {
        match self {
            Loaded::Rejection(m) => m.metadata().get("statistic"),
            Loaded::Critval(m) => m.metadata().get("statistic"),
        }
        .map(String::as_str)
    }

    pub fn theta_dim(&self) -> usize {
        match self {
            Loaded::Rejection(m) => m.theta_dim(),
            Loaded::Critval(m) => m.theta_dim(),
        }
    }

    pub fn calibration_thetas(&self) -> &[f64] {
        match self {
            Loaded::Rejection(m) => m.calibration_thetas(),
            Loaded::Critval(m) => m.calibration_thetas(),
        }
    }
}

/// Flags shared by `infer` and `diagnose` after defaults are applied.
pub struct SetPlan {
    pub model: Option<Loaded>,
    pub method: Method,
    pub alpha: f64,
    pub statistic: Box<dyn TestStatistic>,
}

pub fn plan(
    model_path: Option<&PathBuf>,
    method: Option<Method>,
    alpha: Option<f64>,
    statistic: Option<ScenarioName>,
) -> Result<SetPlan> {
    let model = model_path.map(Loaded::load).transpose()?;
    let method = match (method, &model) {
        (Some(m), _) => m,
        (None, Some(l)) => l.method(),
        (None, None) => Method::Hpd,
    };
    if let Some(kind) = method.needs_model() {
        match &model {
            None => return Err(usage(format!("method {method:?} needs --model").to_lowercase())),
            Some(l) if l.method() != method => {
                return Err(usage(format!(
                    "model is a {:?} artifact, method {:?} needs {kind:?}",
                    l.method(),
                    method
                )))
            }
            _ => {}
        }
    }
    let alpha = match (&model, method) {
        (Some(Loaded::Critval(m)), Method::Critval) => {
            let a = alpha.unwrap_or(m.alpha());
            if (a - m.alpha()).abs() > 1e-12 {
                return Err(usage(format!("critical values were fitted at alpha = {}, requested {a}", m.alpha())));
            }
            a
        }
        _ => alpha.unwrap_or(0.1),
    };
    check_alpha(alpha)?;
    let name = match (statistic, model.as_ref().and_then(Loaded::statistic)) {
        (Some(s), _) => s,
        (None, Some("table")) => {
            return Err(usage("model was calibrated from a statistic table; pass --statistic to evaluate new data"))
        }
        (None, Some(s)) => s.parse().map_err(|e: freb::Error| usage(e.to_string()))?,
        (None, None) => return Err(usage("missing --statistic")),
    };
    let statistic = builtin_statistic(name)?;
    if let Some(l) = &model {
        if l.theta_dim() != statistic.theta_dim() {
            return Err(freb::Error::InvalidInput(format!(
                "model has parameter dimension {}, statistic {name} has {}",
                l.theta_dim(),
                statistic.theta_dim()
            ))
            .into());
        }
    }
    Ok(SetPlan {
        model,
        method,
        alpha,
        statistic,
    })
}

pub fn method_name(m: Method) -> &'static str {
    match m {
        Method::Pvalue => "pvalue",
        Method::Critval => "critval",
        Method::Hpd => "hpd",
    }
}

pub fn run(g: &Globals, flags: &InferArgs) -> Result<()> {
    let a = g.config.fill(flags)?;
    let targets_path = require(&a.targets, "targets")?.clone();
    let mut inputs = vec![("targets", &targets_path)];
    if let Some(m) = &a.model {
        inputs.push(("model", m));
    }
    let hash = Provenance::new("infer", g.seed, &a, &inputs)?.hash();
    let p = plan(a.model.as_ref(), a.method, a.alpha, a.statistic)?;
    let grid = grid_or_default(a.grid.as_deref(), p.statistic.theta_dim())?;
    let targets = read_split(&targets_path)?;
    if !targets.rows.is_empty() && (targets.theta_dim != grid.dim() || targets.obs_dim != p.statistic.obs_dim()) {
        return Err(freb::Error::InvalidInput(format!(
            "targets have dimensions ({}, {}), the statistic expects ({}, {})",
            targets.theta_dim,
            targets.obs_dim,
            grid.dim(),
            p.statistic.obs_dim()
        ))
        .into());
    }

    let build: Box<dyn Fn(&freb::Observation) -> freb::Result<ParameterSet>> = match (&p.model, p.method) {
        (Some(Loaded::Rejection(m)), Method::Pvalue) => {
            let surface = PvalueSurface::new(m, &grid)?;
            if surface.any_extrapolated() {
                log::info!("part of the grid lies outside the calibration data; p-values there are extrapolated");
            }
            let (stat, alpha) = (p.statistic.as_ref(), p.alpha);
            Box::new(move |x| surface.set(stat, x, alpha))
        }
        (Some(Loaded::Critval(m)), Method::Critval) => {
            let surface = CriticalValueSurface::new(m, &grid)?;
            if surface.any_extrapolated() {
                log::info!("part of the grid lies outside the calibration data; critical values there are extrapolated");
            }
            let stat = p.statistic.as_ref();
            Box::new(move |x| surface.set(stat, x))
        }
        _ => {
            let (stat, grid, cred) = (p.statistic.as_ref(), &grid, 1.0 - p.alpha);
            Box::new(move |x| hpd_set(stat, x, grid, cred))
        }
    };

    let sets_dir = g.out.join("sets");
    fs::create_dir_all(&sets_dir).with_context(|| format!("creating {}", sets_dir.display()))?;
    let mut summary = format!("# config_hash: {hash}\ntarget_id,route,alpha,set_size,contains_truth\n");
    for (id, row) in targets.rows.iter().enumerate() {
        let set = build(&row.x)?;
        let size = set_size(&set);
        if !size.is_finite() {
            return Err(crate::exit::NumericalError(format!("target {id}: non-finite set size")).into());
        }
        let mut file = set.to_file();
        file.metadata.insert("config_hash".into(), hash.clone());
        file.metadata.insert("target_id".into(), id.to_string());
        file.metadata.insert(
            "x".into(),
            row.x.values().iter().map(|v| format_float(*v)).collect::<Vec<_>>().join(" "),
        );
        file.save(&sets_dir.join(format!("target_{id}.json")))?;
        summary.push_str(&format!(
            "{id},{},{},{},{}\n",
            method_name(p.method),
            format_float(p.alpha),
            format_float(size),
            set.contains(row.theta.coords())
        ));
    }
    let path = g.out.join("summary.csv");
    let mut f = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
    f.write_all(summary.as_bytes())?;
    log::info!("built {} sets", targets.rows.len());
    Ok(())
}
