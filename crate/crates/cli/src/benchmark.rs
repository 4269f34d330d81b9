// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use anyhow::Result;
use clap::Args;
use freb::benchmarks::{Scenario, ScenarioName};
use freb::io::write_split_csv;
use freb::sample::SplitRole;
use serde::{Deserialize, Serialize};

use crate::common::{parse_scenario, require};
use crate::config::{write_json, Provenance};
use crate::Globals;

pub const KEYS: &[&str] = &["scenario", "train-size", "calibration-size", "diagnostic-size"];

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct BenchmarkArgs {
    /// Study to draw: gauss1d or gmm2d.
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Option<ScenarioName>,

    /// Override the number of training rows.
    #[arg(long)]
    pub train_size: Option<usize>,

    /// Override B′, the number of calibration rows.
    #[arg(long)]
    pub calibration_size: Option<usize>,

    /// Override B″, the number of diagnostic rows.
    #[arg(long)]
    pub diagnostic_size: Option<usize>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: String,
    scenario: &'a Scenario,
    files: BTreeMap<&'static str, String>,
}

pub fn run(g: &Globals, flags: &BenchmarkArgs) -> Result<()> {
    let a = g.config.fill(flags)?;
    let name = *require(&a.scenario, "scenario")?;
    let mut scenario = Scenario::by_name(name, g.seed);
    if let Some(n) = a.train_size {
        scenario.sizes.train = n;
    }
    if let Some(n) = a.calibration_size {
        scenario.sizes.calibration = n;
    }
    if let Some(n) = a.diagnostic_size {
        scenario.sizes.diagnostic = n;
    }
    scenario
        .validate()
        .map_err(|e| crate::exit::usage(format!("scenario: {e}")))?;
    let hash = Provenance::new("benchmark", g.seed, &a, &[])?.hash();

    let mut meta = BTreeMap::new();
    meta.insert("config_hash".to_string(), hash.clone());
    meta.insert("scenario".to_string(), name.to_string());
    meta.insert("seed".to_string(), g.seed.to_string());
    let mut files = BTreeMap::new();
    for role in [SplitRole::Train, SplitRole::Calibration, SplitRole::Diagnostic, SplitRole::Target] {
        let set = scenario.sample_split(role)?;
        let file = format!("{}.csv", role.as_str());
        write_split_csv(&g.out.join(&file), &set, &meta)?;
        log::info!("wrote {} rows to {file}", set.len());
        files.insert(role.as_str(), file);
    }
    write_json(
        &g.out.join("scenario.json"),
        &Manifest {
            config_hash: hash,
            scenario: &scenario,
            files,
        },
    )
}
