// SPDX-License-Identifier: Apache-2.0

//! CSV files for labeled splits and pre-computed statistic tables.
//!
//! Split files carry a header `split,theta_1..theta_d,x_1..x_m`. Leading
//! lines starting with `#` hold `key: value` provenance entries. Floats are
//! written with 17 significant digits so they survive a round trip through
//! any IEEE-754 parser.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sample::{LabeledSample, SampleSet, SplitRole};
use crate::statistics::{Observation, ParameterPoint, TabulatedStatistic};

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Contents of a split CSV. Unlike [`SampleSet`] it may hold zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitFile {
    pub role: Option<SplitRole>,
    pub theta_dim: usize,
    pub obs_dim: usize,
    pub rows: Vec<LabeledSample>,
    pub metadata: BTreeMap<String, String>,
}

impl SplitFile {
    pub fn into_sample_set(self) -> Result<SampleSet> {
        let role = self
            .role
            .ok_or_else(|| Error::invalid("split file has no role"))?;
        let set = SampleSet::new(role, self.rows)?;
        Ok(match self.metadata.get("reference") {
            Some(r) => set.with_reference(r.clone()),
            None => set,
        })
    }
}

fn write_comments<W: Write>(out: &mut W, metadata: &BTreeMap<String, String>) -> std::io::Result<()> {
    for (k, v) in metadata {
        writeln!(out, "# {k}: {}", v.replace('\n', " "))?;
    }
    Ok(())
}

fn split_comments(text: &str) -> (BTreeMap<String, String>, usize, &str) {
    let mut metadata = BTreeMap::new();
    let mut rest = text;
    let mut skipped = 0;
    while let Some(line) = rest.strip_prefix('#') {
        let (line, tail) = line.split_once('\n').unwrap_or((line, ""));
        if let Some((k, v)) = line.split_once(':') {
            metadata.insert(k.trim().to_string(), v.trim().to_string());
        }
        rest = tail;
        skipped += 1;
    }
    (metadata, skipped, rest)
}

pub fn write_split_csv(path: &Path, set: &SampleSet, metadata: &BTreeMap<String, String>) -> Result<()> {
    let mut meta = metadata.clone();
    meta.insert("split".into(), set.role().to_string());
    if let Some(r) = set.reference() {
        meta.insert("reference".into(), r.to_string());
    }
    let mut buf = Vec::new();
    write_comments(&mut buf, &meta).map_err(|e| Error::io(path, e))?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["split".to_string()];
        header.extend((1..=set.theta_dim()).map(|i| format!("theta_{i}")));
        header.extend((1..=set.obs_dim()).map(|i| format!("x_{i}")));
        w.write_record(&header)?;
        for row in set.iter() {
            let mut rec = vec![set.role().to_string()];
            rec.extend(row.theta.coords().iter().map(|v| format_float(*v)));
            rec.extend(row.x.values().iter().map(|v| format_float(*v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn parse_float(path: &Path, row: usize, field: &str, column: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Malformed {
        path: path.to_path_buf(),
        row,
        reason: format!("column {column}: cannot parse {field:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            row,
            reason: format!("column {column}: non-finite value {field:?}"),
        });
    }
    Ok(v)
}

fn malformed(path: &Path, row: usize, reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        row,
        reason: reason.into(),
    }
}

/// Reads a split CSV. Row numbers in errors count data rows from 1.
pub fn read_split_csv(path: &Path) -> Result<SplitFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (metadata, _, body) = split_comments(&text);
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(body.as_bytes());
    let header = reader.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.first() != Some(&"split") {
        return Err(malformed(path, 0, "header must start with `split`"));
    }
    let theta_cols: Vec<&str> = names.iter().copied().filter(|n| n.starts_with("theta_")).collect();
    let x_cols: Vec<&str> = names.iter().copied().filter(|n| n.starts_with("x_")).collect();
    if theta_cols.is_empty() || x_cols.is_empty() || 1 + theta_cols.len() + x_cols.len() != names.len() {
        return Err(malformed(path, 0, "header must be split,theta_1..theta_d,x_1..x_m"));
    }
    let (theta_dim, obs_dim) = (theta_cols.len(), x_cols.len());
    let mut role = match metadata.get("split") {
        Some(s) => Some(s.parse::<SplitRole>()?),
        None => None,
    };
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| malformed(path, row, e.to_string()))?;
        if rec.len() != names.len() {
            return Err(malformed(
                path,
                row,
                format!("expected {} fields, found {}", names.len(), rec.len()),
            ));
        }
        let r: SplitRole = rec[0].trim().parse().map_err(|e: Error| malformed(path, row, e.to_string()))?;
        match role {
            Some(expected) if expected != r => {
                return Err(malformed(path, row, format!("split {r} in a {expected} file")));
            }
            _ => role = Some(r),
        }
        let theta = (0..theta_dim)
            .map(|j| parse_float(path, row, &rec[1 + j], theta_cols[j]))
            .collect::<Result<Vec<_>>>()?;
        let x = (0..obs_dim)
            .map(|j| parse_float(path, row, &rec[1 + theta_dim + j], x_cols[j]))
            .collect::<Result<Vec<_>>>()?;
        rows.push(LabeledSample {
            theta: ParameterPoint::new(theta)?,
            x: Observation::new(x)?,
        });
    }
    Ok(SplitFile {
        role,
        theta_dim,
        obs_dim,
        rows,
        metadata,
    })
}

/// Reads a statistic table with columns `theta_1..theta_d,x_id,lambda`.
pub fn read_statistic_table(path: &Path) -> Result<TabulatedStatistic> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (_, _, body) = split_comments(&text);
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(body.as_bytes());
    let header = reader.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    let d = names.len().saturating_sub(2);
    let ok = d >= 1
        && names[..d].iter().enumerate().all(|(i, n)| *n == format!("theta_{}", i + 1))
        && names[d] == "x_id"
        && names[d + 1] == "lambda";
    if !ok {
        return Err(malformed(path, 0, "header must be theta_1..theta_d,x_id,lambda"));
    }
    let mut table = TabulatedStatistic::new(d);
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| malformed(path, row, e.to_string()))?;
        if rec.len() != names.len() {
            return Err(malformed(path, row, format!("expected {} fields, found {}", names.len(), rec.len())));
        }
        let theta = (0..d)
            .map(|j| parse_float(path, row, &rec[j], names[j]))
            .collect::<Result<Vec<_>>>()?;
        let id: u64 = rec[d]
            .trim()
            .parse()
            .map_err(|_| malformed(path, row, format!("x_id {:?} is not a non-negative integer", &rec[d])))?;
        let lambda = parse_float(path, row, &rec[d + 1], "lambda")?;
        table
            .insert(id, &theta, lambda)
            .map_err(|e| malformed(path, row, e.to_string()))?;
    }
    Ok(table)
}

/// Writes a statistic table in the format read by [`read_statistic_table`].
pub fn write_statistic_table(path: &Path, theta_dim: usize, rows: &[(Vec<f64>, u64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=theta_dim).map(|i| format!("theta_{i}")).collect();
    header.push("x_id".into());
    header.push("lambda".into());
    w.write_record(&header)?;
    for (theta, id, lambda) in rows {
        let mut rec: Vec<String> = theta.iter().map(|v| format_float(*v)).collect();
        rec.push(id.to_string());
        rec.push(format_float(*lambda));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
