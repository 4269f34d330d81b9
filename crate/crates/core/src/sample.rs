// SPDX-License-Identifier: Apache-2.0

//! Labeled `(θ, x)` samples and their split provenance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statistics::{Observation, ParameterPoint};

/// Which stage of the pipeline a sample set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Calibration,
    Diagnostic,
    Target,
}

impl SplitRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitRole::Train => "train",
            SplitRole::Calibration => "calibration",
            SplitRole::Diagnostic => "diagnostic",
            SplitRole::Target => "target",
        }
    }

    /// Stream index used when deriving the per-split random stream.
    pub fn stream(self) -> u64 {
        match self {
            SplitRole::Train => 0,
            SplitRole::Calibration => 1,
            SplitRole::Diagnostic => 2,
            SplitRole::Target => 3,
        }
    }
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitRole::Train),
            "calibration" | "cal" => Ok(SplitRole::Calibration),
            "diagnostic" | "diag" => Ok(SplitRole::Diagnostic),
            "target" => Ok(SplitRole::Target),
            other => Err(Error::invalid(format!("unknown split role {other:?}"))),
        }
    }
}

/// One labeled pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub theta: ParameterPoint,
    pub x: Observation,
}

/// A homogeneous collection of labeled samples from a single split.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    role: SplitRole,
    theta_dim: usize,
    obs_dim: usize,
    rows: Vec<LabeledSample>,
    reference: Option<String>,
}

impl SampleSet {
    pub fn new(role: SplitRole, rows: Vec<LabeledSample>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::invalid(format!("{role} sample set is empty")))?;
        let (theta_dim, obs_dim) = (first.theta.dim(), first.x.dim());
        for (i, row) in rows.iter().enumerate() {
            if row.theta.dim() != theta_dim || row.x.dim() != obs_dim {
                return Err(Error::invalid(format!(
                    "{role} row {i} has dimensions ({}, {}), expected ({theta_dim}, {obs_dim})",
                    row.theta.dim(),
                    row.x.dim()
                )));
            }
        }
        Ok(Self {
            role,
            theta_dim,
            obs_dim,
            rows,
            reference: None,
        })
    }

    /// Builds a set from parallel coordinate vectors.
    pub fn from_vecs(role: SplitRole, thetas: Vec<Vec<f64>>, xs: Vec<Vec<f64>>) -> Result<Self> {
        if thetas.len() != xs.len() {
            return Err(Error::invalid(format!(
                "{} parameters but {} observations",
                thetas.len(),
                xs.len()
            )));
        }
        let rows = thetas
            .into_iter()
            .zip(xs)
            .map(|(t, x)| {
                Ok(LabeledSample {
                    theta: ParameterPoint::new(t)?,
                    x: Observation::new(x)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(role, rows)
    }

    /// Attaches a description of the reference distribution `r(θ)`.
    pub fn with_reference(mut self, reference: impl Into<String>) -> Self {
        self.reference = Some(reference.into());
        self
    }

    pub fn role(&self) -> SplitRole {
        self.role
    }

    pub fn reference(&self) -> Option<&str> {
        self.reference.as_deref()
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[LabeledSample] {
        &self.rows
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabeledSample> {
        self.rows.iter()
    }

    pub(crate) fn require_role(&self, expected: SplitRole, operation: &str) -> Result<()> {
        if self.role == expected {
            Ok(())
        } else {
            Err(Error::Provenance(format!(
                "{operation} requires a {expected} set, got a {} set",
                self.role
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_ragged_sets() {
        assert!(SampleSet::new(SplitRole::Calibration, vec![]).is_err());
        let ragged = SampleSet::from_vecs(
            SplitRole::Calibration,
            vec![vec![0.0], vec![0.0, 1.0]],
            vec![vec![1.0], vec![1.0]],
        );
        assert!(matches!(ragged, Err(Error::InvalidInput(_))));
        let unequal = SampleSet::from_vecs(SplitRole::Calibration, vec![vec![0.0]], vec![]);
        assert!(unequal.is_err());
    }

    #[test]
    fn role_round_trips_through_strings() {
        for role in [SplitRole::Train, SplitRole::Calibration, SplitRole::Diagnostic, SplitRole::Target] {
            assert_eq!(role.as_str().parse::<SplitRole>().unwrap(), role);
        }
        assert!("holdout".parse::<SplitRole>().is_err());
    }

    #[test]
    fn role_check_reports_provenance() {
        let set = SampleSet::from_vecs(SplitRole::Diagnostic, vec![vec![0.0]], vec![vec![1.0]]).unwrap();
        assert!(set.require_role(SplitRole::Diagnostic, "x").is_ok());
        assert!(matches!(
            set.require_role(SplitRole::Calibration, "fit"),
            Err(Error::Provenance(_))
        ));
    }
}
