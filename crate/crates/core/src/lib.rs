// SPDX-License-Identifier: Apache-2.0

//! Frequentist calibration of posterior-based test statistics.
//!
//! Given any statistic `λ(x; θ)` that rejects for small values (typically a
//! posterior density), this crate estimates its sampling distribution
//! `F(t; θ) = P(λ(X; θ) ≤ t | θ)` across the whole parameter space from one
//! labeled calibration set, and turns it into
//!
//! * amortized p-values `ĥ(x; θ) = F̂(λ(x; θ); θ)` and confidence sets
//!   `{θ : ĥ(x; θ) > α}`,
//! * critical values `t̂_θ` and confidence sets `{θ : λ(x; θ) > t̂_θ}`,
//! * local coverage maps estimated from an independent diagnostic set.
//!
//! The [`benchmarks`] module provides a 1D Gaussian and a 2D Gaussian-mixture
//! study with exact posteriors and closed-form oracles.

pub mod benchmarks;
pub mod calibration;
pub mod confidence;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod io;
pub mod knn;
pub mod sample;
pub mod statistics;

pub use calibration::{
    augment_pairs, build_augmented_set, collect_statistics, critical_value, fit_quantile_model,
    fit_rejection_from_arrays, fit_rejection_model, pvalue, CalibrationPair, CriticalValueModel, CriticalValues,
    Estimate, KnnConfig, LocalFit, ModelArtifact, RejectionProbability, RejectionProbabilityModel,
};
pub use confidence::{freb_set_critval, freb_set_pvalue, hpd_set, set_size, ParameterSet, SetRoute};
pub use diagnostics::{coverage_indicators, coverage_map, fit_coverage_model, CoverageReport, DiagnosticRecord};
pub use error::{Error, Result};
pub use grid::ParameterGrid;
pub use sample::{LabeledSample, SampleSet, SplitRole};
pub use statistics::{evaluate_statistic, Observation, ParameterPoint, TestStatistic};
