//! Report files: the machine-readable output of the bound and safety
//! commands, and the input of the plot-data command.
//!
//! A report carries everything needed to reuse a solve without repeating it:
//! the bound and solver statistics, the dual certificate (with the
//! coordinate scaling it lives in), the recovered candidate point in user
//! coordinates, and enough provenance (problem path, seed) to regenerate
//! trajectory overlays deterministically.

use crate::model::Normalization;
use crate::problem::{poly_to_terms, TermFile};
use crate::recovery::RecoveredPoint;
use crate::relaxation::Certificate;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid report JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema {found:?}, this build reads {:?}", crate::problem::SCHEMA)]
    Schema { found: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub schema: String,
    pub name: String,
    /// Problem file the report was computed from, as given on the command
    /// line; lets later commands regenerate trajectories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    pub order: u32,
    pub backend: String,
    pub bound: f64,
    /// `sqrt(bound)` in the requested unit, when the problem asks for it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sqrt_bound: Option<f64>,
    pub status: String,
    /// Safety commands only: "certified safe" iff the bound is negative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
    pub solve_stats: SolveStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovered: Option<RecoveredFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub liouville: Option<LiouvilleCheck>,
    /// Sampler settings for deterministic regeneration.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveStats {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub relative_gap: f64,
    pub solve_seconds: f64,
}

/// Dual certificate in the coordinates the relaxation was built in; the
/// scaling block maps them back to user coordinates.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateFile {
    pub gamma: f64,
    /// Discrete per-step decrease allowance; absent in continuous time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// `gamma + n * alpha` over `n` steps, else `gamma`.
    pub dual_bound: f64,
    pub v: Vec<TermFile>,
    /// Convex weights over objective components; `[1]` unless maximin.
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingFile {
    pub time_scale: f64,
    pub x_center: Vec<f64>,
    pub x_half: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveredFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub rank_indicator: f64,
    pub accepted: bool,
    pub objective_gap: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub w: Vec<Option<Vec<f64>>>,
}

/// Output of the sampling command: just provenance and the empirical side.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryFile {
    pub schema: String,
    pub name: String,
    pub seed: u64,
    pub sampling: SamplingSummary,
}

impl SummaryFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summaries always serialize")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSummary {
    pub num: usize,
    pub empirical_max: f64,
    /// `bound - empirical_max`; present when the bound is known. At least
    /// `-1e-6` for a sound bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
}

/// Balance-row residual of one sampled trajectory's empirical moments.
/// Discrete sums telescope, so `residual` alone decides; continuous
/// residuals are quadrature-limited, so the step-halved rerun and the
/// first-order ratio decide instead.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiouvilleCheck {
    pub residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halved_step_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    pub pass: bool,
}

impl ReportFile {
    pub fn from_path(path: &Path) -> Result<ReportFile, ReportError> {
        let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let report: ReportFile = serde_json::from_str(&text)?;
        if report.schema != crate::problem::SCHEMA {
            return Err(ReportError::Schema {
                found: report.schema,
            });
        }
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}

impl CertificateFile {
    pub fn new(cert: &Certificate, discrete: bool, norm: &Normalization) -> CertificateFile {
        CertificateFile {
            gamma: cert.gamma,
            alpha: discrete.then_some(cert.time_dual),
            dual_bound: cert.dual_bound,
            v: poly_to_terms(&cert.v),
            beta: cert.beta.clone(),
            scaling: (!norm.is_identity()).then(|| ScalingFile {
                time_scale: norm.time_scale,
                x_center: norm.x_center.clone(),
                x_half: norm.x_half.clone(),
            }),
        }
    }
}

impl RecoveredFile {
    /// Recovered point mapped back to user coordinates.
    pub fn new(point: &RecoveredPoint, norm: &Normalization) -> RecoveredFile {
        RecoveredFile {
            t: point.t_star.map(|t| norm.t_from_scaled(t)),
            x: norm.x_from_scaled(&point.x_star),
            theta: point.theta_star.clone(),
            rank_indicator: point.rank_indicator,
            accepted: point.accepted,
            objective_gap: point.objective_gap,
            w: point.w_star.clone(),
        }
    }
}
