//! Report files: the JSON written by `gaussian`, `solve` and `certify`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use pseudo_mot::checks::Check;
use pseudo_mot::Tolerances;

use crate::instance::{ClusterSpec, SetSpec};
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub version: String,
    pub command: String,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    pub timestamp: u64,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primal_value: Option<f64>,
    /// Absent when the dual is `+inf` or was not evaluated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
    pub checks: Vec<CheckRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Vec<ClusterSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set: Option<SetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian: Option<GaussianRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine_candidate: Option<CandidateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckRecord {
    pub name: String,
    pub passed: bool,
    /// Absent for non-finite diagnostics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub tolerance: f64,
}

impl From<&Check> for CheckRecord {
    fn from(c: &Check) -> Self {
        CheckRecord {
            name: c.name.clone(),
            passed: c.passed,
            value: c.value.is_finite().then_some(c.value),
            tolerance: c.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianRecord {
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    /// Generalized eigenvectors as columns.
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub index: usize,
    pub pca: Vec<PcaRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaRecord {
    pub eigenvalue: f64,
    pub direction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverRecord {
    /// `exact` or `local`.
    pub method: String,
    pub value: f64,
    /// Largest number of clusters the search could use.
    pub cluster_cap: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partitions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_restart: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restart_values: Option<Vec<f64>>,
    /// Dual candidates tried, in order.
    pub candidates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_candidate: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub dual_value: f64,
    pub martingale_residual: f64,
}

impl ReportFile {
    pub fn new(command: &str, seed: u64, tol: &Tolerances) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        ReportFile {
            version: VERSION.to_string(),
            command: command.to_string(),
            timestamp,
            seed,
            tolerances: Tolerances::NAMES
                .iter()
                .map(|n| (n.to_string(), tol.get(n).expect("known name")))
                .collect(),
            primal_value: None,
            dual_value: None,
            gap: None,
            verdict: None,
            checks: Vec::new(),
            plan: None,
            set: None,
            eps: None,
            gaussian: None,
            solver: None,
            affine_candidate: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("reports contain only finite numbers");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::validation(format!("invalid report: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| CliError::validation(format!("cannot write {}: {e}", path.display())))
    }
}
