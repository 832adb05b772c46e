//! Instance files: strict JSON input.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use pseudo_mot::fitzpatrick::{mcshane_maximal_extension, GridConfig, MonotoneSet};
use pseudo_mot::linalg::Matrix;
use pseudo_mot::measures::{Cluster, DiscreteMeasure, MartingalePlan};
use pseudo_mot::space::SSpace;
use pseudo_mot::Tolerances;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
    #[serde(rename = "Sigma", default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<MeasureSpec>,
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub g: Option<SetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Vec<ClusterSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ConfigSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub atoms: Vec<Vec<f64>>,
    /// Uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSpec {
    Finite {
        points: Vec<Vec<f64>>,
    },
    Affine {
        x0: Vec<f64>,
        #[serde(rename = "P")]
        p: Vec<Vec<f64>>,
        /// Require the strict conditions (maximal set, unique projections).
        #[serde(default = "yes")]
        strict: bool,
    },
    /// McShane extension of S-monotone points, one negative direction.
    LipschitzGraph {
        points: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nodes_per_axis: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inflation: Option<f64>,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub x: Vec<f64>,
    pub p: f64,
    /// `[atom index, mass]` pairs.
    pub assignment: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_clusters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_atom_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fractional_split: Option<bool>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tolerances: BTreeMap<String, f64>,
}

impl InstanceFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("invalid instance {}: {e}", path.display())))
    }

    pub fn space(&self, tol: &Tolerances) -> Result<SSpace, CliError> {
        let s = matrix("S", &self.s)?;
        Ok(SSpace::with_tolerances(s, tol)?)
    }

    pub fn sigma(&self) -> Result<Matrix, CliError> {
        match &self.sigma {
            Some(rows) => matrix("Sigma", rows),
            None => Err(CliError::validation("instance has no Sigma")),
        }
    }

    pub fn measure(&self) -> Result<DiscreteMeasure, CliError> {
        let spec = self.nu.as_ref().ok_or_else(|| CliError::validation("instance has no nu"))?;
        let measure = match &spec.weights {
            Some(w) => DiscreteMeasure::new(spec.atoms.clone(), w.clone())?,
            None => DiscreteMeasure::uniform(spec.atoms.clone())?,
        };
        Ok(measure)
    }

    pub fn set(&self, sp: &SSpace, tol: &Tolerances) -> Result<MonotoneSet, CliError> {
        let spec = self.g.as_ref().ok_or_else(|| CliError::validation("instance has no G"))?;
        spec.build(sp, tol)
    }

    pub fn plan(&self) -> Result<MartingalePlan, CliError> {
        let spec = self.plan.as_ref().ok_or_else(|| CliError::validation("instance has no plan"))?;
        Ok(MartingalePlan::from_clusters(
            spec.iter()
                .map(|c| Cluster {
                    x: c.x.clone(),
                    p: c.p,
                    assignment: c.assignment.clone(),
                })
                .collect(),
        ))
    }
}

impl SetSpec {
    pub fn build(&self, sp: &SSpace, tol: &Tolerances) -> Result<MonotoneSet, CliError> {
        let set = match self {
            SetSpec::Finite { points } => MonotoneSet::finite(sp, points.clone(), tol)?,
            SetSpec::Affine { x0, p, strict } => {
                let p = matrix("P", p)?;
                if *strict {
                    MonotoneSet::affine(sp, x0.clone(), p, tol)?
                } else {
                    MonotoneSet::affine_relaxed(sp, x0.clone(), p, tol)?
                }
            }
            SetSpec::LipschitzGraph {
                points,
                nodes_per_axis,
                inflation,
            } => {
                let mut grid = GridConfig::default();
                if let Some(n) = nodes_per_axis {
                    grid.nodes_per_axis = *n;
                }
                if let Some(v) = inflation {
                    grid.inflation = *v;
                }
                mcshane_maximal_extension(sp, points, grid, tol)?
            }
        };
        Ok(set)
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<Matrix, CliError> {
    Matrix::from_rows(rows).map_err(|e| CliError::validation(format!("{name}: {e}")))
}

pub fn plan_spec(plan: &MartingalePlan) -> Vec<ClusterSpec> {
    plan.clusters()
        .iter()
        .map(|c| ClusterSpec {
            x: c.x.clone(),
            p: c.p,
            assignment: c.assignment.clone(),
        })
        .collect()
}

/// Report form of a set. Graphs are not echoed.
pub fn set_spec(set: &MonotoneSet) -> Option<SetSpec> {
    match set {
        MonotoneSet::Finite(points) => Some(SetSpec::Finite { points: points.clone() }),
        MonotoneSet::Affine(a) => Some(SetSpec::Affine {
            x0: a.x0.clone(),
            p: a.p.to_rows(),
            strict: a.strict,
        }),
        MonotoneSet::Graph(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tagged_sets_and_defaults() {
        let inst: InstanceFile = serde_json::from_str(
            r#"{"S": [[1, 0], [0, -1]], "G": {"type": "affine", "x0": [0, 0], "P": [[1, 0], [0, 0]]},
                "nu": {"atoms": [[1, 0], [-1, 0]]}, "config": {"seed": 3, "tolerances": {"gap": 1e-7}}}"#,
        )
        .unwrap();
        assert!(matches!(inst.g, Some(SetSpec::Affine { strict: true, .. })));
        assert_eq!(inst.measure().unwrap().weights(), &[0.5, 0.5]);
        let tol = Tolerances::default();
        let sp = inst.space(&tol).unwrap();
        assert!(inst.set(&sp, &tol).unwrap().is_known_maximal(&sp));
    }

    #[test]
    fn rejects_unknown_keys_everywhere() {
        for text in [
            r#"{"S": [[1]], "bogus": 0}"#,
            r#"{"S": [[1]], "nu": {"atoms": [[0]], "mass": [1]}}"#,
            r#"{"S": [[1]], "G": {"type": "finite", "points": [[0]], "extra": 1}}"#,
            r#"{"S": [[1]], "G": {"type": "sphere"}}"#,
            r#"{"S": [[1]], "config": {"restart": 3}}"#,
        ] {
            assert!(serde_json::from_str::<InstanceFile>(text).is_err(), "{text}");
        }
    }

    #[test]
    fn non_square_s_is_a_validation_error() {
        let inst: InstanceFile = serde_json::from_str(r#"{"S": [[1, 0]]}"#).unwrap();
        assert_eq!(inst.space(&Tolerances::default()).unwrap_err().code, crate::EXIT_VALIDATION);
    }
}
