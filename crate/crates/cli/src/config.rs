//! Run configuration: a single JSON document. Every field has a default so
//! `{}` describes the double-integrator experiment.

use std::path::{Path, PathBuf};

use ddrci::dataset::{ConstraintSets, DisturbanceSet};
use ddrci::sim::{Experiment, SystemModel};
use ddrci::synthesis::{Algorithm, LmiVariant, SynthesisOptions};
use ddrci::verify::VerifyOptions;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    /// True system; needed by `generate` and for the true-model checks.
    pub system: Option<SystemBlock>,
    pub experiment: ExperimentBlock,
    /// `D` with `𝒲 = {w : |Dw| <= 1}`.
    pub disturbance: Rows,
    pub constraints: ConstraintBlock,
    pub template: Rows,
    /// Templates of the complexity sweep.
    pub sweep: Vec<Rows>,
    pub synthesis: SynthesisBlock,
    pub verify: VerifyBlock,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub solution: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub a: Rows,
    pub b: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentBlock {
    pub horizon: usize,
    pub input_amplitude: f64,
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintBlock {
    /// `𝒳 = {x : Hx <= 1}`.
    pub h: Rows,
    /// `𝒰 = {u : Gu <= 1}`.
    pub g: Rows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmArg {
    OneStep,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LmiArg {
    T1,
    T2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisBlock {
    pub algorithm: AlgorithmArg,
    pub lmi: LmiArg,
    pub iters: usize,
    pub det_improvement_tol: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyBlock {
    pub samples: usize,
    pub rollout_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = Experiment::default();
        let cons = ConstraintSets::symmetric_boxes(&[2.0, 2.0], &[2.0]);
        Self {
            seed: 0,
            paths: Paths::default(),
            system: Some(SystemBlock {
                a: rows_of(&e.model.a),
                b: rows_of(&e.model.b),
            }),
            experiment: ExperimentBlock::default(),
            disturbance: rows_of(&e.dist.d),
            constraints: ConstraintBlock {
                h: rows_of(&cons.h),
                g: rows_of(&cons.g),
            },
            template: vec![vec![10.0, 10.0], vec![10.0, 0.0], vec![1.0, 11.0]],
            sweep: vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![20.0, 20.0], vec![-20.0, 0.0], vec![0.0, -25.0]],
                vec![vec![-18.0, -55.0], vec![18.0, 55.0], vec![55.0, -18.0], vec![55.0, 18.0]],
            ],
            synthesis: SynthesisBlock::default(),
            verify: VerifyBlock::default(),
        }
    }
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        let e = Experiment::default();
        Self {
            horizon: e.horizon,
            input_amplitude: e.input_amplitude,
            x0: None,
        }
    }
}

impl Default for SynthesisBlock {
    fn default() -> Self {
        let o = SynthesisOptions::default();
        Self {
            algorithm: AlgorithmArg::OneStep,
            lmi: LmiArg::T2,
            iters: o.max_outer_iterations,
            det_improvement_tol: o.det_improvement_tol,
            solver_tol: o.solver.tol,
            solver_max_iter: o.solver.max_iter,
        }
    }
}

impl Default for VerifyBlock {
    fn default() -> Self {
        let o = VerifyOptions::default();
        Self {
            samples: o.samples,
            rollout_steps: o.rollout_steps,
        }
    }
}

pub fn rows_of(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(name: &str, rows: &Rows) -> Result<DMatrix<f64>, CliError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(CliError::config(format!("{name} is empty")));
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err(CliError::config(format!("{name} has rows of different lengths")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::config(format!("{name} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Matrices of a config after validation.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: Option<SystemModel>,
    pub dist: DisturbanceSet,
    pub cons: ConstraintSets,
    pub template: DMatrix<f64>,
    pub sweep: Vec<DMatrix<f64>>,
    pub x0: DVector<f64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }

    /// SHA-256 of the effective configuration with the seed left out, so
    /// a header's (hash, seed) pair pins the run.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        let text = serde_json::to_string(&c).expect("config serializes");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }

    pub fn synthesis_options(&self) -> SynthesisOptions {
        let s = &self.synthesis;
        let mut o = SynthesisOptions {
            lmi_variant: match s.lmi {
                LmiArg::T1 => LmiVariant::Theorem1,
                LmiArg::T2 => LmiVariant::Theorem2,
            },
            algorithm: match s.algorithm {
                AlgorithmArg::OneStep => Algorithm::OneStep,
                AlgorithmArg::Iterative => Algorithm::Iterative,
            },
            max_outer_iterations: s.iters,
            det_improvement_tol: s.det_improvement_tol,
            ..SynthesisOptions::default()
        };
        o.solver.tol = s.solver_tol;
        o.solver.max_iter = s.solver_max_iter;
        o.solver.seed = self.seed;
        o
    }

    pub fn verify_options(&self) -> VerifyOptions {
        VerifyOptions {
            samples: self.verify.samples,
            rollout_steps: self.verify.rollout_steps,
            seed: self.seed,
            ..VerifyOptions::default()
        }
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let template = matrix("template", &self.template)?;
        let n = template.ncols();
        let d = matrix("disturbance", &self.disturbance)?;
        let h = matrix("constraints.h", &self.constraints.h)?;
        let g = matrix("constraints.g", &self.constraints.g)?;
        if d.ncols() != n || h.ncols() != n {
            return Err(CliError::config(format!(
                "state dimension mismatch: template has {n} columns, disturbance {}, constraints.h {}",
                d.ncols(),
                h.ncols()
            )));
        }
        let model = match &self.system {
            Some(s) => {
                let a = matrix("system.a", &s.a)?;
                let b = matrix("system.b", &s.b)?;
                if a.nrows() != n || a.ncols() != n || b.nrows() != n || b.ncols() != g.ncols() {
                    return Err(CliError::config(format!(
                        "system dimensions {}x{}, {}x{} do not match n = {n}, m = {}",
                        a.nrows(),
                        a.ncols(),
                        b.nrows(),
                        b.ncols(),
                        g.ncols()
                    )));
                }
                Some(SystemModel::new(a, b).map_err(|e| CliError::config(e.to_string()))?)
            }
            None => None,
        };
        let x0 = match &self.experiment.x0 {
            Some(v) if v.len() != n => {
                return Err(CliError::config(format!("experiment.x0 has length {}, expected {n}", v.len())))
            }
            Some(v) => DVector::from_column_slice(v),
            None => DVector::zeros(n),
        };
        let sweep = self
            .sweep
            .iter()
            .enumerate()
            .map(|(i, rows)| {
                let p = matrix(&format!("sweep[{i}]"), rows)?;
                if p.ncols() != n {
                    return Err(CliError::config(format!("sweep[{i}] has {} columns, expected {n}", p.ncols())));
                }
                Ok(p)
            })
            .collect::<Result<Vec<_>, _>>()?;
        if self.experiment.horizon == 0 {
            return Err(CliError::config("experiment.horizon must be at least 1"));
        }
        Ok(Resolved {
            model,
            dist: DisturbanceSet::new(d),
            cons: ConstraintSets::new(h, g),
            template,
            sweep,
            x0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default_experiment() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        let r = c.resolve().unwrap();
        assert_eq!(r.template.shape(), (3, 2));
        assert_eq!(r.cons.h.nrows(), 4);
        assert_eq!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"synthesis": {"lmi": "t3"}}"#).is_err());
    }

    #[test]
    fn dimensions_are_cross_checked() {
        let c: RunConfig = serde_json::from_str(r#"{"template": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]}"#).unwrap();
        assert!(c.resolve().is_err());
        let c: RunConfig = serde_json::from_str(r#"{"template": [[1, 0], [0]]}"#).unwrap();
        assert!(c.resolve().is_err());
    }

    #[test]
    fn hash_ignores_seed_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 7;
        assert_eq!(a.hash(), b.hash());
        b.synthesis.iters = 2;
        assert_ne!(a.hash(), b.hash());
    }
}
