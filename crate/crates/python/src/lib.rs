//! Python bindings: `generate`, `synthesize`, `verify` and `polytope_volume`.
//! Matrices cross the boundary as lists of rows.

use ddrci::dataset::{build_data_matrices, build_lifted, ConstraintSets, DataMatrices, DisturbanceSet, Trajectory};
use ddrci::geometry;
use ddrci::sim::{Experiment, SystemModel};
use ddrci::synthesis::{synthesize as run_synthesis, Algorithm, LmiVariant, RciSolution, SynthesisOptions};
use ddrci::verify::{verify_solution, VerifyOptions};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Rows = Vec<Vec<f64>>;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(r: &Rows) -> Result<DMatrix<f64>, String> {
    let c = r.first().map_or(0, Vec::len);
    if r.is_empty() || c == 0 || r.iter().any(|row| row.len() != c) {
        return Err("expected a non-empty list of equal-length rows".into());
    }
    Ok(DMatrix::from_fn(r.len(), c, |i, j| r[i][j]))
}

fn data(states: &Rows, inputs: &Rows) -> Result<DataMatrices, String> {
    let traj = Trajectory::new(
        states.iter().map(|x| DVector::from_column_slice(x)).collect(),
        inputs.iter().map(|u| DVector::from_column_slice(u)).collect(),
    )
    .map_err(|e| e.to_string())?;
    build_data_matrices(&traj).map_err(|e| e.to_string())
}

fn options(algorithm: &str, lmi: &str, iters: usize) -> Result<SynthesisOptions, String> {
    Ok(SynthesisOptions {
        algorithm: match algorithm {
            "one-step" => Algorithm::OneStep,
            "iterative" => Algorithm::Iterative,
            other => return Err(format!("unknown algorithm {other:?}")),
        },
        lmi_variant: match lmi {
            "t1" => LmiVariant::Theorem1,
            "t2" => LmiVariant::Theorem2,
            other => return Err(format!("unknown lmi {other:?}")),
        },
        max_outer_iterations: iters,
        ..SynthesisOptions::default()
    })
}

fn default_template() -> Rows {
    vec![vec![10.0, 10.0], vec![10.0, 0.0], vec![1.0, 11.0]]
}

/// Double-integrator experiment; returns `(states, inputs)`.
#[pyfunction]
#[pyo3(signature = (seed = 0, horizon = 20))]
fn generate(seed: u64, horizon: usize) -> PyResult<(Rows, Rows)> {
    let e = Experiment { horizon, ..Experiment::default() };
    let traj = e.run(seed).map_err(value_err)?;
    let to_rows = |v: &[DVector<f64>]| v.iter().map(|x| x.iter().copied().collect()).collect();
    Ok((to_rows(&traj.states), to_rows(&traj.inputs)))
}

#[pyfunction]
#[pyo3(signature = (
    states, inputs, template = None, disturbance_bound = 0.1,
    state_bound = vec![2.0, 2.0], input_bound = vec![2.0],
    algorithm = "one-step", lmi = "t2", iters = 5,
))]
#[allow(clippy::too_many_arguments)]
fn synthesize<'py>(
    py: Python<'py>,
    states: Rows,
    inputs: Rows,
    template: Option<Rows>,
    disturbance_bound: f64,
    state_bound: Vec<f64>,
    input_bound: Vec<f64>,
    algorithm: &str,
    lmi: &str,
    iters: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let data = data(&states, &inputs).map_err(value_err)?;
    let p = matrix(&template.unwrap_or_else(default_template)).map_err(value_err)?;
    let dist = DisturbanceSet::uniform_box(data.state_dim(), disturbance_bound);
    let cons = ConstraintSets::symmetric_boxes(&state_bound, &input_bound);
    let opts = options(algorithm, lmi, iters).map_err(value_err)?;
    let sol = run_synthesis(&data, &dist, &cons, &p, &opts).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let out = PyDict::new(py);
    out.set_item("W", rows(&sol.w))?;
    out.set_item("N", rows(&sol.n))?;
    out.set_item("K", rows(&sol.k))?;
    out.set_item("volume", sol.volume)?;
    out.set_item("status", format!("{:?}", sol.status))?;
    out.set_item("warnings", sol.warnings.clone())?;
    out.set_item("json", sol.to_json().map_err(value_err)?)?;
    Ok(out)
}

/// Checks a solution document against the data and, when
/// `double_integrator` is set, the true system.
#[pyfunction]
#[pyo3(signature = (
    solution_json, states, inputs, disturbance_bound = 0.1,
    state_bound = vec![2.0, 2.0], input_bound = vec![2.0],
    double_integrator = true, samples = 100, rollout_steps = 1000, seed = 0,
))]
#[allow(clippy::too_many_arguments)]
fn verify<'py>(
    py: Python<'py>,
    solution_json: &str,
    states: Rows,
    inputs: Rows,
    disturbance_bound: f64,
    state_bound: Vec<f64>,
    input_bound: Vec<f64>,
    double_integrator: bool,
    samples: usize,
    rollout_steps: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let sol = RciSolution::from_json(solution_json).map_err(value_err)?;
    let data = data(&states, &inputs).map_err(value_err)?;
    let dist = DisturbanceSet::uniform_box(data.state_dim(), disturbance_bound);
    let cons = ConstraintSets::symmetric_boxes(&state_bound, &input_bound);
    let lift = build_lifted(&data, &dist).map_err(value_err)?;
    let model = double_integrator.then(SystemModel::double_integrator);
    let opts = VerifyOptions { samples, rollout_steps, seed, ..VerifyOptions::default() };
    let report = verify_solution(&sol, &lift, &cons, &dist, model.as_ref(), &opts)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let out = PyDict::new(py);
    out.set_item("pass", report.pass())?;
    out.set_item("failures", report.failures())?;
    out.set_item("volume", report.volume.volume)?;
    out.set_item("report", serde_json::to_string(&report).map_err(value_err)?)?;
    Ok(out)
}

/// Volume of the convex hull of the given points (dimension 1 to 3).
#[pyfunction]
fn polytope_volume(vertices: Rows) -> PyResult<f64> {
    let pts: Vec<DVector<f64>> = vertices.iter().map(|v| DVector::from_column_slice(v)).collect();
    geometry::polytope_volume(&pts).map_err(value_err)
}

#[pymodule]
fn ddrci_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

/// Adds the functions to `m`; shared by the extension and embedding hosts.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(polytope_volume, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(matrix(&vec![vec![1.0, 2.0], vec![3.0]]).is_err());
        assert!(matrix(&vec![]).is_err());
        assert_eq!(matrix(&vec![vec![1.0, 2.0]]).unwrap().shape(), (1, 2));
    }

    #[test]
    fn option_names() {
        assert!(options("iterative", "t1", 3).is_ok());
        assert!(options("two-step", "t2", 3).is_err());
        assert!(options("one-step", "t3", 3).is_err());
    }

    #[test]
    fn trajectory_lengths_are_checked() {
        let s = vec![vec![0.0, 0.0]; 3];
        assert!(data(&s, &vec![vec![0.0]; 2]).is_ok());
        assert!(data(&s, &vec![vec![0.0]; 3]).is_err());
    }
}
