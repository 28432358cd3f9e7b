use pyo3::prelude::*;
use pyo3::types::PyModule;

#[test]
fn pipeline_through_the_interpreter() {
    Python::attach(|py| {
        let m = PyModule::new(py, "ddrci_py").unwrap();
        ddrci_py::register(&m).unwrap();
        let (states, inputs): (Vec<Vec<f64>>, Vec<Vec<f64>>) = m.getattr("generate").unwrap().call0().unwrap().extract().unwrap();
        assert_eq!(states.len(), 21);
        let sol = m.getattr("synthesize").unwrap().call1((states.clone(), inputs.clone())).unwrap();
        let status: String = sol.get_item("status").unwrap().extract().unwrap();
        assert_eq!(status, "Optimal");
        let text: String = sol.get_item("json").unwrap().extract().unwrap();
        let kwargs = pyo3::types::PyDict::new(py);
        kwargs.set_item("rollout_steps", 50).unwrap();
        let rep = m.getattr("verify").unwrap().call((text, states, inputs), Some(&kwargs)).unwrap();
        assert!(rep.get_item("pass").unwrap().extract::<bool>().unwrap());
    });
}

#[test]
fn bad_arguments_raise_value_error() {
    Python::attach(|py| {
        let m = PyModule::new(py, "ddrci_py").unwrap();
        ddrci_py::register(&m).unwrap();
        let err = m.getattr("polytope_volume").unwrap().call1((vec![vec![0.0; 5]; 6],)).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py));
    });
}
