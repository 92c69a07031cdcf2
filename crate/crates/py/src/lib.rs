//! Python bindings. Structured values cross the boundary as JSON strings in
//! the same formats the command-line tool reads and writes.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use statgames::config::{GameConfig, ScenarioConfig};
use statgames::lens::{verify_optical_bayes as verify, VerifyConfig};
use statgames::prob::{FiniteChannel, FiniteDist};
use statgames::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_json(v: &impl serde::Serialize) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

pub fn invert_rows(rows: Vec<Vec<f64>>, prior: Vec<f64>) -> Result<Vec<Vec<f64>>, Error> {
    let c = FiniteChannel::from_rows(rows)?;
    let pi = FiniteDist::new(c.domain().clone(), prior)?;
    Ok(c.invert(&pi)?.rows().map(<[f64]>::to_vec).collect())
}

/// Bayesian inverse of a row-stochastic table under a prior; unreachable
/// observations get the prior as their posterior.
#[pyfunction]
fn bayes_invert(rows: Vec<Vec<f64>>, prior: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    invert_rows(rows, prior).map_err(py_err)
}

/// Random-instance check that exact lenses compose optically; returns the
/// report as JSON.
#[pyfunction]
#[pyo3(signature = (trials, max_dim = 5, seed = 0, tol = 1e-9))]
fn verify_optical_bayes(trials: usize, max_dim: usize, seed: u64, tol: f64) -> PyResult<String> {
    let r = verify(VerifyConfig {
        trials,
        max_dim,
        seed,
        tol,
    })
    .map_err(py_err)?;
    to_json(&r)
}

/// Equilibria and objective of a game config (JSON in, JSON out).
#[pyfunction]
fn solve_game(config: &str) -> PyResult<String> {
    let cfg = GameConfig::from_json(config).map_err(py_err)?;
    to_json(&cfg.solve().map_err(py_err)?)
}

/// Runs a realisation scenario; returns `(report_json, trajectory_csv)`.
#[pyfunction]
fn realise(config: &str) -> PyResult<(String, String)> {
    let report = ScenarioConfig::from_json(config).and_then(|c| c.run()).map_err(py_err)?;
    let csv = report.check.trajectory.to_csv();
    Ok((to_json(&report.to_json("trajectory.csv"))?, csv))
}

#[pymodule]
fn statgames_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(bayes_invert, m)?)?;
    m.add_function(wrap_pyfunction!(verify_optical_bayes, m)?)?;
    m.add_function(wrap_pyfunction!(solve_game, m)?)?;
    m.add_function(wrap_pyfunction!(realise, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_rows_and_null_rows() {
        let inv = invert_rows(vec![vec![1.0, 0.0], vec![1.0, 0.0]], vec![0.25, 0.75]).unwrap();
        assert_eq!(inv, vec![vec![0.25, 0.75], vec![0.25, 0.75]]);
        assert!(invert_rows(vec![vec![0.5, 0.6]], vec![1.0]).is_err());
    }
}
