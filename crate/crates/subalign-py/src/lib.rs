//! Python bindings. Matrices cross the boundary as lists of rows; datasets
//! take one row per sample.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use subalign::data_model::{make_synthetic_pair as make_pair, Dataset, DomainPair, Matrix};
use subalign::linalg_kernels;
use subalign::pipeline_cli::{run_baseline_nn as baseline, run_rsa_cdda as rsa, AdaptationConfig, AdaptationReport};
use subalign::Error;

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        4 => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn from_rows(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Samples given as rows become columns of the feature matrix.
fn dataset(samples: &[Vec<f64>], labels: Option<Vec<usize>>) -> PyResult<Dataset> {
    Dataset::new(from_rows(samples)?.transpose(), labels).map_err(to_py)
}

#[pyclass(name = "DomainPair", module = "subalign_py", from_py_object)]
#[derive(Clone)]
struct PyDomainPair {
    inner: DomainPair,
}

#[pymethods]
impl PyDomainPair {
    #[new]
    #[pyo3(signature = (source, source_labels, target, target_labels=None))]
    fn new(source: Vec<Vec<f64>>, source_labels: Vec<usize>, target: Vec<Vec<f64>>, target_labels: Option<Vec<usize>>) -> PyResult<Self> {
        let inner = DomainPair::new(dataset(&source, Some(source_labels))?, dataset(&target, target_labels)?).map_err(to_py)?;
        Ok(PyDomainPair { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.source.dim()
    }

    #[getter]
    fn ns(&self) -> usize {
        self.inner.ns()
    }

    #[getter]
    fn nt(&self) -> usize {
        self.inner.nt()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count
    }

    fn source_samples(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.source.features().transpose())
    }

    fn target_samples(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.target.features().transpose())
    }

    fn source_labels(&self) -> Vec<usize> {
        self.inner.source_labels().to_vec()
    }

    fn target_labels(&self) -> Option<Vec<usize>> {
        self.inner.target.labels().map(<[usize]>::to_vec)
    }

    fn __repr__(&self) -> String {
        format!(
            "DomainPair(dim={}, ns={}, nt={}, classes={})",
            self.dim(),
            self.ns(),
            self.nt(),
            self.class_count()
        )
    }
}

#[pyclass(name = "Report", module = "subalign_py")]
struct PyReport {
    inner: AdaptationReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn method(&self) -> String {
        self.inner.method.clone()
    }

    #[getter]
    fn accuracy(&self) -> Option<f64> {
        self.inner.accuracy
    }

    #[getter]
    fn predictions(&self) -> Vec<usize> {
        self.inner.predictions.clone()
    }

    #[getter]
    fn alm_iterations(&self) -> Option<usize> {
        self.inner.alm.as_ref().map(|a| a.iterations)
    }

    #[getter]
    fn converged(&self) -> Option<bool> {
        self.inner.alm.as_ref().map(|a| a.converged)
    }

    #[getter]
    fn final_residual(&self) -> Option<f64> {
        self.inner.alm.as_ref().map(|a| a.final_residual)
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("report serializes")
    }

    fn __repr__(&self) -> String {
        format!("Report(method={:?}, accuracy={:?})", self.inner.method, self.inner.accuracy)
    }
}

fn config(json: Option<&str>) -> PyResult<AdaptationConfig> {
    match json {
        Some(text) => AdaptationConfig::from_json(text).map_err(to_py),
        None => Ok(AdaptationConfig::default()),
    }
}

#[pyfunction]
#[pyo3(signature = (seed, n_per_class=100, class_count=2, rotation_deg=30.0, noise_sd=0.3))]
fn make_synthetic_pair(seed: u64, n_per_class: usize, class_count: usize, rotation_deg: f64, noise_sd: f64) -> PyResult<PyDomainPair> {
    let inner = make_pair(seed, n_per_class, class_count, rotation_deg, noise_sd).map_err(to_py)?;
    Ok(PyDomainPair { inner })
}

/// Full adaptation run. `config` is a JSON object in the CLI config format.
#[pyfunction]
#[pyo3(signature = (pair, config=None))]
fn run_rsa_cdda(py: Python<'_>, pair: &PyDomainPair, config: Option<&str>) -> PyResult<PyReport> {
    let cfg = self::config(config)?;
    let inner = py.detach(|| rsa(&pair.inner, &cfg)).map_err(to_py)?;
    Ok(PyReport { inner })
}

#[pyfunction]
#[pyo3(signature = (pair, config=None))]
fn run_baseline_nn(pair: &PyDomainPair, config: Option<&str>) -> PyResult<PyReport> {
    let cfg = self::config(config)?;
    let inner = baseline(&pair.inner, &cfg).map_err(to_py)?;
    Ok(PyReport { inner })
}

#[pyfunction]
fn svt(matrix: Vec<Vec<f64>>, tau: f64) -> PyResult<Vec<Vec<f64>>> {
    linalg_kernels::svt(&from_rows(&matrix)?, tau).map(|m| to_rows(&m)).map_err(to_py)
}

#[pyfunction]
fn shrink(matrix: Vec<Vec<f64>>, tau: f64) -> PyResult<Vec<Vec<f64>>> {
    linalg_kernels::shrink(&from_rows(&matrix)?, tau).map(|m| to_rows(&m)).map_err(to_py)
}

/// Returns `(values, vectors)` with eigenvectors as columns of `vectors`.
#[pyfunction]
#[pyo3(signature = (l_matrix, r_matrix, k, ridge=0.0))]
fn gen_eig_smallest(l_matrix: Vec<Vec<f64>>, r_matrix: Vec<Vec<f64>>, k: usize, ridge: f64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let res = linalg_kernels::gen_eig_smallest(&from_rows(&l_matrix)?, &from_rows(&r_matrix)?, k, ridge).map_err(to_py)?;
    Ok((res.values.iter().copied().collect(), to_rows(&res.vectors)))
}

#[pymodule]
fn subalign_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDomainPair>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(make_synthetic_pair, m)?)?;
    m.add_function(wrap_pyfunction!(run_rsa_cdda, m)?)?;
    m.add_function(wrap_pyfunction!(run_baseline_nn, m)?)?;
    m.add_function(wrap_pyfunction!(svt, m)?)?;
    m.add_function(wrap_pyfunction!(shrink, m)?)?;
    m.add_function(wrap_pyfunction!(gen_eig_smallest, m)?)?;
    Ok(())
}
