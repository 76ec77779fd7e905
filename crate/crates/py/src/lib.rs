//! Python bindings. Maps, forms and experiment configurations cross the
//! boundary as JSON in the same schema the command-line runner reads.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use qcurve_core::modulus::{self, PathFamily, Selector};
use qcurve_core::verify::{self, CheckResult};
use qcurve_core::{
    forms, jetcalc, surface, AxisBox, ComassBudget, ConstantForm, Error, ExperimentConfig, GridDomain, MapSpec,
};

fn err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::InvalidConfig { .. } | Error::DimensionMismatch { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(json_err)
}

fn axis_box(lo: Vec<f64>, hi: Vec<f64>) -> PyResult<AxisBox> {
    AxisBox::new(lo, hi).map_err(err)
}

/// A constant-coefficient `n`-form on `R^m`.
#[pyclass(name = "Form", module = "qcurve", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyForm(ConstantForm);

#[pymethods]
impl PyForm {
    /// `coeffs` is a list of `(indices, c)` with 1-based increasing indices.
    #[new]
    fn new(n: usize, m: usize, coeffs: Vec<(Vec<usize>, f64)>) -> PyResult<Self> {
        ConstantForm::new(n, m, coeffs).map(PyForm).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(PyForm).map_err(json_err)
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&self.0)
    }

    #[getter]
    fn degree(&self) -> usize {
        self.0.degree()
    }

    #[getter]
    fn ambient_dim(&self) -> usize {
        self.0.ambient_dim()
    }

    /// Comass estimate as a dict with `value`, `upper_bound`, `exact`, `converged`.
    #[pyo3(signature = (seed = 0))]
    fn comass(&self, py: Python<'_>, seed: u64) -> PyResult<Py<PyAny>> {
        let est = py.detach(|| forms::comass(&self.0, &ComassBudget { seed, ..ComassBudget::default() }));
        json_to_py(py, &to_json(&est)?)
    }

    fn __repr__(&self) -> String {
        format!("Form(n={}, m={})", self.0.degree(), self.0.ambient_dim())
    }
}

/// A parametrized map on an axis-aligned box.
#[pyclass(name = "Map", module = "qcurve", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMap(MapSpec);

#[pymethods]
impl PyMap {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(PyMap).map_err(json_err)
    }

    #[staticmethod]
    fn identity(lo: Vec<f64>, hi: Vec<f64>) -> PyResult<Self> {
        MapSpec::identity(axis_box(lo, hi)?).map(PyMap).map_err(err)
    }

    #[staticmethod]
    fn linear(matrix: Vec<Vec<f64>>, lo: Vec<f64>, hi: Vec<f64>) -> PyResult<Self> {
        MapSpec::linear(matrix, axis_box(lo, hi)?).map(PyMap).map_err(err)
    }

    #[staticmethod]
    fn counterexample(lo: Vec<f64>, hi: Vec<f64>) -> PyResult<Self> {
        MapSpec::counterexample(axis_box(lo, hi)?).map(PyMap).map_err(err)
    }

    #[staticmethod]
    fn exp_plane(lo: Vec<f64>, hi: Vec<f64>) -> PyResult<Self> {
        MapSpec::exp_plane(axis_box(lo, hi)?).map(PyMap).map_err(err)
    }

    #[staticmethod]
    fn cylinder(lo: Vec<f64>, hi: Vec<f64>) -> PyResult<Self> {
        MapSpec::cylinder(axis_box(lo, hi)?).map(PyMap).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&self.0)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    fn __call__(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_point(&x)?;
        Ok(self.0.eval(&x))
    }

    /// `Df(x)` as `m` rows of length `n`.
    fn jacobian(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        self.check_point(&x)?;
        let jet = jetcalc::differential(&self.0, &x, None).map_err(err)?;
        Ok(jet.df.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    /// Pointwise distortion `K(x)`; `None` where `⋆f*ω ≤ 0`.
    fn distortion(&self, form: &PyForm, x: Vec<f64>) -> PyResult<Option<f64>> {
        self.check_point(&x)?;
        let comass = forms::comass(&form.0, &ComassBudget::default()).value;
        let jet = jetcalc::differential(&self.0, &x, None).map_err(err)?;
        Ok(jetcalc::pointwise_distortion(&form.0, comass, &jet).map_err(err)?.value())
    }

    fn __repr__(&self) -> PyResult<String> {
        Ok(format!("Map({})", self.to_json()?))
    }
}

impl PyMap {
    fn check_point(&self, x: &[f64]) -> PyResult<()> {
        if x.len() != self.0.n() {
            return Err(PyValueError::new_err(format!("expected a point in R^{}, got length {}", self.0.n(), x.len())));
        }
        Ok(())
    }
}

fn json_to_py(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Distortion scan over the cell centers of a uniform grid; returns the summary dict.
#[pyfunction]
#[pyo3(signature = (map, form, cells, lo = None, hi = None))]
fn distortion_scan(
    py: Python<'_>,
    map: &PyMap,
    form: &PyForm,
    cells: usize,
    lo: Option<Vec<f64>>,
    hi: Option<Vec<f64>>,
) -> PyResult<Py<PyAny>> {
    let bbox = match (lo, hi) {
        (Some(lo), Some(hi)) => axis_box(lo, hi)?,
        _ => map.0.domain().clone(),
    };
    let grid = GridDomain::uniform(bbox, cells).map_err(err)?;
    let report = py.detach(|| jetcalc::distortion_scan(&map.0, &form.0, &grid)).map_err(err)?;
    let summary = serde_json::json!({
        "comass": report.comass,
        "ess_sup_k": report.ess_sup_k,
        "k_p999": report.k_p999,
        "degenerate_fraction": report.degenerate_fraction,
        "empirical_c": report.empirical_c,
        "max_analytic_ratio": report.max_analytic_ratio,
        "hadamard_violations": report.hadamard_violations,
        "samples": report.samples.len(),
    });
    json_to_py(py, &summary.to_string())
}

/// Discrete `p`-modulus of the paths joining two selectors in a box.
/// Returns a dict with `modulus`, `lower_bound`, `certificate`, `converged`.
#[pyfunction]
#[pyo3(signature = (lo, hi, cells, source, target, exponent = 2.0, tol = 1e-3))]
#[allow(clippy::too_many_arguments)]
fn discrete_modulus(
    py: Python<'_>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cells: Vec<usize>,
    source: &str,
    target: &str,
    exponent: f64,
    tol: f64,
) -> PyResult<Py<PyAny>> {
    let grid = GridDomain::new(axis_box(lo, hi)?, cells, None).map_err(err)?;
    let family =
        PathFamily::on_grid(grid, Selector::parse(source).map_err(err)?, Selector::parse(target).map_err(err)?)
            .map_err(err)?;
    let res = py.detach(|| modulus::discrete_modulus(&family, exponent, tol)).map_err(err)?;
    json_to_py(py, &to_json(&res)?)
}

/// Triangulated image surface of a planar map.
#[pyclass(name = "SurfaceMesh", module = "qcurve", frozen, skip_from_py_object)]
struct PySurfaceMesh(Arc<surface::SurfaceMesh>);

#[pymethods]
impl PySurfaceMesh {
    #[new]
    #[pyo3(signature = (map, cells, level = 2))]
    fn new(py: Python<'_>, map: &PyMap, cells: usize, level: u32) -> PyResult<Self> {
        let grid = GridDomain::uniform(map.0.domain().clone(), cells).map_err(err)?;
        let mesh = py.detach(|| surface::triangulate_with(&map.0, &grid, level)).map_err(err)?;
        Ok(PySurfaceMesh(Arc::new(mesh)))
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.0.vertex_count()
    }

    #[getter]
    fn triangle_count(&self) -> usize {
        self.0.triangle_count()
    }

    fn area(&self) -> f64 {
        self.0.total_area()
    }

    /// Image of a parameter point on the piecewise-linear surface.
    fn surface_point(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.surface_point(&x).map_err(err)
    }

    /// Intrinsic distance between the images of two parameter points.
    fn distance(&self, py: Python<'_>, a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
        py.detach(|| self.0.point_distance(&a, &b)).map_err(err)
    }

    /// Length of the image of a parameter polyline.
    fn polyline_length(&self, path: Vec<Vec<f64>>) -> PyResult<f64> {
        self.0.polyline_length(&path).map_err(err)
    }

    fn to_off(&self) -> String {
        self.0.to_off()
    }
}

/// A validated experiment configuration.
#[pyclass(name = "ExperimentConfig", module = "qcurve", frozen, skip_from_py_object)]
struct PyConfig(ExperimentConfig);

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_json(text).map(PyConfig).map_err(err)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        ExperimentConfig::load(&path).map(PyConfig).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&self.0)
    }

    fn hash(&self) -> PyResult<String> {
        self.0.hash().map_err(err)
    }

    #[getter]
    fn map(&self) -> PyMap {
        PyMap(self.0.map.clone())
    }

    #[getter]
    fn form(&self) -> PyForm {
        PyForm(self.0.form.clone())
    }

    /// Runs one named check and returns its result as a dict.
    fn run_check(&self, py: Python<'_>, name: &str) -> PyResult<Py<PyAny>> {
        let cfg = &self.0;
        let res: Result<CheckResult, Error> = py.detach(|| match name {
            "analytic-definition" => verify::check_analytic_definition(cfg).map(|(c, _)| c),
            "upper-gradient" => verify::check_upper_gradient(cfg, cfg.analyze.paths),
            "metric-definition" => verify::check_metric_definition(cfg, &verify::default_metric_radii(&cfg.grid)),
            "counterexample-regularity" => {
                verify::check_counterexample_regularity(cfg, cfg.counterexample.clone().unwrap_or_default().strips)
            }
            "counterexample-llc" => {
                let [lo, hi] = cfg.counterexample.clone().unwrap_or_default().n_range;
                verify::check_counterexample_llc(cfg, lo, hi)
            }
            "measure-equality" => {
                let region =
                    cfg.intrinsic.as_ref().and_then(|s| s.region.clone()).unwrap_or_else(|| cfg.grid.bbox.clone());
                verify::check_measure_equality(cfg, &region)
            }
            "upper-regularity" => verify::check_upper_regularity_bound(cfg),
            "modulus" => verify::check_modulus(cfg),
            "lower-modulus" => verify::check_lower_modulus(cfg),
            other => Err(Error::InvalidArgument(format!("unknown check `{other}`"))),
        });
        json_to_py(py, &to_json(&res.map_err(err)?)?)
    }
}

#[pymodule]
fn qcurve(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyForm>()?;
    m.add_class::<PyMap>()?;
    m.add_class::<PySurfaceMesh>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(distortion_scan, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_modulus, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
