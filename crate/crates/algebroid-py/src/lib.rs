//! Python bindings: a `Model` class wrapping a loaded algebroid model plus a
//! handful of free functions. Geometry goes in and out as plain lists and
//! floats; expressions are passed as strings and parsed per call, so nothing
//! on the Python side holds borrows into Rust structures.

use std::collections::HashMap;

use algebroid::dynamics::{
    closed_form_snakeboard, energy_drift, geodesic_el_flow, hamilton_flow, hj_residual,
    nonholonomic_flow, scalar_drift, SnakeboardParams, Trajectory, VelocityPoint,
};
use algebroid::models::{self, LoadedModel};
use algebroid::morphism::check_lap_morphism;
use algebroid::nonholonomy;
use algebroid::poisson::{self, DualPoint, ScalarOnDual};
use algebroid::{parse, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Integration { .. } | Error::Domain(_) | Error::Inconsistency(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn pairs(map: Option<HashMap<String, f64>>) -> Vec<(String, f64)> {
    map.map(|m| m.into_iter().collect()).unwrap_or_default()
}

#[pyclass]
struct Model {
    inner: LoadedModel,
}

impl Model {
    fn scalar(&self, src: &str) -> PyResult<ScalarOnDual> {
        ScalarOnDual::parse_for(&self.inner.algebroid, src).map_err(to_py)
    }

    fn mechanical_hamiltonian(&self) -> PyResult<ScalarOnDual> {
        self.inner.system().and_then(|s| s.hamiltonian()).map_err(to_py)
    }

    fn split_rows(&self, traj: &Trajectory) -> (Vec<f64>, Vec<Vec<f64>>) {
        (traj.times.clone(), traj.states.clone())
    }
}

#[pymethods]
impl Model {
    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn base_dim(&self) -> usize {
        self.inner.algebroid.base_dim()
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.algebroid.rank()
    }

    #[getter]
    fn base_coords(&self) -> Vec<String> {
        self.inner.algebroid.base_coords().to_vec()
    }

    #[getter]
    fn frame_names(&self) -> Vec<String> {
        self.inner.algebroid.frame_names().to_vec()
    }

    /// Anchor matrix at a base point, base_dim rows by rank columns.
    fn anchor(&self, q: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let a = &self.inner.algebroid;
        let rho = a.anchor_matrix(&q).map_err(to_py)?;
        Ok((0..a.base_dim()).map(|i| (0..a.rank()).map(|al| rho[(i, al)]).collect()).collect())
    }

    /// Structure function C^gamma_{alpha beta} at a base point.
    fn structure(&self, alpha: usize, beta: usize, gamma: usize, q: Vec<f64>) -> PyResult<f64> {
        let a = &self.inner.algebroid;
        let b = a.binding_for(&q).map_err(to_py)?;
        a.structure_value(alpha, beta, gamma, &b).map_err(to_py)
    }

    /// Frame components of the almost differential of a base function.
    fn d_function(&self, f: &str, q: Vec<f64>) -> PyResult<Vec<f64>> {
        let expr = parse(f).map_err(to_py)?;
        self.inner.algebroid.d_function(&expr, &q).map_err(to_py)
    }

    /// Linear almost Poisson bracket of two scalars on the dual bundle,
    /// written in base coordinates and p1..pn, at the point (q, p).
    fn bracket(&self, f: &str, g: &str, q: Vec<f64>, p: Vec<f64>) -> PyResult<f64> {
        let (f, g) = (self.scalar(f)?, self.scalar(g)?);
        poisson::bracket(&self.inner.algebroid, &f, &g, &DualPoint::new(q, p)).map_err(to_py)
    }

    /// Jacobi defect {f,{g,h}} + {g,{h,f}} + {h,{f,g}} at (q, p).
    fn jacobiator(&self, f: &str, g: &str, h: &str, q: Vec<f64>, p: Vec<f64>) -> PyResult<f64> {
        let (f, g, h) = (self.scalar(f)?, self.scalar(g)?, self.scalar(h)?);
        poisson::jacobiator(&self.inner.algebroid, &f, &g, &h, &DualPoint::new(q, p))
            .map_err(to_py)
    }

    /// Hamiltonian vector field at (q, p); `h` defaults to the model's
    /// kinetic-plus-potential Hamiltonian.
    #[pyo3(signature = (q, p, h=None))]
    fn hamiltonian_vf(&self, q: Vec<f64>, p: Vec<f64>, h: Option<&str>) -> PyResult<Vec<f64>> {
        let h = match h {
            Some(src) => self.scalar(src)?,
            None => self.mechanical_hamiltonian()?,
        };
        poisson::hamiltonian_vf(&self.inner.algebroid, &h, &DualPoint::new(q, p)).map_err(to_py)
    }

    /// Hamilton-Jacobi residual of a named section family at a base point.
    #[pyo3(signature = (section, q, consts=None))]
    fn hj_residual(
        &self,
        section: &str,
        q: Vec<f64>,
        consts: Option<HashMap<String, f64>>,
    ) -> PyResult<Vec<f64>> {
        let alpha = self.inner.section(section, &pairs(consts)).map_err(to_py)?;
        let h = self.mechanical_hamiltonian()?;
        hj_residual(&self.inner.algebroid, &h, &alpha, &q).map_err(to_py)
    }

    /// Sup-norm cocycle residual of a named section family at a base point.
    #[pyo3(signature = (section, q, consts=None))]
    fn cocycle_residual(
        &self,
        section: &str,
        q: Vec<f64>,
        consts: Option<HashMap<String, f64>>,
    ) -> PyResult<f64> {
        let alpha = self.inner.section(section, &pairs(consts)).map_err(to_py)?;
        self.inner.algebroid.cocycle_residual(&alpha, &q).map_err(to_py)
    }

    /// Integrates a flow. `flow` is "hamilton", "lagrange", or
    /// "nonholonomic"; `fiber0` holds momenta for the first and velocities
    /// for the others. Returns (times, states, drift).
    #[pyo3(signature = (flow, q0, fiber0, t, dt, h=None))]
    fn simulate(
        &self,
        flow: &str,
        q0: Vec<f64>,
        fiber0: Vec<f64>,
        t: f64,
        dt: f64,
        h: Option<&str>,
    ) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, f64)> {
        let a = &self.inner.algebroid;
        let span = (0.0, t);
        match flow {
            "hamilton" => {
                let ham = match h {
                    Some(src) => self.scalar(src)?,
                    None => self.mechanical_hamiltonian()?,
                };
                let x0 = DualPoint::new(q0, fiber0);
                let traj = hamilton_flow(a, &ham, &x0, span, dt).map_err(to_py)?;
                let drift = scalar_drift(a, &ham, &traj).map_err(to_py)?;
                let (times, states) = self.split_rows(&traj);
                Ok((times, states, drift))
            }
            "lagrange" | "nonholonomic" => {
                if h.is_some() {
                    return Err(PyValueError::new_err("h only applies to the hamilton flow"));
                }
                let sys = self.inner.system().map_err(to_py)?;
                let x0 = VelocityPoint::new(q0, fiber0);
                let traj = if flow == "lagrange" {
                    geodesic_el_flow(&sys, &x0, span, dt).map_err(to_py)?
                } else {
                    nonholonomic_flow(&sys, &x0, span, dt).map_err(to_py)?
                };
                let drift = energy_drift(&sys, &traj).map_err(to_py)?;
                let (times, states) = self.split_rows(&traj);
                Ok((times, states, drift))
            }
            other => Err(PyValueError::new_err(format!(
                "unknown flow `{other}`; expected hamilton, lagrange, or nonholonomic"
            ))),
        }
    }

    /// Bracket-generation verdict over random sample points:
    /// "completely_nonholonomic" or "rank_deficient".
    #[pyo3(signature = (samples=50, seed=0, max_depth=None))]
    fn verdict(&self, samples: usize, seed: u64, max_depth: Option<usize>) -> PyResult<String> {
        let a = &self.inner.algebroid;
        let pts = a.sample_points(samples, seed).map_err(to_py)?;
        let rep = nonholonomy::verdict(a, &pts, max_depth).map_err(to_py)?;
        Ok(rep.verdict.to_string())
    }

    /// Ranks of the bracket-generated distribution by depth at one point.
    #[pyo3(signature = (q, max_depth=None))]
    fn rank_by_depth(&self, q: Vec<f64>, max_depth: Option<usize>) -> PyResult<Vec<usize>> {
        let rep = nonholonomy::bracket_closure_rank(&self.inner.algebroid, &q, max_depth)
            .map_err(to_py)?;
        Ok(rep.rank_by_depth)
    }

    /// Deterministic sample points from the model's sampling box.
    fn sample_points(&self, count: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        self.inner.algebroid.sample_points(count, seed).map_err(to_py)
    }

    /// Max bracket/anchor defect of the model's reduction morphism over a
    /// sampled base grid.
    #[pyo3(signature = (grid=30, seed=0))]
    fn morphism_defects(&self, grid: usize, seed: u64) -> PyResult<(f64, f64)> {
        let (mor, _) = self.inner.bundle_morphism().map_err(to_py)?;
        let pts = mor.source().sample_points(grid, seed).map_err(to_py)?;
        let rep = check_lap_morphism(&mor, &pts).map_err(to_py)?;
        Ok((rep.max_bracket_defect, rep.max_anchor_defect))
    }

    /// The model as JSON text.
    fn serialize(&self) -> PyResult<String> {
        self.inner.serialize().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({}, base_dim={}, rank={})",
            self.inner.name(),
            self.inner.algebroid.base_dim(),
            self.inner.algebroid.rank()
        )
    }
}

/// Loads a model by bundled name or file path, with optional parameter
/// overrides; `ALGEBROID_MODEL_PATH` adds search directories.
#[pyfunction]
#[pyo3(signature = (spec, overrides=None))]
fn load_model(spec: &str, overrides: Option<HashMap<String, f64>>) -> PyResult<Model> {
    let inner = models::load_with_overrides(spec, &pairs(overrides)).map_err(to_py)?;
    Ok(Model { inner })
}

#[pyfunction]
fn bundled_models() -> Vec<String> {
    models::bundled_names().into_iter().map(str::to_string).collect()
}

/// Closed-form snakeboard solution (phi, psi, (v1, v2, v3)) at time `t` for
/// integration constants `c = [C0, C1, C2, C3, C4]`.
#[pyfunction]
#[pyo3(signature = (c, t, m=1.0, r=1.0, j0=0.5, j1=0.1875))]
fn snakeboard_closed_form(
    c: [f64; 5],
    t: f64,
    m: f64,
    r: f64,
    j0: f64,
    j1: f64,
) -> PyResult<(f64, f64, (f64, f64, f64))> {
    let params = SnakeboardParams { m, r, j0, j1 };
    let (phi, psi, v) = closed_form_snakeboard(&params, &c, t).map_err(to_py)?;
    Ok((phi, psi, (v[0], v[1], v[2])))
}

#[pymodule]
#[pyo3(name = "algebroid")]
fn algebroid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(load_model, m)?)?;
    m.add_function(wrap_pyfunction!(bundled_models, m)?)?;
    m.add_function(wrap_pyfunction!(snakeboard_closed_form, m)?)?;
    Ok(())
}
