//! Python bindings for `qiup-core`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qiup_core::acquisition::{
    self, standard_battery, AcquisitionConfig, Model, NamedProbe, Noise, Scene, SceneObject,
};
use qiup_core::{analytic, cli, fitting, interferometer, tomography};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn theta_of(deg: u32) -> PyResult<interferometer::ThetaSetting> {
    match deg {
        0 => Ok(interferometer::ThetaSetting::Deg0),
        45 => Ok(interferometer::ThetaSetting::Deg45),
        d => Err(PyValueError::new_err(format!(
            "theta must be 0 or 45, got {d}"
        ))),
    }
}

#[pyclass(name = "ProbeState", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyProbeState(interferometer::ProbeState);

#[pymethods]
impl PyProbeState {
    #[new]
    #[pyo3(signature = (alpha1, beta1, gamma = 0.0))]
    fn new(alpha1: f64, beta1: f64, gamma: f64) -> PyResult<Self> {
        interferometer::ProbeState::new(alpha1, beta1, gamma)
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn horizontal() -> Self {
        Self(interferometer::ProbeState::horizontal())
    }

    #[staticmethod]
    fn vertical() -> Self {
        Self(interferometer::ProbeState::vertical())
    }

    #[staticmethod]
    fn diagonal() -> Self {
        Self(interferometer::ProbeState::diagonal())
    }

    #[staticmethod]
    fn antidiagonal() -> Self {
        Self(interferometer::ProbeState::antidiagonal())
    }

    #[staticmethod]
    fn circular() -> Self {
        Self(interferometer::ProbeState::circular())
    }

    #[getter]
    fn alpha1(&self) -> f64 {
        self.0.alpha1
    }

    #[getter]
    fn beta1(&self) -> f64 {
        self.0.beta1
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma
    }

    fn __repr__(&self) -> String {
        format!(
            "ProbeState(alpha1={}, beta1={}, gamma={})",
            self.0.alpha1, self.0.beta1, self.0.gamma
        )
    }
}

#[pyclass(name = "SourceConfig", from_py_object)]
#[derive(Clone, Copy)]
pub struct PySourceConfig(interferometer::SourceConfig);

#[pymethods]
impl PySourceConfig {
    #[new]
    #[pyo3(signature = (b1 = std::f64::consts::FRAC_1_SQRT_2, b2 = std::f64::consts::FRAC_1_SQRT_2, zeta = 0.0))]
    fn new(b1: f64, b2: f64, zeta: f64) -> PyResult<Self> {
        interferometer::SourceConfig::new(b1, b2, zeta)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn b1(&self) -> f64 {
        self.0.b1
    }

    #[getter]
    fn b2(&self) -> f64 {
        self.0.b2
    }

    #[getter]
    fn zeta(&self) -> f64 {
        self.0.zeta
    }
}

#[pyclass(name = "JonesObject", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyJonesObject(analytic::JonesObject);

#[pymethods]
impl PyJonesObject {
    #[new]
    fn new(tau_h: f64, tau_v: f64, kappa: f64, phi_h: f64, phi_v: f64, xi: f64) -> PyResult<Self> {
        analytic::JonesObject::new(tau_h, tau_v, kappa, phi_h, phi_v, xi)
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn identity() -> Self {
        Self(analytic::JonesObject::identity())
    }

    /// `[tau_h, tau_v, kappa, phi_h, phi_v, xi]`
    fn as_list(&self) -> Vec<f64> {
        self.0.to_array().to_vec()
    }

    /// 2×2 nested list of complex entries, rows H then V.
    fn matrix(&self) -> Vec<Vec<num_complex::Complex64>> {
        self.0
            .to_matrix()
            .0
            .iter()
            .map(|row| row.to_vec())
            .collect()
    }

    fn __repr__(&self) -> String {
        let o = &self.0;
        format!(
            "JonesObject(tau_h={}, tau_v={}, kappa={}, phi_h={}, phi_v={}, xi={})",
            o.tau_h, o.tau_v, o.kappa, o.phi_h, o.phi_v, o.xi
        )
    }
}

#[pyclass(name = "FringeDataset", from_py_object)]
#[derive(Clone)]
pub struct PyFringeDataset(acquisition::FringeDataset);

#[pymethods]
impl PyFringeDataset {
    #[getter]
    fn label(&self) -> String {
        self.0.label.clone()
    }

    #[getter]
    fn theta(&self) -> u32 {
        self.0.theta.degrees()
    }

    #[getter]
    fn probe(&self) -> PyProbeState {
        PyProbeState(self.0.probe)
    }

    #[getter]
    fn zeta_grid(&self) -> Vec<f64> {
        self.0.zeta_grid().to_vec()
    }

    #[getter]
    fn counts(&self) -> Vec<f64> {
        self.0.counts.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        acquisition::FringeDataset::from_json(text)
            .map(Self)
            .map_err(err)
    }
}

#[pyclass(name = "SinusoidFit", from_py_object)]
#[derive(Clone, Copy)]
pub struct PySinusoidFit(fitting::SinusoidFit);

#[pymethods]
impl PySinusoidFit {
    #[getter]
    fn c(&self) -> f64 {
        self.0.c
    }

    #[getter]
    fn a(&self) -> f64 {
        self.0.a
    }

    #[getter]
    fn phi(&self) -> f64 {
        self.0.phi
    }

    #[getter]
    fn phase_determined(&self) -> bool {
        self.0.phase_determined
    }

    #[getter]
    fn visibility(&self) -> f64 {
        self.0.a / self.0.c
    }

    fn evaluate(&self, zeta: f64) -> f64 {
        self.0.evaluate(zeta)
    }
}

#[pyclass(name = "Reconstruction", from_py_object)]
#[derive(Clone)]
pub struct PyReconstruction(tomography::Reconstruction);

#[pymethods]
impl PyReconstruction {
    #[getter]
    fn object(&self) -> PyJonesObject {
        PyJonesObject(self.0.object)
    }

    #[getter]
    fn kappa_alpha(&self) -> f64 {
        self.0.kappa_alpha
    }

    #[getter]
    fn kappa_beta(&self) -> f64 {
        self.0.kappa_beta
    }

    #[getter]
    fn dphi(&self) -> f64 {
        self.0.dphi
    }

    #[getter]
    fn consistent(&self) -> bool {
        self.0.consistency.pass
    }

    #[getter]
    fn kappa_rel_discrepancy(&self) -> f64 {
        self.0.consistency.kappa_rel_discrepancy
    }

    #[getter]
    fn refined(&self) -> bool {
        self.0.refined
    }

    #[getter]
    fn residual_rms(&self) -> Option<f64> {
        self.0.residual_rms
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.0.iterations
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.0).map_err(err)
    }
}

/// Closed-form counts per pair without an object.
#[pyfunction]
fn counts_no_object(
    theta: u32,
    probe: PyProbeState,
    src: PySourceConfig,
    t: f64,
    zeta: f64,
) -> PyResult<f64> {
    Ok(analytic::counts_no_object(
        theta_of(theta)?,
        &probe.0,
        &src.0,
        t,
        zeta,
    ))
}

/// Closed-form counts per pair with an object.
#[pyfunction]
fn counts_with_object(
    theta: u32,
    probe: PyProbeState,
    obj: PyJonesObject,
    src: PySourceConfig,
    t: f64,
    zeta: f64,
) -> PyResult<f64> {
    Ok(analytic::counts_with_object(
        theta_of(theta)?,
        &probe.0,
        &obj.0,
        &src.0,
        t,
        zeta,
    ))
}

/// State-vector simulation of the counts per pair over a ζ grid.
#[pyfunction]
#[pyo3(signature = (theta, probe, src, t, zeta_grid, obj = None))]
fn oracle_counts(
    theta: u32,
    probe: PyProbeState,
    src: PySourceConfig,
    t: f64,
    zeta_grid: Vec<f64>,
    obj: Option<PyJonesObject>,
) -> PyResult<Vec<f64>> {
    let loss = interferometer::LossModel::new(t).map_err(err)?;
    let m = obj.map(|o| o.0.to_matrix());
    interferometer::run_forward(
        &src.0,
        &loss,
        &probe.0,
        theta_of(theta)?,
        m.as_ref(),
        &zeta_grid,
    )
    .map_err(err)
}

/// H/V datasets plus the diagonal, antidiagonal and circular probes.
#[pyfunction]
#[pyo3(signature = (t, obj = None, src = None, noise = "none", seed = 0, pairs_per_point = 1_000_000, points = 32, oracle = false))]
#[allow(clippy::too_many_arguments)]
fn simulate_battery(
    t: f64,
    obj: Option<PyJonesObject>,
    src: Option<PySourceConfig>,
    noise: &str,
    seed: u64,
    pairs_per_point: u64,
    points: usize,
    oracle: bool,
) -> PyResult<Vec<PyFringeDataset>> {
    let noise = match noise {
        "none" => Noise::None,
        "poisson" => Noise::Poisson,
        n => {
            return Err(PyValueError::new_err(format!(
                "noise must be 'none' or 'poisson', got '{n}'"
            )))
        }
    };
    let cfg = AcquisitionConfig {
        zeta_grid: acquisition::uniform_grid(points),
        pairs_per_point,
        noise,
        rng_seed: seed,
        model: if oracle {
            Model::Oracle
        } else {
            Model::Analytic
        },
    };
    let scene = Scene {
        src: src.map_or(interferometer::SourceConfig::balanced(0.0), |s| s.0),
        t,
        object: obj.map(|o| SceneObject::Jones(o.0)),
    };
    standard_battery(&scene, &cfg, &NamedProbe::extras())
        .map(|v| v.into_iter().map(PyFringeDataset).collect())
        .map_err(err)
}

#[pyfunction]
fn fit_sinusoid(dataset: &PyFringeDataset) -> PyResult<PySinusoidFit> {
    fitting::fit_sinusoid(&dataset.0)
        .map(PySinusoidFit)
        .map_err(err)
}

/// H/V point estimate from the first four datasets of a battery.
#[pyfunction]
#[pyo3(signature = (datasets, t, src = None, tolerance = 0.05))]
fn extract_hv(
    datasets: Vec<PyFringeDataset>,
    t: f64,
    src: Option<PySourceConfig>,
    tolerance: f64,
) -> PyResult<PyReconstruction> {
    if datasets.len() < 4 {
        return Err(PyValueError::new_err("need the four H/V datasets"));
    }
    let fits: Vec<fitting::SinusoidFit> = datasets[..4]
        .iter()
        .map(|d| fitting::fit_sinusoid(&d.0))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let src = src.map_or(interferometer::SourceConfig::balanced(0.0), |s| s.0);
    let s = datasets[0].0.config.pairs_per_point as f64;
    tomography::extract_hv(
        &tomography::HvFits {
            alpha_theta0: &fits[0],
            alpha_theta45: &fits[1],
            beta_theta0: &fits[2],
            beta_theta45: &fits[3],
        },
        t,
        &src,
        s,
        tolerance,
    )
    .map(PyReconstruction)
    .map_err(err)
}

/// Damped least-squares refinement against every dataset.
#[pyfunction]
#[pyo3(signature = (datasets, initial, t, src = None))]
fn refine_global(
    datasets: Vec<PyFringeDataset>,
    initial: &PyReconstruction,
    t: f64,
    src: Option<PySourceConfig>,
) -> PyResult<PyReconstruction> {
    let ds: Vec<acquisition::FringeDataset> = datasets.into_iter().map(|d| d.0).collect();
    let src = src.map_or(interferometer::SourceConfig::balanced(0.0), |s| s.0);
    tomography::refine_global(&ds, &initial.0, &tomography::RefineOptions::new(t, src))
        .map(PyReconstruction)
        .map_err(err)
}

/// Largest |oracle − closed form| over `draws` random passive draws.
#[pyfunction]
#[pyo3(signature = (draws = 100, seed = 0))]
fn validate(draws: usize, seed: u64) -> PyResult<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..draws {
        let d = cli::validation_draw(&mut rng, i, false);
        worst = worst
            .max(cli::draw_deviation(&d.probe, &d.object, &d.src, d.t, &d.zeta_grid).map_err(err)?);
    }
    Ok(worst)
}

#[pymodule]
fn qiup(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyProbeState>()?;
    m.add_class::<PySourceConfig>()?;
    m.add_class::<PyJonesObject>()?;
    m.add_class::<PyFringeDataset>()?;
    m.add_class::<PySinusoidFit>()?;
    m.add_class::<PyReconstruction>()?;
    m.add_function(wrap_pyfunction!(counts_no_object, m)?)?;
    m.add_function(wrap_pyfunction!(counts_with_object, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_counts, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_battery, m)?)?;
    m.add_function(wrap_pyfunction!(fit_sinusoid, m)?)?;
    m.add_function(wrap_pyfunction!(extract_hv, m)?)?;
    m.add_function(wrap_pyfunction!(refine_global, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
