//! Python bindings.
//!
//! IMU streams cross the boundary as lists of
//! `(t, ax, ay, az, gx, gy, gz)` tuples and trajectories as lists of
//! `(t, x, y, psi)` tuples.

use std::path::PathBuf;

use pedaltrack_core::fusion::FusionMode;
use pedaltrack_core::metrics;
use pedaltrack_core::mtimnet::{self, corrected_delta, ModelConfig, TrainConfig};
use pedaltrack_core::pipeline::{self, TrackMode};
use pedaltrack_core::pws::{self, BikeGeometry, PwsConfig};
use pedaltrack_core::sins::NavState;
use pedaltrack_core::synth::{self, NoiseSpec, RideScript};
use pedaltrack_core::{model, Error, ImuSample, ImuWindow, MotionDelta, Pose2D, Trajectory};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

type Row = (f64, f64, f64, f64, f64, f64, f64);
type TrajRow = (f64, f64, f64, f64);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for pedaltrack_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn to_samples(rows: &[Row]) -> Vec<ImuSample> {
    rows.iter()
        .map(|&(t, ax, ay, az, gx, gy, gz)| ImuSample::new(t, [ax, ay, az], [gx, gy, gz]))
        .collect()
}

fn to_rows(samples: &[ImuSample]) -> Vec<Row> {
    samples
        .iter()
        .map(|s| {
            (
                s.t, s.acc[0], s.acc[1], s.acc[2], s.gyro[0], s.gyro[1], s.gyro[2],
            )
        })
        .collect()
}

fn traj_rows(traj: &Trajectory) -> Vec<TrajRow> {
    traj.stamps()
        .iter()
        .zip(traj.poses())
        .map(|(&t, p)| (t, p.x, p.y, p.psi))
        .collect()
}

fn to_traj(rows: &[TrajRow]) -> PyResult<Trajectory> {
    let stamps = rows.iter().map(|r| r.0).collect();
    let poses = rows.iter().map(|r| Pose2D::new(r.1, r.2, r.3)).collect();
    Trajectory::new(stamps, poses).py()
}

fn parse_toml<T: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> PyResult<T> {
    match text {
        None => Ok(T::default()),
        Some(t) => toml::from_str(t).map_err(|e| PyValueError::new_err(e.to_string())),
    }
}

/// A simulated ride: IMU stream plus exact ground truth.
#[pyclass(frozen)]
struct Ride {
    #[pyo3(get)]
    imu: Vec<Row>,
    #[pyo3(get)]
    truth: Vec<TrajRow>,
    /// Per-second `(dd, dpsi)`.
    #[pyo3(get)]
    deltas: Vec<(f64, f64)>,
    /// Per-second mean speed, m/s.
    #[pyo3(get)]
    speed: Vec<f64>,
}

/// Simulates a ride from a TOML ride script. `noise` is an optional TOML
/// noise table; without it the default noise is used with `seed`.
#[pyfunction]
#[pyo3(signature = (script, seed = 0, noise = None))]
fn simulate(script: &str, seed: u64, noise: Option<&str>) -> PyResult<Ride> {
    let script: RideScript =
        toml::from_str(script).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let mut noise: NoiseSpec = parse_toml(noise)?;
    noise.seed = seed;
    let (stream, truth) = synth::generate(&script, &noise).py()?;
    Ok(Ride {
        imu: to_rows(&stream),
        truth: traj_rows(&truth.traj),
        deltas: truth.deltas.iter().map(|d| (d.dd, d.dpsi)).collect(),
        speed: truth.speed,
    })
}

/// Integrates `(dd, dpsi)` steps from `start = (x, y, psi)`; returns poses.
#[pyfunction]
fn integrate_deltas(start: (f64, f64, f64), deltas: Vec<(f64, f64)>) -> PyResult<Vec<TrajRow>> {
    let deltas = deltas
        .into_iter()
        .map(|(dd, dpsi)| MotionDelta::new(dd, dpsi))
        .collect::<pedaltrack_core::Result<Vec<_>>>()
        .py()?;
    let traj = model::integrate_deltas(Pose2D::new(start.0, start.1, start.2), &deltas).py()?;
    Ok(traj_rows(&traj))
}

/// Strapdown dead reckoning resampled every `interval` seconds.
#[pyfunction]
#[pyo3(signature = (imu, heading = 0.0, speed = 0.0, theta = 0.0, interval = 1.0))]
fn dead_reckon(
    imu: Vec<Row>,
    heading: f64,
    speed: f64,
    theta: f64,
    interval: f64,
) -> PyResult<Vec<TrajRow>> {
    let start = NavState::for_bike(heading, theta, speed);
    let traj = pipeline::track_dr(&to_samples(&imu), &start, interval).py()?;
    Ok(traj_rows(&traj))
}

/// Pseudo wheel speed readings `(t_mid, v, sigma2, period)`. `config` and
/// `geom` are optional TOML tables.
#[pyfunction]
#[pyo3(signature = (imu, config = None, geom = None))]
fn pws_scan(
    imu: Vec<Row>,
    config: Option<&str>,
    geom: Option<&str>,
) -> PyResult<(Vec<TrajRow>, f64)> {
    let cfg: PwsConfig = parse_toml(config)?;
    let geom: BikeGeometry = parse_toml(geom)?;
    let stream = to_samples(&imu);
    let rate = pipeline::stream_rate(&stream).py()?;
    let scan = pws::scan_stream(&stream, &geom, &cfg, rate).py()?;
    let rows = scan
        .readings
        .iter()
        .map(|r| (r.t_mid, r.v, r.sigma2, r.period))
        .collect();
    Ok((rows, scan.tcr))
}

#[pyfunction]
fn fuse_displacement(d_m: f64, var_m: f64, d_p: f64, var_p: f64) -> PyResult<f64> {
    pedaltrack_core::fusion::fuse_displacement(d_m, var_m, d_p, var_p).py()
}

#[pyfunction]
fn ate(est: Vec<TrajRow>, gt: Vec<TrajRow>) -> PyResult<f64> {
    metrics::ate(&to_traj(&est)?, &to_traj(&gt)?).py()
}

#[pyfunction]
#[pyo3(signature = (est, gt, span = metrics::RTE_SPAN))]
fn rte(est: Vec<TrajRow>, gt: Vec<TrajRow>, span: f64) -> PyResult<f64> {
    metrics::rte(&to_traj(&est)?, &to_traj(&gt)?, span).py()
}

#[pyfunction]
fn pde(est: Vec<TrajRow>, gt: Vec<TrajRow>) -> PyResult<f64> {
    metrics::pde(&to_traj(&est)?, &to_traj(&gt)?).py()
}

#[pyfunction]
fn aye(est: Vec<TrajRow>, gt: Vec<TrajRow>) -> PyResult<f64> {
    metrics::aye(&to_traj(&est)?, &to_traj(&gt)?).py()
}

#[pyfunction]
fn cep(errors: Vec<f64>, q: f64) -> PyResult<f64> {
    metrics::cep(&errors, q).py()
}

/// Motion network.
#[pyclass]
struct Model {
    inner: mtimnet::Mtimnet,
}

#[pymethods]
impl Model {
    /// Fresh untrained network; `config` is an optional TOML model table.
    #[new]
    #[pyo3(signature = (config = None))]
    fn new(config: Option<&str>) -> PyResult<Self> {
        let cfg: ModelConfig = parse_toml(config)?;
        Ok(Self {
            inner: mtimnet::Mtimnet::new(cfg).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: mtimnet::load_checkpoint(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        mtimnet::save_checkpoint(&self.inner, &path).py()
    }

    #[getter]
    fn window(&self) -> usize {
        self.inner.config().window
    }

    /// Trains on `(window rows, (dd, dpsi))` pairs; returns per-epoch losses.
    /// `config` is an optional TOML train table.
    #[pyo3(signature = (data, config = None))]
    fn train(
        &mut self,
        py: Python<'_>,
        data: Vec<(Vec<Row>, (f64, f64))>,
        config: Option<&str>,
    ) -> PyResult<Vec<f64>> {
        let cfg: TrainConfig = parse_toml(config)?;
        let n = self.inner.config().window;
        let pairs = data
            .iter()
            .map(|(w, (dd, dpsi))| {
                Ok((
                    ImuWindow::new(to_samples(w), n)?,
                    MotionDelta::new(*dd, *dpsi)?,
                ))
            })
            .collect::<pedaltrack_core::Result<Vec<_>>>()
            .py()?;
        let model = &mut self.inner;
        let outcome = py.detach(|| -> pedaltrack_core::Result<_> {
            model.fit_input_scaling(&pairs.iter().map(|(w, _)| w).collect::<Vec<_>>())?;
            mtimnet::train_model(model, &cfg, &pairs)
        });
        Ok(outcome.py()?.epoch_losses)
    }

    /// `(dd, dpsi, var_dd, var_dpsi)` for one window, residual-corrected.
    fn predict(&self, window: Vec<Row>) -> PyResult<(f64, f64, f64, f64)> {
        let w = ImuWindow::new(to_samples(&window), self.inner.config().window).py()?;
        let est = self.inner.predict(&w).py()?;
        let d = corrected_delta(&est).py()?;
        Ok((d.dd, d.dpsi, est.var_dd(), est.var_dpsi()))
    }

    /// Tracks a stream; `mode` is one of `model`, `model+pws-equal`,
    /// `model+pws-ivw`.
    #[pyo3(signature = (imu, mode = "model", heading = 0.0))]
    fn track(&self, imu: Vec<Row>, mode: &str, heading: f64) -> PyResult<Vec<TrajRow>> {
        let mode: TrackMode = mode.parse().py()?;
        if mode == TrackMode::DeadReckoning {
            return Err(PyValueError::new_err("use dead_reckon for mode dr"));
        }
        let fusion: FusionMode = mode.fusion();
        let track = pipeline::track_model(
            &to_samples(&imu),
            &self.inner,
            Pose2D::new(0.0, 0.0, heading),
            fusion,
            &BikeGeometry::default(),
            &PwsConfig::default(),
        )
        .py()?;
        Ok(traj_rows(&track.traj))
    }
}

#[pymodule]
fn pedaltrack(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Ride>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_deltas, m)?)?;
    m.add_function(wrap_pyfunction!(dead_reckon, m)?)?;
    m.add_function(wrap_pyfunction!(pws_scan, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_displacement, m)?)?;
    m.add_function(wrap_pyfunction!(ate, m)?)?;
    m.add_function(wrap_pyfunction!(rte, m)?)?;
    m.add_function(wrap_pyfunction!(pde, m)?)?;
    m.add_function(wrap_pyfunction!(aye, m)?)?;
    m.add_function(wrap_pyfunction!(cep, m)?)?;
    Ok(())
}
