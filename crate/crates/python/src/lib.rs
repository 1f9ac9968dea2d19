//! Python bindings: datasets, models, training, threshold metrics and the
//! synthetic scenario generator.

use std::collections::HashMap;
use std::path::PathBuf;

use floodnet::eval::{threshold_grid, threshold_metrics};
use floodnet::fastgrnn::FastGrnnParams;
use floodnet::floodgen::{generate_scenario, ScenarioConfig};
use floodnet::hybrid::{load_model, save_model};
use floodnet::{Error, Tensor};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Dimension { .. } | Error::Window { .. } => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io(_) | Error::Load(_) | Error::Parse { .. } | Error::EmptyInput(_) => {
            PyIOError::new_err(e.to_string())
        }
        _ => PyArithmeticError::new_err(e.to_string()),
    }
}

fn model_config(pairs: Option<HashMap<String, String>>) -> PyResult<floodnet::ModelConfig> {
    let mut cfg = floodnet::ModelConfig::default();
    let mut pairs: Vec<_> = pairs.unwrap_or_default().into_iter().collect();
    pairs.sort();
    for (k, v) in pairs {
        cfg.set(&k, &v).map_err(err)?;
    }
    Ok(cfg)
}

/// Packed `N×V×T` windows with binary labels.
#[pyclass(module = "floodnet_py")]
pub struct Dataset {
    inner: floodnet::Dataset,
}

#[pymethods]
impl Dataset {
    #[new]
    fn new(n_vars: usize, seq_len: usize) -> Self {
        Self { inner: floodnet::Dataset::new(n_vars, seq_len) }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: floodnet::Dataset::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    /// Appends one `V·T` row-major window.
    #[pyo3(signature = (features, label, sensor_id = String::from("S"), t_end = 0))]
    fn push(&mut self, features: Vec<f64>, label: u8, sensor_id: String, t_end: u32) -> PyResult<()> {
        let meta = floodnet::dataset::SampleMeta {
            sensor_id,
            event: 0,
            t_end,
            window_end: chrono_epoch(),
        };
        self.inner.push(&features, label, meta).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let [n, v, t] = self.inner.shape();
        (n, v, t)
    }

    #[getter]
    fn labels(&self) -> Vec<u8> {
        self.inner.labels().to_vec()
    }

    fn features(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("index {i} out of range")));
        }
        Ok(self.inner.features(i).to_vec())
    }

    fn sensor_id(&self, i: usize) -> PyResult<String> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("index {i} out of range")));
        }
        Ok(self.inner.meta(i).sensor_id.clone())
    }

    fn __repr__(&self) -> String {
        let [n, v, t] = self.inner.shape();
        let b = self.inner.balance();
        format!("Dataset(n={n}, vars={v}, steps={t}, positives={})", b.positives)
    }
}

fn chrono_epoch() -> chrono::NaiveDateTime {
    chrono::DateTime::UNIX_EPOCH.naive_utc()
}

/// A trained or freshly initialised FastGRNN-FCN classifier.
#[pyclass(module = "floodnet_py")]
pub struct Model {
    inner: floodnet::Model,
}

#[pymethods]
impl Model {
    /// Randomly initialised model; `config` maps option names to values.
    #[new]
    #[pyo3(signature = (config = None))]
    fn new(config: Option<HashMap<String, String>>) -> PyResult<Self> {
        let cfg = model_config(config)?;
        cfg.validate().map_err(err)?;
        Ok(Self { inner: floodnet::Model::init(cfg).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_model(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&self.inner, &path).map_err(err)
    }

    /// `P(flooded)` per sample of `data`.
    fn predict(&self, data: &Dataset) -> PyResult<Vec<f64>> {
        self.inner.predict_dataset(&data.inner).map_err(err)
    }

    /// `P(flooded)` for one raw `V·T` row-major window.
    fn predict_window(&self, window: Vec<f64>) -> PyResult<f64> {
        let c = &self.inner.config;
        let batch = Tensor::new(&[1, c.n_vars, c.seq_len], window).map_err(err)?;
        let probs = self.inner.predict(&batch).map_err(err)?;
        Ok(probs.data()[1])
    }

    #[getter]
    fn config(&self) -> HashMap<String, String> {
        self.inner.config.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    fn __repr__(&self) -> String {
        let c = &self.inner.config;
        format!("Model(variant={}, vars={}, steps={})", c.variant, c.n_vars, c.seq_len)
    }
}

type History = Vec<(f64, f64, f64, f64)>;

/// Trains with early stopping; returns the model and per-epoch
/// `(train_loss, train_acc, val_loss, val_acc)` rows.
#[pyfunction]
#[pyo3(signature = (train, val, config = None))]
fn train(
    py: Python<'_>,
    train: &Dataset,
    val: &Dataset,
    config: Option<HashMap<String, String>>,
) -> PyResult<(Model, History)> {
    let mut cfg = model_config(config)?;
    let [_, v, t] = train.inner.shape();
    cfg.n_vars = v;
    cfg.seq_len = t;
    let (a, b) = (train.inner.clone(), val.inner.clone());
    let (model, report) = py
        .detach(move || floodnet::hybrid::train(&cfg, &a, &b))
        .map_err(err)?;
    let rows = report
        .epochs
        .iter()
        .map(|e| (e.train_loss, e.train_acc, e.val_loss, e.val_acc))
        .collect();
    Ok((Model { inner: model }, rows))
}

/// Threshold metrics of `scores` on the 101-point grid.
#[pyfunction]
fn evaluate(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<HashMap<&'static str, f64>> {
    let m = threshold_metrics(&scores, &labels, &threshold_grid()).map_err(err)?;
    let (p, r) = floodnet::eval::precision_recall(&m.at_half);
    let acc = floodnet::eval::accuracy(&m.at_half).map_err(err)?;
    Ok(HashMap::from([
        ("accuracy", acc),
        ("precision", p),
        ("recall", r),
        ("max_accuracy", m.max_accuracy),
        ("max_f", m.f.max_f),
        ("critical_threshold", m.f.critical_threshold),
        ("f_area", m.f.area),
        ("pr_area", m.pr.area),
    ]))
}

/// Synthetic scenario with the default settings; returns
/// `(train, val, test)` datasets.
#[pyfunction]
#[pyo3(signature = (seed, n_sensors = None, stride = None))]
fn simulate(
    py: Python<'_>,
    seed: u64,
    n_sensors: Option<usize>,
    stride: Option<usize>,
) -> PyResult<(Dataset, Dataset, Dataset)> {
    let mut cfg = ScenarioConfig::default();
    if let Some(n) = n_sensors {
        cfg.n_sensors = n;
    }
    if let Some(s) = stride {
        cfg.window.stride = s;
    }
    let data = py
        .detach(move || generate_scenario(&cfg, seed).and_then(|s| s.datasets(&cfg, seed)))
        .map_err(err)?;
    Ok((
        Dataset { inner: data.train },
        Dataset { inner: data.val },
        Dataset { inner: data.test },
    ))
}

/// One FastGRNN step for a single-unit, single-input cell.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn fastgrnn_step(w: f64, u: f64, b_z: f64, b_h: f64, zeta_raw: f64, nu_raw: f64, x: f64, h: f64) -> PyResult<f64> {
    let mut p = FastGrnnParams::zeros(1, 1);
    p.w = Tensor::full(&[1, 1], w);
    p.u = Tensor::full(&[1, 1], u);
    p.b_z = Tensor::full(&[1], b_z);
    p.b_h = Tensor::full(&[1], b_h);
    p.zeta_raw = zeta_raw;
    p.nu_raw = nu_raw;
    Ok(p.cell_step(&[x], &[h]).map_err(err)?[0])
}

#[pymodule]
fn floodnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fastgrnn_step, m)?)?;
    Ok(())
}
