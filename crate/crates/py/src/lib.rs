//! Python bindings. Matrices cross the boundary as lists of row lists.

use std::str::FromStr;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use imb_dpgm::adversary::AdvConfig;
use imb_dpgm::autodiff::Matrix;
use imb_dpgm::baseline::Resampler;
use imb_dpgm::data::{self, Dataset, NormStats};
use imb_dpgm::metrics::{self, MetricsReport};
use imb_dpgm::model::{fit_with_adversary, Checkpoint, ModelConfig, TrainTrace, VariationalClassifier};
use imb_dpgm::report::{self, TsneParams};
use imb_dpgm::resampling;
use imb_dpgm::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Diverged(_) | Error::NonFinite(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    Matrix::from_rows(rows).map_err(py_err)
}

/// Accepts a `Dataset` or a list of feature rows.
fn features_of(obj: &Bound<'_, PyAny>) -> PyResult<Matrix> {
    if let Ok(ds) = obj.cast::<PyDataset>() {
        return Ok(ds.borrow().inner.features.clone());
    }
    from_rows(&obj.extract::<Vec<Vec<f64>>>()?)
}

#[pyclass(name = "Dataset", module = "imb_dpgm_py")]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (features, labels, feature_names = None))]
    fn new(features: Vec<Vec<f64>>, labels: Vec<u8>, feature_names: Option<Vec<String>>) -> PyResult<Self> {
        let x = from_rows(&features)?;
        let names = feature_names.unwrap_or_else(|| (0..x.cols()).map(|j| format!("f{j}")).collect());
        Ok(PyDataset {
            inner: Dataset::new(x, labels, names).map_err(py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, label_col = "Class"))]
    fn from_csv(path: &str, label_col: &str) -> PyResult<Self> {
        Ok(PyDataset {
            inner: data::load_csv(path, label_col).map_err(py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n_major, n_minor, d, separation = 1.0, seed = 0))]
    fn synth(n_major: usize, n_minor: usize, d: usize, separation: f64, seed: u64) -> PyResult<Self> {
        Ok(PyDataset {
            inner: data::synth_imbalanced(n_major, n_minor, d, separation, seed).map_err(py_err)?,
        })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        data::write_csv(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.features)
    }

    #[getter]
    fn labels(&self) -> Vec<u8> {
        self.inner.labels.clone()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    /// `[count of label 0, count of label 1]`
    fn class_counts(&self) -> [usize; 2] {
        self.inner.class_counts()
    }

    #[pyo3(signature = (fractions = (0.7, 0.15, 0.15), seed = 42))]
    fn split(&self, fractions: (f64, f64, f64), seed: u64) -> PyResult<(Self, Self, Self)> {
        let sp = data::stratified_split(&self.inner, [fractions.0, fractions.1, fractions.2], seed)
            .map_err(py_err)?;
        let part = |idx: &[usize]| PyDataset {
            inner: self.inner.subset(idx),
        };
        Ok((part(&sp.train), part(&sp.val), part(&sp.test)))
    }

    /// `method` is one of none, undersample, oversample, smote, adasyn.
    #[pyo3(signature = (method, k = 5, seed = 0))]
    fn resample(&self, method: &str, k: usize, seed: u64) -> PyResult<Self> {
        let r = Resampler::from_str(method).map_err(py_err)?;
        Ok(PyDataset {
            inner: r.apply(&self.inner, k, seed).map_err(py_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        let [c0, c1] = self.inner.class_counts();
        format!("Dataset(n={}, d={}, counts=[{c0}, {c1}])", self.inner.n(), self.inner.d())
    }
}

#[pyclass(name = "NormStats", module = "imb_dpgm_py")]
struct PyNormStats {
    inner: NormStats,
}

#[pymethods]
impl PyNormStats {
    #[staticmethod]
    #[pyo3(signature = (train, clip_k = 5.0))]
    fn fit(train: &PyDataset, clip_k: f64) -> PyResult<Self> {
        Ok(PyNormStats {
            inner: data::fit_normalize(&train.inner, clip_k).map_err(py_err)?,
        })
    }

    fn apply(&self, ds: &PyDataset) -> PyResult<PyDataset> {
        Ok(PyDataset {
            inner: data::apply_normalize(&ds.inner, &self.inner).map_err(py_err)?,
        })
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean.clone()
    }

    #[getter]
    fn std(&self) -> Vec<f64> {
        self.inner.std.clone()
    }

    #[getter]
    fn constant_features(&self) -> Vec<usize> {
        self.inner.constant_features.clone()
    }
}

#[pyclass(name = "Classifier", module = "imb_dpgm_py")]
struct PyClassifier {
    model: VariationalClassifier,
    trace: TrainTrace,
}

#[pymethods]
impl PyClassifier {
    /// Trains on `train`, tracing loss on `val`. `config` is a JSON object with
    /// model settings; keyword arguments override it.
    #[staticmethod]
    #[pyo3(signature = (train, val, config = None, epochs = None, seed = None, beta_rec = None, adversary = false))]
    fn fit(
        py: Python<'_>,
        train: &PyDataset,
        val: &PyDataset,
        config: Option<&str>,
        epochs: Option<usize>,
        seed: Option<u64>,
        beta_rec: Option<f64>,
        adversary: bool,
    ) -> PyResult<Self> {
        let mut cfg: ModelConfig = match config {
            Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => ModelConfig::default(),
        };
        cfg.epochs = epochs.unwrap_or(cfg.epochs);
        cfg.seed = seed.unwrap_or(cfg.seed);
        cfg.beta_rec = beta_rec.unwrap_or(cfg.beta_rec);
        let adv = AdvConfig {
            enabled: adversary,
            ..AdvConfig::default()
        };
        let (tr, va) = (&train.inner, &val.inner);
        let out = py
            .detach(|| fit_with_adversary(tr, va, &cfg, Some(&adv)))
            .map_err(py_err)?;
        Ok(PyClassifier {
            model: out.model,
            trace: out.trace,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ck = Checkpoint::load(path).map_err(py_err)?;
        Ok(PyClassifier {
            model: ck.to_model().map_err(py_err)?,
            trace: TrainTrace::default(),
        })
    }

    #[pyo3(signature = (path, feature_names = None))]
    fn save(&self, path: &str, feature_names: Option<Vec<String>>) -> PyResult<()> {
        let names = feature_names
            .unwrap_or_else(|| (0..self.model.input_dim).map(|j| format!("f{j}")).collect());
        Checkpoint::from_model(&self.model, &names, None)
            .save(path)
            .map_err(py_err)
    }

    fn predict_proba(&self, x: &Bound<'_, PyAny>) -> PyResult<Vec<f64>> {
        self.model.predict_proba(&features_of(x)?).map_err(py_err)
    }

    /// Encoder means and log-variances.
    fn encode(&self, x: &Bound<'_, PyAny>) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let (mu, lv) = self.model.encode(&features_of(x)?).map_err(py_err)?;
        Ok((to_rows(&mu), to_rows(&lv)))
    }

    /// `(iteration, train_loss, val_loss)` per recorded point.
    #[getter]
    fn trace(&self) -> Vec<(usize, f64, f64)> {
        self.trace
            .records
            .iter()
            .map(|r| (r.iteration, r.train_loss, r.test_loss))
            .collect()
    }

    #[getter]
    fn config(&self) -> PyResult<String> {
        serde_json::to_string(&self.model.config).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.model.latent_dim()
    }
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    metrics::roc_auc(&scores, &labels).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (scores, labels, threshold = 0.5))]
fn evaluate<'py>(py: Python<'py>, scores: Vec<f64>, labels: Vec<u8>, threshold: f64) -> PyResult<Bound<'py, PyDict>> {
    let m = MetricsReport::compute(&scores, &labels, threshold).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("auc", m.auc)?;
    d.set_item("precision", m.precision)?;
    d.set_item("recall", m.recall)?;
    d.set_item("f1", m.f1)?;
    d.set_item("threshold", m.threshold)?;
    d.set_item("tp", m.confusion.tp)?;
    d.set_item("fp", m.confusion.fp)?;
    d.set_item("tn", m.confusion.tn)?;
    d.set_item("fn", m.confusion.fn_)?;
    d.set_item("flags", m.flags)?;
    Ok(d)
}

/// `(w_minority, w_majority, minority_label)`
#[pyfunction]
fn class_weights(labels: Vec<u8>) -> PyResult<(f64, f64, u8)> {
    let w = resampling::class_weights(&labels).map_err(py_err)?;
    Ok((w.w_minority, w.w_majority, w.minority_label))
}

/// 2-D projection plus the top-two eigenvalues.
#[pyfunction]
fn pca2d(points: Vec<Vec<f64>>, labels: Vec<u8>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let emb = report::pca2d(&from_rows(&points)?, &labels).map_err(py_err)?;
    Ok((to_rows(&emb.coords), emb.eigenvalues))
}

/// 2-D coordinates plus the KL value at each iteration.
#[pyfunction]
#[pyo3(signature = (points, labels, perplexity = 30.0, iterations = 1000, seed = 0))]
fn tsne(
    py: Python<'_>,
    points: Vec<Vec<f64>>,
    labels: Vec<u8>,
    perplexity: f64,
    iterations: usize,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let x = from_rows(&points)?;
    let params = TsneParams {
        perplexity,
        iterations,
        seed,
        ..TsneParams::default()
    };
    let emb = py
        .detach(|| report::tsne_exact(&x, &labels, &params))
        .map_err(py_err)?;
    Ok((to_rows(&emb.coords), emb.kl_history))
}

#[pyfunction]
fn silhouette(points: Vec<Vec<f64>>, labels: Vec<u8>) -> PyResult<f64> {
    report::silhouette(&from_rows(&points)?, &labels).map_err(py_err)
}

#[pymodule]
fn imb_dpgm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyNormStats>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(class_weights, m)?)?;
    m.add_function(wrap_pyfunction!(pca2d, m)?)?;
    m.add_function(wrap_pyfunction!(tsne, m)?)?;
    m.add_function(wrap_pyfunction!(silhouette, m)?)?;
    Ok(())
}
