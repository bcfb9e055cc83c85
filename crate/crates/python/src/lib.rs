//! Python bindings: distributions, targets, losses, calibration metrics, noise
//! injection and experiment runs. Distributions cross the boundary as lists of
//! floats and are validated on the way in.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use selflc::calibration::{self, PredictionSet};
use selflc::config::ExperimentConfig;
use selflc::loss::{self, LossContext};
use selflc::noise;
use selflc::prob;
use selflc::target::{self, LossName};
use selflc::{ConfidenceMode, Error, LocalTrust, Logits, ModKind, OneHot, ProbDist, TrustParams};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPyErr<T> {
    fn or_py(self) -> PyResult<T>;
}

impl<T> OrPyErr<T> for selflc::Result<T> {
    fn or_py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn dist(v: Vec<f64>) -> PyResult<ProbDist> {
    ProbDist::new(v).or_py()
}

fn logits(v: Vec<f64>) -> PyResult<Logits> {
    Logits::new(v).or_py()
}

fn mode(name: &str) -> PyResult<ConfidenceMode> {
    match name {
        "top" => Ok(ConfidenceMode::Top),
        "all" => Ok(ConfidenceMode::All),
        other => Err(PyValueError::new_err(format!("mode must be 'top' or 'all', got {other:?}"))),
    }
}

fn local(name: &str) -> PyResult<LocalTrust> {
    match name {
        "constant_one" => Ok(LocalTrust::ConstantOne),
        "conf_top" => Ok(LocalTrust::ConfTop),
        "conf_all" => Ok(LocalTrust::ConfAll),
        other => Err(PyValueError::new_err(format!(
            "local trust must be 'constant_one', 'conf_top' or 'conf_all', got {other:?}"
        ))),
    }
}

fn kind(name: &str, epsilon: f64) -> PyResult<ModKind> {
    let name: LossName = match name {
        "cce" => LossName::Cce,
        "ls" => LossName::Ls,
        "cp" => LossName::Cp,
        "boot_soft" => LossName::BootSoft,
        "non_self_lc" => LossName::NonSelfLc,
        "proselflc" => LossName::Proselflc,
        other => return Err(PyValueError::new_err(format!("unknown loss kind {other:?}"))),
    };
    let k = ModKind::from_name(name, epsilon);
    k.validate().or_py()?;
    if k.epsilon().is_none() && epsilon != 0.0 {
        return Err(PyValueError::new_err(format!("{} takes no fixed epsilon", k.name())));
    }
    Ok(k)
}

/// Progressive trust schedule: `g(t) = 1/(1+exp(-(t/Γ-Θ)·B))` times a local trust.
#[pyclass(name = "Trust", from_py_object)]
#[derive(Clone)]
struct PyTrust(TrustParams);

#[pymethods]
impl PyTrust {
    #[new]
    #[pyo3(signature = (total_iters, iter=0, growth=16.0, inflection=0.5, local_trust="conf_all", temperature=1.0))]
    fn new(
        total_iters: u64,
        iter: u64,
        growth: f64,
        inflection: f64,
        local_trust: &str,
        temperature: f64,
    ) -> PyResult<Self> {
        let mut p = TrustParams::new(total_iters, growth, local(local_trust)?)
            .at_iter(iter)
            .with_temperature(temperature);
        p.inflection = inflection;
        p.validate().or_py()?;
        Ok(PyTrust(p))
    }

    /// The global trust `g(t)`.
    fn global_trust(&self) -> PyResult<f64> {
        target::global_trust(&self.0).or_py()
    }

    #[getter]
    fn iter(&self) -> u64 {
        self.0.iter
    }

    #[getter]
    fn total_iters(&self) -> u64 {
        self.0.total_iters
    }

    #[getter]
    fn temperature(&self) -> f64 {
        self.0.temperature
    }

    fn __repr__(&self) -> String {
        let p = &self.0;
        format!(
            "Trust(iter={}, total_iters={}, growth={}, inflection={}, local_trust='{}', temperature={})",
            p.iter,
            p.total_iters,
            p.growth,
            p.inflection,
            p.local.name(),
            p.temperature
        )
    }
}

/// An experiment configuration, loaded from TOML or JSON.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig(ExperimentConfig);

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_toml(text).or_py().map(PyConfig)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_json(text).or_py().map(PyConfig)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ExperimentConfig::load(&path).or_py().map(PyConfig)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.seed = seed;
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

#[pyfunction]
#[pyo3(signature = (z, temperature=1.0))]
fn softmax(z: Vec<f64>, temperature: f64) -> PyResult<Vec<f64>> {
    Ok(prob::softmax(&logits(z)?, temperature).or_py()?.into_vec())
}

#[pyfunction]
fn entropy(p: Vec<f64>) -> PyResult<f64> {
    Ok(prob::entropy(&dist(p)?))
}

#[pyfunction]
fn cross_entropy(target: Vec<f64>, p: Vec<f64>) -> PyResult<f64> {
    prob::cross_entropy(&dist(target)?, &dist(p)?).or_py()
}

#[pyfunction]
fn kl_divergence(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    prob::kl_divergence(&dist(a)?, &dist(b)?).or_py()
}

#[pyfunction]
#[pyo3(signature = (p, mode="top"))]
fn confidence(p: Vec<f64>, mode: &str) -> PyResult<f64> {
    Ok(prob::confidence(&dist(p)?, self::mode(mode)?))
}

/// `(target, trust_used, semantic_class)` for `kind` with label `label` of `classes`.
#[pyfunction]
#[pyo3(signature = (kind, label, classes, epsilon=0.0, knowledge=None, trust=None))]
fn build_target(
    kind: &str,
    label: usize,
    classes: usize,
    epsilon: f64,
    knowledge: Option<Vec<f64>>,
    trust: Option<PyTrust>,
) -> PyResult<(Vec<f64>, f64, usize)> {
    let q = OneHot::new(label, classes).or_py()?;
    let k = knowledge.map(dist).transpose()?;
    let t = target::build_target(&self::kind(kind, epsilon)?, &q, k.as_ref(), trust.as_ref().map(|t| &t.0)).or_py()?;
    Ok((t.dist.into_vec(), t.trust_used, t.semantic_class))
}

fn context<'a>(trust: Option<&'a PyTrust>, at: bool, teacher: Option<&'a ProbDist>) -> LossContext<'a> {
    LossContext {
        trust: trust.map(|t| &t.0),
        at,
        teacher,
        local_on_tempered: true,
    }
}

/// Loss at logits `z`: a dict with `total`, `fit_term`, `reg_term`, `kl_form_total`.
#[pyfunction]
#[pyo3(signature = (kind, label, z, epsilon=0.0, trust=None, at=false, teacher=None))]
#[allow(clippy::too_many_arguments)]
fn loss_value<'py>(
    py: Python<'py>,
    kind: &str,
    label: usize,
    z: Vec<f64>,
    epsilon: f64,
    trust: Option<PyTrust>,
    at: bool,
    teacher: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let z = logits(z)?;
    let q = OneHot::new(label, z.len()).or_py()?;
    let teacher = teacher.map(dist).transpose()?;
    let ctx = context(trust.as_ref(), at, teacher.as_ref());
    let b = loss::loss_value(&self::kind(kind, epsilon)?, q, &z, &ctx).or_py()?;
    let d = PyDict::new(py);
    d.set_item("total", b.total)?;
    d.set_item("fit_term", b.fit_term)?;
    d.set_item("reg_term", b.reg_term)?;
    d.set_item("kl_form_total", b.kl_form_total)?;
    Ok(d)
}

/// Gradient of the loss with respect to the logits, target held fixed.
#[pyfunction]
#[pyo3(signature = (kind, label, z, epsilon=0.0, trust=None, at=false, teacher=None))]
fn loss_gradient(
    kind: &str,
    label: usize,
    z: Vec<f64>,
    epsilon: f64,
    trust: Option<PyTrust>,
    at: bool,
    teacher: Option<Vec<f64>>,
) -> PyResult<Vec<f64>> {
    let z = logits(z)?;
    let q = OneHot::new(label, z.len()).or_py()?;
    let teacher = teacher.map(dist).transpose()?;
    let ctx = context(trust.as_ref(), at, teacher.as_ref());
    loss::loss_gradient(&self::kind(kind, epsilon)?, q, &z, &ctx).or_py()
}

fn prediction_set(probs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<PredictionSet> {
    if probs.len() != labels.len() {
        return Err(PyValueError::new_err(format!(
            "{} distributions but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let rows = probs
        .into_iter()
        .zip(labels)
        .map(|(p, y)| Ok((dist(p)?, y)))
        .collect::<PyResult<Vec<_>>>()?;
    PredictionSet::new(rows).or_py()
}

#[pyfunction]
#[pyo3(signature = (probs, labels, mode="top"))]
fn gsce(probs: Vec<Vec<f64>>, labels: Vec<usize>, mode: &str) -> PyResult<f64> {
    Ok(calibration::gsce(&prediction_set(probs, labels)?, self::mode(mode)?))
}

/// `(count, conf, accuracy, signed_gap)`.
type Bin = (usize, f64, f64, f64);

/// `(ece, bins)` where each bin is `(count, conf, accuracy, signed_gap)`.
#[pyfunction]
#[pyo3(signature = (probs, labels, m=10, mode="top"))]
fn ece(
    probs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    m: usize,
    mode: &str,
) -> PyResult<(f64, Vec<Bin>)> {
    let report = calibration::ece_with_mode(&prediction_set(probs, labels)?, m, self::mode(mode)?).or_py()?;
    let bins = report
        .bins
        .iter()
        .map(|b| (b.count, b.conf_mean, b.accuracy, b.signed_gap))
        .collect();
    Ok((report.ece, bins))
}

type Records = Vec<(usize, usize, usize, bool)>;

fn records(r: Vec<noise::CorruptionRecord>) -> Records {
    r.into_iter().map(|c| (c.index, c.clean, c.given, c.flipped)).collect()
}

/// `(index, clean, given, flipped)` per row.
#[pyfunction]
fn inject_symmetric(labels: Vec<usize>, classes: usize, rate: f64, seed: u64) -> PyResult<Records> {
    noise::inject_symmetric(&labels, classes, rate, seed).or_py().map(records)
}

#[pyfunction]
fn inject_asymmetric(
    labels: Vec<usize>,
    classes: usize,
    rate: f64,
    pairs: Vec<(usize, usize)>,
    seed: u64,
) -> PyResult<Records> {
    noise::inject_asymmetric(&labels, classes, rate, &pairs, seed).or_py().map(records)
}

/// Train `config`, write its artifacts into `out` and return the final metrics.
#[pyfunction]
fn run<'py>(py: Python<'py>, config: PyConfig, out: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let result = py.detach(|| selflc::harness::run(&config.0, &out)).or_py()?;
    let m = &result.metrics;
    let d = PyDict::new(py);
    d.set_item("method", &m.method)?;
    d.set_item("iterations", m.iterations)?;
    d.set_item("dataset_fingerprint", &m.dataset_fingerprint)?;
    d.set_item("train_noise_rate", m.train_noise_rate)?;
    d.set_item("test_accuracy", m.test_accuracy)?;
    d.set_item("test_conf_top", m.test_conf_top)?;
    d.set_item("test_conf_all", m.test_conf_all)?;
    d.set_item("gsce_top", m.gsce_top)?;
    d.set_item("gsce_all", m.gsce_all)?;
    d.set_item("ece_top", m.ece_top)?;
    d.set_item("ece_all", m.ece_all)?;
    d.set_item("correct_fitting", m.correct_fitting)?;
    d.set_item("wrong_fitting", m.wrong_fitting)?;
    d.set_item("semantic_correction", m.semantic_correction)?;
    Ok(d)
}

#[pymodule]
fn selflc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrust>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(confidence, m)?)?;
    m.add_function(wrap_pyfunction!(build_target, m)?)?;
    m.add_function(wrap_pyfunction!(loss_value, m)?)?;
    m.add_function(wrap_pyfunction!(loss_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(gsce, m)?)?;
    m.add_function(wrap_pyfunction!(ece, m)?)?;
    m.add_function(wrap_pyfunction!(inject_symmetric, m)?)?;
    m.add_function(wrap_pyfunction!(inject_asymmetric, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
