//! Python bindings: records in and out as tuples, predictions and configs as
//! classes.

use std::collections::{BTreeMap, BTreeSet};

use graphlink_core as core;
use core::eval::{MatchMode, MetricsReport};
use core::{AttributeKind, BrowsingRecord, DeviceType, GroundTruth, LabeledPairs};
use pyo3::exceptions::{PyKeyError, PyOSError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: core::Error) -> PyErr {
    match e {
        core::Error::Io(io) => PyOSError::new_err(io.to_string()),
        core::Error::UnknownDevice(d) => PyKeyError::new_err(d),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// `(device_id, kind, value, count)` or the same plus a device type.
#[derive(FromPyObject)]
enum RecordTuple {
    Typed(String, String, String, u64, String),
    Plain(String, String, String, u64),
}

fn parse_type(t: &str) -> PyResult<DeviceType> {
    match t {
        "mobile" => Ok(DeviceType::Mobile),
        "desktop" => Ok(DeviceType::Desktop),
        "unknown" | "" => Ok(DeviceType::Unknown),
        other => Err(PyValueError::new_err(format!("unknown device type {other:?}"))),
    }
}

fn parse_kind(k: &str) -> PyResult<AttributeKind> {
    match k {
        "ip" => Ok(AttributeKind::Ip),
        "domain" => Ok(AttributeKind::Domain),
        other => Err(to_py(core::Error::UnknownAttributeKind(other.to_string()))),
    }
}

fn from_tuples(records: Vec<RecordTuple>) -> PyResult<Vec<BrowsingRecord>> {
    let recs = records
        .into_iter()
        .map(|r| {
            let (d, k, v, c, t) = match r {
                RecordTuple::Typed(d, k, v, c, t) => (d, k, v, c, parse_type(&t)?),
                RecordTuple::Plain(d, k, v, c) => (d, k, v, c, DeviceType::Unknown),
            };
            let attribute = core::Attribute::new(parse_kind(&k)?, v);
            Ok(BrowsingRecord::new(d, attribute, c).with_type(t))
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(core::dataset::aggregate(recs))
}

type Tuple = (String, String, String, u64, String);

fn to_tuples(records: &[BrowsingRecord]) -> Vec<Tuple> {
    records
        .iter()
        .map(|r| {
            (
                r.device_id.clone(),
                r.attribute.kind().as_str().to_string(),
                r.attribute.value().to_string(),
                r.count,
                r.device_type.as_str().to_string(),
            )
        })
        .collect()
}

fn truth_from(map: BTreeMap<String, String>) -> GroundTruth {
    map.into_iter().collect()
}

fn labels_from(pairs: Option<Vec<(String, String)>>) -> Option<LabeledPairs> {
    pairs.map(|pairs| LabeledPairs { pairs })
}

fn match_mode(mode: &str) -> PyResult<MatchMode> {
    match mode {
        "strict" => Ok(MatchMode::Strict),
        "lenient" => Ok(MatchMode::Lenient),
        other => Err(PyValueError::new_err(format!("unknown match mode {other:?}"))),
    }
}

fn report_dict(r: &MetricsReport) -> BTreeMap<&'static str, f64> {
    let m = &r.metrics;
    let c = &r.confusion;
    BTreeMap::from([
        ("accuracy", m.accuracy),
        ("precision", m.precision),
        ("recall", m.recall),
        ("f_score", m.f_score),
        ("tp", c.tp as f64),
        ("fp", c.fp as f64),
        ("tn", c.tn as f64),
        ("fn", c.fn_ as f64),
    ])
}

#[pyclass(name = "LinkerConfig", from_py_object)]
#[derive(Clone)]
struct PyLinkerConfig {
    inner: core::LinkerConfig,
}

#[pymethods]
impl PyLinkerConfig {
    #[new]
    #[pyo3(signature = (k=2, variant="ip", weight_mode="normalized", alpha=0.15, scorer="walk", supervised=false, fixed_threshold=None, rng_seed=0, cross_type=true))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        k: usize,
        variant: &str,
        weight_mode: &str,
        alpha: f64,
        scorer: &str,
        supervised: bool,
        fixed_threshold: Option<f64>,
        rng_seed: u64,
        cross_type: bool,
    ) -> PyResult<Self> {
        let scorer = match scorer {
            "walk" => core::Scorer::RandomWalk,
            "bhattacharyya" => core::Scorer::Bhattacharyya,
            other => return Err(PyValueError::new_err(format!("unknown scorer {other:?}"))),
        };
        let inner = core::LinkerConfig {
            k,
            variant: variant.parse().map_err(to_py)?,
            weight_mode: weight_mode.parse().map_err(to_py)?,
            walk: core::RwwrConfig {
                alpha,
                ..Default::default()
            },
            scorer,
            supervised,
            fixed_threshold,
            rng_seed,
            cross_type,
            ..Default::default()
        };
        inner.validate().map_err(to_py)?;
        Ok(PyLinkerConfig { inner })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.walk.alpha
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "Prediction", from_py_object)]
#[derive(Clone)]
struct PyPrediction {
    inner: core::Prediction,
}

#[pymethods]
impl PyPrediction {
    #[getter]
    fn groups(&self) -> Vec<Vec<String>> {
        self.inner.groups.clone()
    }

    #[getter]
    fn no_match(&self) -> BTreeSet<String> {
        self.inner.no_match.clone()
    }

    fn group_of(&self, device_id: &str) -> Option<Vec<String>> {
        self.inner.group_of(device_id).map(<[String]>::to_vec)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyPrediction {
            inner: core::Prediction::load(path).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.device_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "Prediction(groups={}, no_match={})",
            self.inner.groups.len(),
            self.inner.no_match.len()
        )
    }
}

fn config_or_default(config: Option<&PyLinkerConfig>) -> core::LinkerConfig {
    config.map(|c| c.inner.clone()).unwrap_or_default()
}

#[pyclass(name = "IncrementalLinker", unsendable)]
struct PyIncrementalLinker {
    inner: core::IncrementalLinker,
}

#[pymethods]
impl PyIncrementalLinker {
    #[new]
    #[pyo3(signature = (records, config=None, labels=None))]
    fn new(records: Vec<RecordTuple>, config: Option<PyLinkerConfig>, labels: Option<Vec<(String, String)>>) -> PyResult<Self> {
        let records = from_tuples(records)?;
        let labels = labels_from(labels);
        let inner = core::IncrementalLinker::new(&records, config_or_default(config.as_ref()), labels.as_ref()).map_err(to_py)?;
        Ok(PyIncrementalLinker { inner })
    }

    /// Link one new device. Returns its group, or `None` if it has no match.
    fn link(&mut self, records: Vec<RecordTuple>) -> PyResult<Option<Vec<String>>> {
        let records = from_tuples(records)?;
        Ok(self.inner.link_incoming_device(&records).map_err(to_py)?.group)
    }

    #[getter]
    fn prediction(&self) -> PyPrediction {
        PyPrediction {
            inner: self.inner.prediction().clone(),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.device_count()
    }
}

/// Synthetic records and a `{device_id: user_id}` map.
#[pyfunction]
#[pyo3(signature = (n_users=200, seed=0, shared_ip_fraction=0.0, device_counts=None))]
fn generate_synthetic(
    n_users: usize,
    seed: u64,
    shared_ip_fraction: f64,
    device_counts: Option<Vec<(usize, f64)>>,
) -> PyResult<(Vec<Tuple>, BTreeMap<String, String>)> {
    let mut cfg = core::synthetic::SyntheticConfig {
        n_users,
        seed,
        shared_ip_fraction,
        ..Default::default()
    };
    if let Some(w) = device_counts {
        cfg.device_count_weights = w;
    }
    let (records, truth) = core::synthetic::generate_synthetic(&cfg).map_err(to_py)?;
    let truth = truth.iter().map(|(d, u)| (d.to_string(), u.to_string())).collect();
    Ok((to_tuples(&records), truth))
}

#[pyfunction]
fn load_records(path: &str) -> PyResult<Vec<Tuple>> {
    let format = core::dataset::RecordFormat::from_path(path.as_ref());
    let records = core::dataset::load_records(path, format).map_err(to_py)?;
    Ok(to_tuples(&records))
}

#[pyfunction]
#[pyo3(signature = (records, config=None, labels=None))]
fn track(
    py: Python<'_>,
    records: Vec<RecordTuple>,
    config: Option<PyLinkerConfig>,
    labels: Option<Vec<(String, String)>>,
) -> PyResult<PyPrediction> {
    let records = from_tuples(records)?;
    let labels = labels_from(labels);
    let cfg = config_or_default(config.as_ref());
    let out = py
        .detach(|| core::track(&records, &cfg, labels.as_ref()))
        .map_err(to_py)?;
    Ok(PyPrediction { inner: out.prediction })
}

#[pyfunction]
#[pyo3(signature = (records, config=None, labels=None))]
fn bat_track(
    py: Python<'_>,
    records: Vec<RecordTuple>,
    config: Option<PyLinkerConfig>,
    labels: Option<Vec<(String, String)>>,
) -> PyResult<PyPrediction> {
    let records = from_tuples(records)?;
    let labels = labels_from(labels);
    let cfg = config_or_default(config.as_ref());
    let inner = py
        .detach(|| core::baselines::bat_track(&records, &cfg, labels.as_ref()))
        .map_err(to_py)?;
    Ok(PyPrediction { inner })
}

#[pyfunction]
#[pyo3(signature = (records, seed=0))]
fn devicegraph_track(records: Vec<RecordTuple>, seed: u64) -> PyResult<PyPrediction> {
    let records = from_tuples(records)?;
    Ok(PyPrediction {
        inner: core::baselines::devicegraph_track(&records, seed),
    })
}

/// Top `top` `(device_id, score)` pairs for one device, per component graph.
#[pyfunction]
#[pyo3(signature = (records, device_id, top=10, config=None))]
fn similarities(
    records: Vec<RecordTuple>,
    device_id: &str,
    top: usize,
    config: Option<PyLinkerConfig>,
) -> PyResult<Vec<Vec<(String, f64)>>> {
    let records = from_tuples(records)?;
    let cfg = config_or_default(config.as_ref());
    cfg.variant
        .components()
        .iter()
        .map(|kinds| {
            let g = core::build_graph(&records, kinds).map_err(to_py)?;
            let pos = g
                .device_position(device_id)
                .ok_or_else(|| PyKeyError::new_err(device_id.to_string()))?;
            let list = core::linker::rank_device(&g, &cfg, pos, top).map_err(to_py)?;
            Ok(list
                .entries
                .iter()
                .map(|c| (g.device_id(c.device).to_string(), c.score))
                .collect())
        })
        .collect()
}

#[pyfunction]
fn bhattacharyya(records: Vec<RecordTuple>, kinds: Vec<String>, device_a: &str, device_b: &str) -> PyResult<f64> {
    let records = from_tuples(records)?;
    let kinds = kinds.iter().map(|k| parse_kind(k)).collect::<PyResult<Vec<_>>>()?;
    let g = core::build_graph(&records, &kinds).map_err(to_py)?;
    let pos = |d: &str| g.device_position(d).ok_or_else(|| PyKeyError::new_err(d.to_string()));
    Ok(core::baselines::bhattacharyya_similarity(&g, pos(device_a)?, pos(device_b)?))
}

#[pyfunction]
#[pyo3(signature = (records, seed=0, error_rate=0.0, shared_ip_fraction=0.0, dropped_domain_fraction=0.0, fake_edge_ratio=0.0))]
fn perturb(
    records: Vec<RecordTuple>,
    seed: u64,
    error_rate: f64,
    shared_ip_fraction: f64,
    dropped_domain_fraction: f64,
    fake_edge_ratio: f64,
) -> PyResult<Vec<Tuple>> {
    let records = from_tuples(records)?;
    let cfg = core::perturb::PerturbConfig {
        seed,
        error_rate,
        shared_ip_fraction,
        dropped_domain_fraction,
        fake_edge_ratio,
        ..Default::default()
    };
    Ok(to_tuples(&cfg.apply(&records).map_err(to_py)?))
}

#[pyfunction]
#[pyo3(signature = (prediction, truth, mode="strict"))]
fn evaluate(prediction: &PyPrediction, truth: BTreeMap<String, String>, mode: &str) -> PyResult<BTreeMap<&'static str, f64>> {
    let report = core::eval::evaluate(&prediction.inner, &truth_from(truth), match_mode(mode)?).map_err(to_py)?;
    Ok(report_dict(&report))
}

#[pyfunction]
#[pyo3(name = "compute_metrics")]
fn compute_metrics_py(tp: u64, fp: u64, tn: u64, fn_: u64) -> PyResult<BTreeMap<&'static str, f64>> {
    let confusion = core::eval::Confusion::new(tp, fp, tn, fn_);
    let metrics = core::eval::compute_metrics(&confusion).map_err(to_py)?;
    Ok(report_dict(&MetricsReport { metrics, confusion }))
}

#[pymodule]
fn graphlink(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", core::VERSION)?;
    m.add_class::<PyLinkerConfig>()?;
    m.add_class::<PyPrediction>()?;
    m.add_class::<PyIncrementalLinker>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(load_records, m)?)?;
    m.add_function(wrap_pyfunction!(track, m)?)?;
    m.add_function(wrap_pyfunction!(bat_track, m)?)?;
    m.add_function(wrap_pyfunction!(devicegraph_track, m)?)?;
    m.add_function(wrap_pyfunction!(similarities, m)?)?;
    m.add_function(wrap_pyfunction!(bhattacharyya, m)?)?;
    m.add_function(wrap_pyfunction!(perturb, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics_py, m)?)?;
    Ok(())
}
