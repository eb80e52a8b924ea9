//! Python bindings: architectures, the audit, models, datasets, training
//! and the gradient check.
//!
//! Tensors cross the boundary as flat `float` lists plus a shape, which keeps
//! the module free of a NumPy dependency.

use pyo3::exceptions::{PyFloatingPointError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use simpnet::analyzer::{audit, AuditConfig, AuditReport, Severity};
use simpnet::archdsl::{preset_names, resolve_preset};
use simpnet::data::{load_cifar10_dir, load_mnist_dir, AugmentPolicy, Dataset, Split};
use simpnet::gradcheck::{run_gradcheck, GradcheckConfig};
use simpnet::layers::Mode;
use simpnet::train::{evaluate as evaluate_model, train_loop, TrainConfig};
use simpnet::{ArchSpec, CounterRng, Error, ImageShape, Model, Shape4, Tensor4};

type Shape3 = (usize, usize, usize);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.root() {
        Error::Io(_) => PyOSError::new_err(msg),
        Error::NonFinite(_) => PyFloatingPointError::new_err(msg),
        Error::Invariant(_) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn shape3(s: ImageShape) -> Shape3 {
    (s.c, s.h, s.w)
}

fn parse_split(split: &str) -> PyResult<Split> {
    match split {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(PyValueError::new_err(format!("split must be `train` or `test`, got `{other}`"))),
    }
}

/// An architecture in the text DSL.
#[pyclass(name = "ArchSpec", module = "simpnet", from_py_object)]
#[derive(Clone)]
struct PyArchSpec {
    inner: ArchSpec,
}

#[pymethods]
impl PyArchSpec {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        simpnet::parse(text).map(|inner| Self { inner }).map_err(to_py)
    }

    /// `simpnet-tiny`, or `experiment/arm` for one arm of an experiment.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        resolve_preset(name).map(|inner| Self { inner }).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn input(&self) -> Shape3 {
        shape3(self.inner.input)
    }

    fn with_input(&self, c: usize, h: usize, w: usize) -> Self {
        Self {
            inner: self.inner.clone().with_input(ImageShape { c, h, w }),
        }
    }

    fn with_num_classes(&self, k: usize) -> PyResult<Self> {
        self.inner.clone().with_num_classes(k).map(|inner| Self { inner }).map_err(to_py)
    }

    fn param_count(&self) -> PyResult<usize> {
        self.inner.param_count().map_err(to_py)
    }

    /// `(name, kind, params, macs, (c, h, w))` per layer.
    fn ledger(&self) -> PyResult<Vec<(String, String, usize, u64, Shape3)>> {
        let ledger = self.inner.ledger().map_err(to_py)?;
        Ok(ledger
            .rows
            .into_iter()
            .map(|r| (r.name, r.kind, r.params, r.macs, shape3(r.out_shape)))
            .collect())
    }

    fn render(&self) -> String {
        self.inner.render()
    }

    #[pyo3(signature = (seed=0))]
    fn build(&self, seed: u64) -> PyResult<PyModel> {
        self.inner.build::<f32>(seed).map(|inner| PyModel { inner }).map_err(to_py)
    }

    /// Design audit; `input` overrides the declared input shape.
    #[pyo3(signature = (input=None))]
    fn audit(&self, input: Option<Shape3>) -> PyAuditReport {
        let input = input.map_or(self.inner.input, |(c, h, w)| ImageShape { c, h, w });
        PyAuditReport {
            inner: audit(&self.inner, input, &AuditConfig::default()),
        }
    }

    fn __repr__(&self) -> String {
        format!("ArchSpec(name={:?}, input={})", self.inner.name, self.inner.input)
    }
}

#[pyclass(name = "AuditReport", module = "simpnet")]
struct PyAuditReport {
    inner: AuditReport,
}

#[pymethods]
impl PyAuditReport {
    fn table(&self) -> String {
        self.inner.render_table()
    }

    fn records(&self) -> String {
        self.inner.records()
    }

    /// `(rule, severity, layer, measurement)` tuples.
    #[getter]
    fn findings(&self) -> Vec<(String, String, String, String)> {
        self.inner
            .findings
            .iter()
            .map(|f| (f.rule.to_string(), f.severity.to_string(), f.layer.clone(), f.measurement.clone()))
            .collect()
    }

    #[getter]
    fn collapse(&self) -> Option<String> {
        self.inner.collapse.clone()
    }

    #[getter]
    fn total_params(&self) -> usize {
        self.inner.ledger.total_params()
    }

    #[getter]
    fn total_macs(&self) -> u64 {
        self.inner.ledger.total_macs()
    }

    fn count(&self, severity: &str) -> PyResult<usize> {
        let s = match severity {
            "info" => Severity::Info,
            "warn" => Severity::Warn,
            "fail" => Severity::Fail,
            other => return Err(PyValueError::new_err(format!("unknown severity `{other}`"))),
        };
        Ok(self.inner.count(s))
    }

    fn __str__(&self) -> String {
        self.inner.render_table()
    }
}

/// A built f32 network.
#[pyclass(name = "Model", module = "simpnet")]
struct PyModel {
    inner: Model<f32>,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn input(&self) -> Shape3 {
        shape3(self.inner.input_shape())
    }

    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn layer_names(&self) -> Vec<String> {
        self.inner.nodes().iter().map(|n| n.name.clone()).collect()
    }

    /// Logits for `n` images given as one flat list in NCHW order. Eval
    /// mode unless `train=True`, which samples dropout masks from `seed`.
    #[pyo3(signature = (pixels, n, train=false, seed=0))]
    fn predict(&mut self, pixels: Vec<f32>, n: usize, train: bool, seed: u64) -> PyResult<Vec<Vec<f32>>> {
        let shape = self.inner.input_shape().batch(n).map_err(to_py)?;
        let x = Tensor4::from_vec(shape, pixels).map_err(to_py)?;
        let previous = self.inner.mode();
        self.inner.set_mode(if train { Mode::Train } else { Mode::Eval });
        let y = self.inner.predict(&x, &CounterRng::new(seed));
        self.inner.set_mode(previous);
        let y = y.map_err(to_py)?;
        let k = y.shape().sample_len();
        Ok(y.data().chunks(k).map(<[f32]>::to_vec).collect())
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save_checkpoint(path).map_err(to_py)
    }

    fn load(&mut self, path: &str) -> PyResult<()> {
        self.inner.load_checkpoint(path).map_err(to_py)
    }

    fn checkpoint_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = self.inner.checkpoint_bytes().map_err(to_py)?;
        Ok(PyBytes::new(py, &bytes))
    }

    fn load_checkpoint_bytes(&mut self, data: &[u8]) -> PyResult<()> {
        self.inner.load_checkpoint_bytes(data).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Model(name={:?}, params={})", self.inner.name(), self.inner.num_params())
    }
}

#[pyclass(name = "Dataset", module = "simpnet")]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Standard MNIST IDX file names in `directory`.
    #[staticmethod]
    #[pyo3(signature = (directory, split="train"))]
    fn load_mnist(directory: &str, split: &str) -> PyResult<Self> {
        load_mnist_dir(directory, parse_split(split)?).map(|inner| Self { inner }).map_err(to_py)
    }

    /// CIFAR-10 binary batches in `directory`.
    #[staticmethod]
    #[pyo3(signature = (directory, split="train"))]
    fn load_cifar10(directory: &str, split: &str) -> PyResult<Self> {
        load_cifar10_dir(directory, parse_split(split)?).map(|inner| Self { inner }).map_err(to_py)
    }

    /// Images as a flat NCHW list with `shape = (n, c, h, w)`.
    #[staticmethod]
    #[pyo3(signature = (pixels, shape, labels, num_classes, name="python"))]
    fn from_arrays(
        pixels: Vec<f32>,
        shape: (usize, usize, usize, usize),
        labels: Vec<usize>,
        num_classes: usize,
        name: &str,
    ) -> PyResult<Self> {
        let s = Shape4::new(shape.0, shape.1, shape.2, shape.3).map_err(to_py)?;
        let images = Tensor4::from_vec(s, pixels).map_err(to_py)?;
        Dataset::new(name, images, labels, num_classes).map(|inner| Self { inner }).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.meta.name.clone()
    }

    #[getter]
    fn image_shape(&self) -> Shape3 {
        shape3(self.inner.image_shape())
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.meta.num_classes
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    /// Standardizes with this set's per-channel statistics and returns them.
    fn normalize(&mut self) -> PyResult<(Vec<f64>, Vec<f64>)> {
        self.inner.normalize().map_err(to_py)
    }

    fn normalize_with(&mut self, mean: Vec<f64>, std: Vec<f64>) -> PyResult<()> {
        self.inner.normalize_with(&mean, &std).map_err(to_py)
    }

    /// The first `n` examples.
    fn subset(&self, n: usize) -> PyResult<Self> {
        self.inner.subset(n).map(|inner| Self { inner }).map_err(to_py)
    }
}

/// Trains in place with SGD; returns the metrics rows as
/// `(epoch, step, split, loss, top1, lr, seconds)` tuples.
#[pyfunction]
#[pyo3(signature = (
    model, train, test=None, *, epochs=1, lr=0.05, momentum=0.9, weight_decay=5e-4, batch_size=128, seed=0,
    max_steps=None, augment=false, deterministic=true
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    model: &mut PyModel,
    train: &PyDataset,
    test: Option<&PyDataset>,
    epochs: usize,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    batch_size: usize,
    seed: u64,
    max_steps: Option<usize>,
    augment: bool,
    deterministic: bool,
) -> PyResult<Vec<(usize, usize, String, f64, f64, f64, f64)>> {
    let input = train.inner.image_shape();
    let cfg = TrainConfig {
        batch_size,
        lr,
        momentum,
        weight_decay,
        seed,
        deterministic,
        max_steps,
        augment: augment.then(|| AugmentPolicy {
            pad: if input.c == 1 { 2 } else { 4 },
            crop: input.h.min(input.w),
            mirror_p: if input.c == 1 { 0.0 } else { 0.5 },
        }),
        ..TrainConfig::new(epochs)
    };
    let (m, tr, te) = (&mut model.inner, &train.inner, test.map(|t| &t.inner));
    let summary = py
        .detach(|| train_loop(m, tr, te, &cfg, &mut |_| Ok(())))
        .map_err(to_py)?;
    Ok(summary
        .rows
        .into_iter()
        .map(|r| (r.epoch, r.step, r.split.to_string(), r.loss, r.top1, r.lr, r.seconds))
        .collect())
}

/// `(mean loss, top-1 accuracy)` in eval mode.
#[pyfunction]
#[pyo3(signature = (model, data, batch_size=500))]
fn evaluate(py: Python<'_>, model: &mut PyModel, data: &PyDataset, batch_size: usize) -> PyResult<(f64, f64)> {
    let (m, d) = (&mut model.inner, &data.inner);
    py.detach(|| evaluate_model(m, d, batch_size)).map_err(to_py)
}

/// Finite-difference check; returns `(passed, [(layer, worst rel err,
/// instance seed)])`.
#[pyfunction]
#[pyo3(signature = (seed=0, layer=None, instances=20))]
fn gradcheck(py: Python<'_>, seed: u64, layer: Option<String>, instances: usize) -> PyResult<(bool, Vec<(String, f64, u64)>)> {
    let cfg = GradcheckConfig {
        seed,
        layer,
        instances,
        ..GradcheckConfig::default()
    };
    let report = py.detach(|| run_gradcheck(&cfg)).map_err(to_py)?;
    let worst = report
        .layers
        .iter()
        .filter_map(|l| l.worst().map(|w| (l.layer.clone(), w.rel_err, w.instance_seed)))
        .collect();
    Ok((report.passed(), worst))
}

#[pyfunction(name = "preset_names")]
fn py_preset_names() -> Vec<&'static str> {
    preset_names()
}

#[pymodule]
#[pyo3(name = "simpnet")]
fn simpnet_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyArchSpec>()?;
    m.add_class::<PyAuditReport>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(py_preset_names, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
