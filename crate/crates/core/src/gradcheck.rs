//! Central finite-difference checks of every backward pass, in f64.
//!
//! Each layer kind is wrapped in a one-node [`Model`] so the check runs
//! through the same forward, backward and parameter registry the trainer
//! uses. Instances are reproducible from their instance seed alone.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::{softmax_xent, Mode, SafPoolConfig};
use crate::network::{BatchNormLayer, ConvLayer, DenseLayer, Layer, Model, Node};
use crate::rng::CounterRng;
use crate::tensor::{ImageShape, Shape4, Tensor4};

pub const GRADCHECK_KINDS: [&str; 13] = [
    "conv",
    "sconv",
    "dense",
    "batchnorm",
    "relu",
    "maxpool",
    "safpool",
    "dropout",
    "gap",
    "gmp",
    "flatten",
    "softmax-xent",
    "e2e",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub instances: usize,
    pub h: f64,
    pub tolerance: f64,
    /// Run only this kind.
    pub layer: Option<String>,
    /// Corrupts the analytic input gradient of this kind; used to prove the
    /// harness notices a wrong backward pass.
    pub broken: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 20,
            h: 1e-5,
            tolerance: 1e-5,
            layer: None,
            broken: None,
        }
    }
}

/// `max|a − n| / max(max|n|, max|a|, 1e-12)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(1e-12, f64::max);
    diff / scale
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceResult {
    pub instance_seed: u64,
    /// Over the input gradient and every parameter gradient together.
    pub rel_err: f64,
    /// Tensor with the largest absolute discrepancy.
    pub tensor: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerResult {
    pub layer: String,
    pub instances: Vec<InstanceResult>,
}

impl LayerResult {
    pub fn worst(&self) -> Option<&InstanceResult> {
        self.instances.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub layers: Vec<LayerResult>,
}

impl GradcheckReport {
    /// `(layer, instance)` pairs at or above tolerance. NaN counts as a failure.
    pub fn failures(&self) -> Vec<(&str, &InstanceResult)> {
        self.layers
            .iter()
            .flat_map(|l| l.instances.iter().map(move |i| (l.layer.as_str(), i)))
            .filter(|(_, i)| !(i.rel_err < self.tolerance))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.layers {
            let Some(w) = l.worst() else { continue };
            let status = if w.rel_err < self.tolerance { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{:<13} {:>3} instances  worst rel err {:.3e} ({}, instance seed {})  {status}",
                l.layer,
                l.instances.len(),
                w.rel_err,
                w.tensor,
                w.instance_seed
            )?;
        }
        for (layer, i) in self.failures() {
            writeln!(
                f,
                "FAILED {layer}: rel err {:.3e} >= {:.0e} in {} (instance seed {})",
                i.rel_err, self.tolerance, i.tensor, i.instance_seed
            )?;
        }
        Ok(())
    }
}

enum Target {
    /// `F = Σ g ⊙ y`
    Projection(Tensor4<f64>),
    /// `F = softmax cross-entropy(y, labels)`
    Labels(Vec<usize>),
}

struct Instance {
    model: Model<f64>,
    x: Tensor4<f64>,
    target: Target,
    rng: CounterRng,
}

fn objective(inst: &mut Instance, x: &Tensor4<f64>) -> Result<f64> {
    let y = inst.model.predict(x, &inst.rng)?;
    match &inst.target {
        Target::Projection(g) => Ok(y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()),
        Target::Labels(l) => Ok(softmax_xent(&y, l)?.0),
    }
}

fn grad_of_output(target: &Target, y: &Tensor4<f64>) -> Result<Tensor4<f64>> {
    match target {
        Target::Projection(g) => Ok(g.clone()),
        Target::Labels(l) => Ok(softmax_xent(y, l)?.1),
    }
}

fn check(inst: &mut Instance, h: f64, corrupt: bool) -> Result<(f64, String)> {
    inst.model.set_mode(Mode::Train);
    inst.model.zero_grad();
    let (y, cache) = inst.model.forward(&inst.x, &inst.rng)?;
    let g = grad_of_output(&inst.target, &y)?;
    let mut dx = inst.model.backward(&g, &cache)?;
    if corrupt {
        dx = dx.map(|v| v * 1.5 + 1e-3);
    }
    let analytic: Vec<(String, Vec<f64>)> = std::iter::once(("input".to_string(), dx.into_vec()))
        .chain(
            inst.model
                .params_mut()
                .into_iter()
                .map(|s| (s.name, s.grad.map(|g| g.to_vec()).unwrap_or_default())),
        )
        .collect();

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut x = inst.x.clone();
    let mut nx = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let orig = x.data()[j];
        x.data_mut()[j] = orig + h;
        let fp = objective(inst, &x)?;
        x.data_mut()[j] = orig - h;
        let fm = objective(inst, &x)?;
        x.data_mut()[j] = orig;
        nx.push((fp - fm) / (2.0 * h));
    }
    numeric.push(nx);
    let slots = inst.model.params_mut().len();
    for s in 0..slots {
        let len = inst.model.params_mut()[s].value.len();
        let mut ns = Vec::with_capacity(len);
        for j in 0..len {
            let orig = inst.model.params_mut()[s].value[j];
            inst.model.params_mut()[s].value[j] = orig + h;
            let fp = objective(inst, &inst.x.clone())?;
            inst.model.params_mut()[s].value[j] = orig - h;
            let fm = objective(inst, &inst.x.clone())?;
            inst.model.params_mut()[s].value[j] = orig;
            ns.push((fp - fm) / (2.0 * h));
        }
        numeric.push(ns);
    }
    inst.model.mark_updated();

    // One relative error over the whole gradient vector. Per-tensor ratios
    // are meaningless where the true gradient is identically zero, such as a
    // convolution bias feeding batch-norm.
    let (a_all, n_all): (Vec<f64>, Vec<f64>) = analytic
        .iter()
        .zip(&numeric)
        .flat_map(|((_, a), n)| a.iter().copied().zip(n.iter().copied()))
        .unzip();
    let rel = relative_error(&a_all, &n_all);
    let mut worst = (f64::NEG_INFINITY, String::new());
    for ((name, a), n) in analytic.iter().zip(&numeric) {
        let d = a.iter().zip(n).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
        if d.is_nan() || d > worst.0 {
            worst = (d, name.clone());
            if d.is_nan() {
                break;
            }
        }
    }
    Ok((rel, worst.1))
}

fn uniform(s: Shape4, lo: f64, hi: f64, rng: &CounterRng) -> Result<Tensor4<f64>> {
    Tensor4::fill_random_uniform(s, lo, hi, rng)
}

/// Values in [-1, 1] kept at least `margin` away from 0.
fn away_from_zero(s: Shape4, margin: f64, rng: &CounterRng) -> Result<Tensor4<f64>> {
    Ok(uniform(s, -1.0, 1.0, rng)?.map(|v| if v.abs() < margin { margin.copysign(v) + v } else { v }))
}

/// A shuffled grid of distinct values, so every max is unique by a wide margin.
fn distinct(s: Shape4, rng: &CounterRng) -> Result<Tensor4<f64>> {
    let perm = crate::data::permutation(s.len(), rng);
    let step = 2.0 / s.len() as f64;
    Tensor4::from_vec(s, perm.into_iter().map(|p| -1.0 + step * p as f64).collect())
}

fn randomize_params(model: &mut Model<f64>, rng: &CounterRng) {
    for (i, slot) in model.params_mut().into_iter().enumerate() {
        let r = rng.split(i as u64);
        for (j, v) in slot.value.iter_mut().enumerate() {
            *v = 2.0 * r.unit_at(j as u64) - 1.0;
        }
    }
}

fn single(name: &str, input: ImageShape, layer: Layer<f64>) -> Result<Model<f64>> {
    Model::new(
        name,
        input,
        vec![Node {
            name: format!("{name}1"),
            layer,
        }],
    )
}

struct Dims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
}

fn dims(r: &mut CounterRng, max_c: usize, min_hw: usize, max_hw: usize) -> Dims {
    Dims {
        n: 1 + r.below(3),
        c: 1 + r.below(max_c),
        h: min_hw + r.below(max_hw - min_hw + 1),
        w: min_hw + r.below(max_hw - min_hw + 1),
    }
}

fn projection(model: &Model<f64>, n: usize, rng: &CounterRng) -> Result<Target> {
    Ok(Target::Projection(uniform(model.output_shape(n)?, -1.0, 1.0, rng)?))
}

fn layer_instance(kind: &str, instance_seed: u64) -> Result<Instance> {
    let root = CounterRng::new(instance_seed);
    let mut r = root.split(0);
    let (xr, pr, gr, mr) = (root.split(1), root.split(2), root.split(3), root.split(4));
    let (model, x) = match kind {
        "conv" | "sconv" => {
            let d = dims(&mut r, 3, 3, 7);
            let (k, stride, pad, down) = if kind == "sconv" {
                (3, 2, 1, true)
            } else {
                (1 + r.below(3), 1 + r.below(2), r.below(2), false)
            };
            let c_out = 1 + r.below(3);
            let mut m = single(kind, ImageShape { c: d.c, h: d.h, w: d.w }, Layer::Conv(ConvLayer::kaiming(d.c, c_out, k, stride, pad, down, &pr)?))?;
            randomize_params(&mut m, &pr);
            (m, uniform(Shape4::new(d.n, d.c, d.h, d.w)?, -1.0, 1.0, &xr)?)
        }
        "dense" => {
            let d = dims(&mut r, 3, 1, 3);
            let m_out = 1 + r.below(5);
            let mut m = single(
                kind,
                ImageShape { c: d.c, h: d.h, w: d.w },
                Layer::Dense(DenseLayer::kaiming(d.c * d.h * d.w, m_out, &pr)?),
            )?;
            randomize_params(&mut m, &pr);
            (m, uniform(Shape4::new(d.n, d.c, d.h, d.w)?, -1.0, 1.0, &xr)?)
        }
        "batchnorm" => {
            let d = dims(&mut r, 3, 2, 4);
            let mut m = single(kind, ImageShape { c: d.c, h: d.h, w: d.w }, Layer::BatchNorm(BatchNormLayer::new(d.c)))?;
            randomize_params(&mut m, &pr);
            (m, uniform(Shape4::new(d.n, d.c, d.h, d.w)?, -2.0, 2.0, &xr)?)
        }
        "relu" | "dropout" | "flatten" | "gap" => {
            let d = dims(&mut r, 3, 1, 5);
            let layer = match kind {
                "relu" => Layer::Relu,
                "dropout" => Layer::Dropout { p: 0.3 },
                "flatten" => Layer::Flatten,
                _ => Layer::GlobalAvgPool,
            };
            let m = single(kind, ImageShape { c: d.c, h: d.h, w: d.w }, layer)?;
            (m, away_from_zero(Shape4::new(d.n, d.c, d.h, d.w)?, 0.05, &xr)?)
        }
        "maxpool" | "safpool" | "gmp" => {
            let d = dims(&mut r, 3, 2, 6);
            let layer = match kind {
                "maxpool" => Layer::MaxPool { window: 2, stride: 2 },
                "safpool" => Layer::SafPool(SafPoolConfig::new(2, 2, 0.3)?),
                _ => Layer::GlobalMaxPool,
            };
            let m = single(kind, ImageShape { c: d.c, h: d.h, w: d.w }, layer)?;
            (m, distinct(Shape4::new(d.n, d.c, d.h, d.w)?, &xr)?)
        }
        "softmax-xent" => {
            let (n, k) = (1 + r.below(4), 2 + r.below(6));
            let m = Model::new(kind, ImageShape { c: k, h: 1, w: 1 }, Vec::new())?;
            let labels = (0..n).map(|_| r.below(k)).collect();
            let x = uniform(Shape4::new(n, k, 1, 1)?, -3.0, 3.0, &xr)?;
            return Ok(Instance {
                model: m,
                x,
                target: Target::Labels(labels),
                rng: mr,
            });
        }
        other => return Err(Error::Argument(format!("no gradient check for `{other}`"))),
    };
    let n = x.shape().n;
    let target = projection(&model, n, &gr)?;
    Ok(Instance { model, x, target, rng: mr })
}

/// The toy network: conv, batch-norm, ReLU, SAF-pool, conv, ReLU, global
/// average pool, dense, softmax cross-entropy.
pub const E2E_ARCH: &str = "input 2 6 6\ngroup g1\nconv 3 3\nbn\nrelu\nsafpool 2 s2 p0.25\ngroup g2\nconv 3 4\nrelu\ngap\nflatten\ndense 3\n";

fn window_gap(x: &Tensor4<f64>, window: usize, stride: usize) -> f64 {
    let s = x.shape();
    let mut gap = f64::INFINITY;
    for plane in x.data().chunks(s.plane()) {
        for oy in 0..(s.h.saturating_sub(window)) / stride + 1 {
            for ox in 0..(s.w.saturating_sub(window)) / stride + 1 {
                let mut vals: Vec<f64> = (0..window * window)
                    .filter_map(|k| plane.get((oy * stride + k / window) * s.w + ox * stride + k % window))
                    .copied()
                    .collect();
                vals.sort_by(|a, b| b.total_cmp(a));
                if vals.len() > 1 {
                    gap = gap.min(vals[0] - vals[1]);
                }
            }
        }
    }
    gap
}

/// Distance of the instance from the nearest ReLU or max-pool kink.
fn kink_margin(inst: &mut Instance) -> Result<f64> {
    let mut inputs = vec![inst.x.clone()];
    inst.model.set_mode(Mode::Train);
    inst.model
        .forward_inspect(&inst.x.clone(), &inst.rng.clone(), |_, _, y| inputs.push(y.clone()))?;
    let mut margin = f64::INFINITY;
    for (node, input) in inst.model.nodes().iter().zip(&inputs) {
        match &node.layer {
            Layer::Relu => margin = margin.min(input.data().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)),
            Layer::MaxPool { window, stride } => margin = margin.min(window_gap(input, *window, *stride)),
            Layer::SafPool(c) => margin = margin.min(window_gap(input, c.window, c.stride)),
            _ => {}
        }
    }
    Ok(margin)
}

fn e2e_instance(instance_seed: u64) -> Result<Instance> {
    let spec = crate::archdsl::parse(E2E_ARCH)?;
    // Redraw until no activation sits within reach of a kink.
    for attempt in 0..64u64 {
        let root = CounterRng::new(instance_seed).split(attempt);
        let mut model: Model<f64> = spec.build(root.at(0))?;
        randomize_params(&mut model, &root.split(2));
        let mut r = root.split(0);
        let n = 2 + r.below(2);
        let x = uniform(Shape4::new(n, 2, 6, 6)?, -1.0, 1.0, &root.split(1))?;
        let labels = (0..n).map(|_| r.below(3)).collect();
        let mut inst = Instance {
            model,
            x,
            target: Target::Labels(labels),
            rng: root.split(4),
        };
        if kink_margin(&mut inst)? > 1e-4 {
            return Ok(inst);
        }
    }
    Err(Error::Invariant(format!("instance seed {instance_seed}: no kink-free draw")))
}

/// Reproduces one instance from its seed.
pub fn check_instance(kind: &str, instance_seed: u64, h: f64, corrupt: bool) -> Result<InstanceResult> {
    let mut inst = if kind == "e2e" {
        e2e_instance(instance_seed)?
    } else {
        layer_instance(kind, instance_seed)?
    };
    let (rel_err, tensor) = check(&mut inst, h, corrupt)?;
    Ok(InstanceResult {
        instance_seed,
        rel_err,
        tensor,
    })
}

fn check_kind(kind: &str) -> Result<()> {
    if GRADCHECK_KINDS.contains(&kind) {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "unknown layer `{kind}`; choose from {}",
            GRADCHECK_KINDS.join(", ")
        )))
    }
}

pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if let Some(k) = &cfg.layer {
        check_kind(k)?;
    }
    if let Some(k) = &cfg.broken {
        check_kind(k)?;
    }
    if cfg.instances == 0 || !(cfg.h > 0.0) {
        return Err(Error::Argument("need at least one instance and a positive step".into()));
    }
    let root = CounterRng::new(cfg.seed);
    let mut layers = Vec::new();
    for (k, kind) in GRADCHECK_KINDS.iter().enumerate() {
        if cfg.layer.as_deref().is_some_and(|l| l != *kind) {
            continue;
        }
        let stream = root.split(k as u64);
        let corrupt = cfg.broken.as_deref() == Some(*kind);
        let instances = (0..cfg.instances as u64)
            .map(|i| check_instance(kind, stream.at(i), cfg.h, corrupt).map_err(|e| e.in_layer(kind)))
            .collect::<Result<Vec<_>>>()?;
        layers.push(LayerResult {
            layer: kind.to_string(),
            instances,
        });
    }
    Ok(GradcheckReport {
        tolerance: cfg.tolerance,
        layers,
    })
}
