//! SGD with momentum, learning-rate schedule, training and evaluation loops,
//! metrics rows.

mod ablate;

pub use ablate::{ablate, AblationConfig, AblationReport, ArmReport, SeedRun, PROBE_THRESHOLD};

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::data::{augment, AugmentPolicy, Dataset, Split};
use crate::error::{Error, Result};
use crate::layers::{argmax_rows, softmax_xent};
use crate::layers::Mode;
use crate::network::Model;
use crate::rng::CounterRng;
use crate::tensor::Scalar;

/// Stream ids under the run seed. Shuffling uses `derive(&[epoch])`.
const MASK_STREAM: u64 = 0x4D41_534B_0000_0000;
const AUGMENT_STREAM: u64 = 0x4155_474D_0000_0000;

pub const METRICS_HEADER: &str = "epoch,step,split,loss,top1,lr,seconds";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `(epoch, multiplier)`: from 0-based `epoch` onward the rate is scaled
    /// by `multiplier`, cumulatively.
    pub schedule: Vec<(usize, f64)>,
    pub seed: u64,
    /// Fixes wall-clock columns to 0 so metrics are reproducible bytewise.
    pub deterministic: bool,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<usize>,
    pub augment: Option<AugmentPolicy>,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::new(10)
    }
}

/// ×0.2 at 50% and 75% of training, rounded up to an epoch boundary.
pub fn default_schedule(epochs: usize) -> Vec<(usize, f64)> {
    [0.5, 0.75]
        .iter()
        .map(|f| (f * epochs as f64).ceil() as usize)
        .filter(|&e| e > 0 && e < epochs)
        .map(|e| (e, 0.2))
        .collect()
}

impl TrainConfig {
    pub fn new(epochs: usize) -> Self {
        Self {
            epochs,
            batch_size: 128,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: default_schedule(epochs),
            seed: 0,
            deterministic: false,
            max_steps: None,
            augment: None,
            eval_batch_size: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Argument(format!("learning rate must be positive, got {}", self.lr)));
        }
        self.validate_rest()
    }

    fn validate_rest(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Argument(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Argument("epochs and batch sizes must be >= 1".into()));
        }
        if let Some((e, m)) = self.schedule.iter().find(|(_, m)| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Argument(format!("schedule multiplier {m} at epoch {e} is invalid")));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Argument("max steps must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|(e, _)| *e <= epoch)
            .fold(self.lr, |lr, (_, m)| lr * m)
    }
}

/// Momentum buffers aligned with a model's trainable parameters.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    names: Vec<String>,
    velocity: Vec<Vec<T>>,
}

/// `v ← μv − lr(g + λw); w ← w + v` for one tensor.
pub fn sgd_step<T: Scalar>(w: &mut [T], g: &[T], v: &mut [T], lr: f64, momentum: f64, weight_decay: f64) {
    let (lr, mu, wd) = (T::from_f64_lossy(lr), T::from_f64_lossy(momentum), T::from_f64_lossy(weight_decay));
    for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = mu * *v - lr * (g + wd * *w);
        *w = *w + *v;
    }
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            names: Vec::new(),
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self, name: &str) -> Option<&[T]> {
        self.names.iter().position(|n| n == name).map(|i| self.velocity[i].as_slice())
    }

    /// Updates every trainable parameter of `model` from its accumulated
    /// gradient. Nothing is written unless all gradients and all updated
    /// values are finite.
    pub fn step(&mut self, model: &mut Model<T>, lr: f64) -> Result<()> {
        let mut slots = model.params_mut();
        if self.names.is_empty() {
            self.names = slots.iter().map(|s| s.name.clone()).collect();
            self.velocity = slots.iter().map(|s| vec![T::zero(); s.value.len()]).collect();
        }
        let aligned = slots.len() == self.names.len()
            && slots
                .iter()
                .zip(&self.names)
                .zip(&self.velocity)
                .all(|((s, n), v)| &s.name == n && s.value.len() == v.len());
        if !aligned {
            return Err(Error::Invariant("optimizer state does not match the model's parameters".into()));
        }
        let (lr_t, mu, wd) = (T::from_f64_lossy(lr), T::from_f64_lossy(self.momentum), T::from_f64_lossy(self.weight_decay));
        for (slot, v) in slots.iter().zip(&self.velocity) {
            let g = slot.grad.as_deref().unwrap_or(&[]);
            if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of `{}` is {} at index {i}",
                    slot.name,
                    g[i].as_f64()
                )));
            }
            let bad = slot.value.iter().zip(g).zip(v).position(|((&w, &g), &v)| {
                let nv = mu * v - lr_t * (g + wd * w);
                !(w + nv).is_finite()
            });
            if let Some(i) = bad {
                return Err(Error::NonFinite(format!("update of `{}` overflows at index {i}", slot.name)));
            }
        }
        for (slot, v) in slots.iter_mut().zip(&mut self.velocity) {
            let g = slot.grad.as_deref().unwrap_or(&[]);
            sgd_step(slot.value, g, v, lr, self.momentum, self.weight_decay);
        }
        drop(slots);
        model.mark_updated();
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    /// 1-based.
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    #[serde(serialize_with = "split_name")]
    pub split: Split,
    pub loss: f64,
    pub top1: f64,
    pub lr: f64,
    pub seconds: f64,
}

fn split_name<S: serde::Serializer>(s: &Split, ser: S) -> std::result::Result<S::Ok, S::Error> {
    ser.serialize_str(s.as_str())
}

/// `%g`-style formatting with 6 significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-4..6).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let fixed = format!("{x:.*}", (5 - exp) as usize);
    if fixed.contains('.') {
        fixed.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        fixed
    }
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.step,
            self.split.as_str(),
            format_sig6(self.loss),
            format_sig6(self.top1),
            format_sig6(self.lr),
            format_sig6(self.seconds)
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

pub fn write_metrics_csv(w: &mut impl Write, rows: &[MetricsRow]) -> Result<()> {
    w.write_all(metrics_csv(rows).as_bytes())?;
    Ok(())
}

/// `(mean loss, top-1 accuracy)` in eval mode. The model's previous mode is
/// restored afterwards.
pub fn evaluate(model: &mut Model<f32>, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    let prev = model.mode();
    model.set_mode(Mode::Eval);
    let result = evaluate_inner(model, data, batch_size);
    model.set_mode(prev);
    result
}

fn evaluate_inner(model: &mut Model<f32>, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Argument("cannot evaluate on an empty dataset".into()));
    }
    let rng = CounterRng::new(0);
    let (mut loss, mut correct) = (0.0f64, 0usize);
    for idx in data.sequential_batches(batch_size)? {
        let (x, y) = data.gather(&idx)?;
        let logits = model.predict(&x, &rng)?;
        let (l, _) = softmax_xent(&logits, &y)?;
        loss += l * y.len() as f64;
        correct += argmax_rows(&logits).iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub rows: Vec<MetricsRow>,
}

impl TrainSummary {
    pub fn last(&self, split: Split) -> Option<&MetricsRow> {
        self.rows.iter().rev().find(|r| r.split == split)
    }
}

fn check_compatible(model: &Model<f32>, data: &Dataset, policy: Option<&AugmentPolicy>) -> Result<()> {
    let mut shape = data.image_shape();
    if let Some(p) = policy {
        shape.h = p.crop;
        shape.w = p.crop;
    }
    if shape != model.input_shape() {
        return Err(Error::Shape(format!(
            "model `{}` takes {}, dataset `{}` yields {shape}",
            model.name(),
            model.input_shape(),
            data.meta.name
        )));
    }
    let out = model.output_shape(1)?;
    if out.c * out.h * out.w != data.meta.num_classes {
        return Err(Error::Shape(format!(
            "model emits {} logits, dataset has {} classes",
            out.c * out.h * out.w,
            data.meta.num_classes
        )));
    }
    Ok(())
}

fn buffers(model: &mut Model<f32>) -> Vec<Vec<f32>> {
    model.slots_mut().into_iter().filter(|s| s.grad.is_none()).map(|s| s.value.to_vec()).collect()
}

fn restore_buffers(model: &mut Model<f32>, saved: &[Vec<f32>]) {
    for (slot, v) in model.slots_mut().into_iter().filter(|s| s.grad.is_none()).zip(saved) {
        slot.value.copy_from_slice(v);
    }
}

/// Trains `model` in place, emitting a train row and (if `test` is given) a
/// test row per epoch to `sink`.
///
/// On a non-finite loss, gradient or update the error is returned and
/// `model` is left holding the last parameters for which every quantity was
/// finite.
pub fn train_loop(
    model: &mut Model<f32>,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(&MetricsRow) -> Result<()>,
) -> Result<TrainSummary> {
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Argument(format!("learning rate must be >= 0, got {}", cfg.lr)));
    }
    cfg.validate_rest()?;
    check_compatible(model, train, cfg.augment.as_ref())?;
    if let Some(t) = test {
        check_compatible(model, t, None)?;
    }
    let root = CounterRng::new(cfg.seed);
    let start = Instant::now();
    let seconds = || if cfg.deterministic { 0.0 } else { start.elapsed().as_secs_f64() };
    let mut sgd = Sgd::<f32>::new(cfg.momentum, cfg.weight_decay);
    let mut rows = Vec::new();
    let mut step = 0usize;
    let mut emit = |row: MetricsRow, rows: &mut Vec<MetricsRow>| -> Result<()> {
        sink(&row)?;
        rows.push(row);
        Ok(())
    };

    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        let mut stopped = false;
        for idx in train.batch_indices(cfg.batch_size, cfg.seed, epoch as u64)? {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                stopped = true;
                break;
            }
            let (mut x, y) = train.gather(&idx)?;
            if let Some(policy) = &cfg.augment {
                x = augment(&x, policy, &root.derive(&[AUGMENT_STREAM, epoch as u64, step as u64]))?;
            }
            model.set_mode(Mode::Train);
            model.zero_grad();
            let saved = buffers(model);
            let (logits, cache) = model.forward(&x, &root.derive(&[MASK_STREAM, epoch as u64, step as u64]))?;
            let (loss, grad) = softmax_xent(&logits, &y)?;
            let buffers_finite = model
                .slots_mut()
                .iter()
                .filter(|s| s.grad.is_none())
                .all(|s| s.value.iter().all(|v| v.is_finite()));
            if !loss.is_finite() || !buffers_finite {
                restore_buffers(model, &saved);
                return Err(Error::NonFinite(format!(
                    "loss became {loss} at epoch {}, step {}",
                    epoch + 1,
                    step + 1
                )));
            }
            model.backward(&grad, &cache)?;
            if let Err(e) = sgd.step(model, lr) {
                restore_buffers(model, &saved);
                return Err(e);
            }
            loss_sum += loss * y.len() as f64;
            correct += argmax_rows(&logits).iter().zip(&y).filter(|(p, t)| p == t).count();
            seen += y.len();
            step += 1;
        }
        if seen > 0 {
            let row = MetricsRow {
                epoch: epoch + 1,
                step,
                split: Split::Train,
                loss: loss_sum / seen as f64,
                top1: correct as f64 / seen as f64,
                lr,
                seconds: seconds(),
            };
            emit(row, &mut rows)?;
            if let Some(t) = test {
                let (loss, top1) = evaluate(model, t, cfg.eval_batch_size)?;
                let row = MetricsRow {
                    epoch: epoch + 1,
                    step,
                    split: Split::Test,
                    loss,
                    top1,
                    lr,
                    seconds: seconds(),
                };
                emit(row, &mut rows)?;
            }
        }
        if stopped || cfg.max_steps.is_some_and(|m| step >= m) {
            break 'epochs;
        }
    }
    model.set_mode(Mode::Train);
    Ok(TrainSummary { steps: step, rows })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::archdsl::parse;
    use crate::tensor::{Shape4, Tensor4};

    /// Two classes of 1×6×6 images: bright left half or bright right half,
    /// plus noise.
    pub(crate) fn halves(n: usize, seed: u64) -> Dataset {
        let s = Shape4::new(n, 1, 6, 6).unwrap();
        let mut x = Tensor4::fill_random_uniform(s, 0.0, 0.3, &CounterRng::new(seed)).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        for (i, &l) in labels.iter().enumerate() {
            for y in 0..6 {
                for c in 0..3 {
                    let col = if l == 0 { c } else { 3 + c };
                    let v = x.get(i, 0, y, col);
                    x.set(i, 0, y, col, v + 0.7);
                }
            }
        }
        Dataset::new("halves", x, labels, 2).unwrap()
    }

    pub(crate) const TOY: &str = "input 1 6 6\ngroup g1\nconv 3 4\nbn\nrelu\ndropout p0.1\nconv 3 6\nbn\nrelu\nsafpool 2 s2 p0.2\ngroup g2\nconv 3 8\nbn\nrelu\ngap\nflatten\ndense 2\n";

    fn toy_model(seed: u64) -> Model<f32> {
        parse(TOY).unwrap().build(seed).unwrap()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            lr: 0.05,
            eval_batch_size: 16,
            ..TrainConfig::new(3)
        }
    }

    fn params(model: &mut Model<f32>) -> Vec<Vec<f32>> {
        model.params_mut().into_iter().map(|s| s.value.to_vec()).collect()
    }

    #[test]
    fn plain_sgd_and_fixed_point() {
        let (mut w, g, mut v) = (vec![1.0f64, -2.0], vec![0.5, 0.25], vec![0.0, 0.0]);
        sgd_step(&mut w, &g, &mut v, 0.1, 0.0, 0.0);
        assert_eq!(w, vec![1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.25]);
        let (mut w, mut v) = (vec![3.0f64], vec![0.0]);
        sgd_step(&mut w, &[0.0], &mut v, 0.1, 0.9, 0.0);
        assert_eq!(w, vec![3.0]);
    }

    #[test]
    fn momentum_recurrence_two_steps() {
        let g = [2.0f64, -4.0];
        let (mut w, mut v) = (vec![1.0, 1.0], vec![0.0, 0.0]);
        for _ in 0..2 {
            sgd_step(&mut w, &g, &mut v, 1.0, 0.9, 0.0);
        }
        for i in 0..2 {
            assert_eq!(v[i], -1.9 * g[i]);
            assert_eq!(w[i], 1.0 - 2.9 * g[i]);
        }
    }

    #[test]
    fn weight_decay_matches_simulated_recurrence() {
        let (lr, mu, wd) = (0.1f64, 0.5, 0.3);
        let (mut w, mut v) = (vec![2.0f64], vec![0.0]);
        let (mut ws, mut vs) = (2.0f64, 0.0f64);
        for _ in 0..25 {
            sgd_step(&mut w, &[0.0], &mut v, lr, mu, wd);
            vs = mu * vs - lr * wd * ws;
            ws += vs;
            assert_eq!(w[0], ws);
        }
        assert!(w[0].abs() < 2.0);
        // Without momentum decay is exactly geometric.
        let (mut w, mut v) = (vec![2.0f64], vec![0.0]);
        for t in 1..=10 {
            sgd_step(&mut w, &[0.0], &mut v, lr, 0.0, wd);
            assert!((w[0] - 2.0 * (1.0 - lr * wd).powi(t)).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_names_tensor_and_leaves_params() {
        let mut m = toy_model(1);
        let before = params(&mut m);
        {
            let mut slots = m.params_mut();
            slots[2].grad.as_mut().unwrap()[0] = f32::NAN;
        }
        let name = m.params_mut()[2].name.clone();
        let err = Sgd::new(0.9, 0.0).step(&mut m, 0.1).unwrap_err();
        assert!(matches!(&err, Error::NonFinite(msg) if msg.contains(&name)), "{err}");
        assert_eq!(params(&mut m), before);
    }

    #[test]
    fn schedule() {
        assert_eq!(default_schedule(10), vec![(5, 0.2), (8, 0.2)]);
        assert_eq!(default_schedule(3), vec![(2, 0.2)]);
        assert!(default_schedule(1).is_empty());
        let cfg = TrainConfig { lr: 1.0, ..TrainConfig::new(4) };
        let lrs: Vec<f64> = (0..4).map(|e| cfg.lr_at(e)).collect();
        assert_eq!(lrs, vec![1.0, 1.0, 0.2, 0.2 * 0.2]);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::new(2);
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { lr: 0.0, ..ok.clone() },
            TrainConfig { momentum: 1.0, ..ok.clone() },
            TrainConfig { weight_decay: -1.0, ..ok.clone() },
            TrainConfig { batch_size: 0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Argument(_))));
        }
    }

    #[test]
    fn sig6() {
        let cases = [
            (2.302585093, "2.30259"),
            (0.1, "0.1"),
            (1.0, "1"),
            (0.000123456789, "0.000123457"),
            (0.0000123456, "1.23456e-05"),
            (123456.7, "123457"),
            (1234567.0, "1.23457e+06"),
            (-0.5, "-0.5"),
            (0.0, "0"),
            (0.9999999, "1"),
        ];
        for (x, s) in cases {
            assert_eq!(format_sig6(x), s, "{x}");
        }
    }

    fn dense_only(weight: Vec<f32>) -> Model<f32> {
        use crate::layers::DenseParams;
        use crate::network::{DenseLayer, Layer, Node};
        let w = Tensor4::from_vec(Shape4::new(10, 10, 1, 1).unwrap(), weight).unwrap();
        let dense = DenseLayer::new(DenseParams::new(w, vec![0.0; 10]).unwrap()).unwrap();
        let nodes = vec![
            Node { name: "flatten1".into(), layer: Layer::Flatten },
            Node { name: "dense1".into(), layer: Layer::Dense(dense) },
        ];
        Model::new("dense", crate::tensor::ImageShape { c: 1, h: 1, w: 10 }, nodes).unwrap()
    }

    fn one_hot_set() -> Dataset {
        let n = 50;
        let mut x = Tensor4::zeros(Shape4::new(n, 1, 1, 10).unwrap()).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        for (i, &l) in labels.iter().enumerate() {
            x.set(i, 0, 0, l, 1.0);
        }
        Dataset::new("one-hot", x, labels, 10).unwrap()
    }

    #[test]
    fn evaluate_chance_and_memorization() {
        let data = one_hot_set();
        let mut constant = dense_only(vec![0.0; 100]);
        let (loss, top1) = evaluate(&mut constant, &data, 7).unwrap();
        assert_eq!(top1, 0.1);
        assert!((loss - 10f64.ln()).abs() < 1e-6);
        let eye: Vec<f32> = (0..100).map(|i| if i / 10 == i % 10 { 5.0 } else { 0.0 }).collect();
        let mut perfect = dense_only(eye);
        assert_eq!(evaluate(&mut perfect, &data, 7).unwrap().1, 1.0);
        assert_eq!(evaluate(&mut perfect, &data, 7).unwrap(), evaluate(&mut perfect, &data, 7).unwrap());
        assert_eq!(evaluate(&mut perfect, &data, 50).unwrap().1, 1.0);
        assert_eq!(perfect.mode(), Mode::Train);
    }

    #[test]
    fn training_reduces_loss_and_learns() {
        let (train, test) = (halves(64, 1), halves(32, 2));
        let mut m = toy_model(3);
        let s = train_loop(&mut m, &train, Some(&test), &quick_cfg(), &mut |_| Ok(())).unwrap();
        assert_eq!(s.steps, 24);
        let losses: Vec<f64> = s.rows.iter().filter(|r| r.split == Split::Train).map(|r| r.loss).collect();
        assert_eq!(losses.len(), 3);
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
        assert!(s.last(Split::Test).unwrap().top1 >= 0.9);
    }

    #[test]
    fn deterministic_runs_are_bitwise_identical() {
        let (train, test) = (halves(40, 1), halves(16, 2));
        let cfg = TrainConfig {
            deterministic: true,
            max_steps: Some(12),
            augment: Some(AugmentPolicy { pad: 1, crop: 6, mirror_p: 0.5 }),
            ..quick_cfg()
        };
        let run = || {
            let mut m = toy_model(5);
            let s = train_loop(&mut m, &train, Some(&test), &cfg, &mut |_| Ok(())).unwrap();
            (metrics_csv(&s.rows), m.checkpoint_bytes().unwrap())
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert!(a.0.starts_with("epoch,step,split,loss,top1,lr,seconds\n"));
        assert!(a.0.lines().skip(1).all(|l| l.ends_with(",0")));
        let other = TrainConfig { seed: 1, ..cfg.clone() };
        let mut m = toy_model(5);
        let s = train_loop(&mut m, &train, Some(&test), &other, &mut |_| Ok(())).unwrap();
        assert_ne!(metrics_csv(&s.rows), a.0);
    }

    #[test]
    fn max_steps_stops_mid_epoch() {
        let train = halves(40, 1);
        let cfg = TrainConfig { max_steps: Some(7), ..quick_cfg() };
        let s = train_loop(&mut toy_model(1), &train, None, &cfg, &mut |_| Ok(())).unwrap();
        assert_eq!(s.steps, 7);
        assert_eq!(s.rows.iter().map(|r| (r.epoch, r.step)).collect::<Vec<_>>(), vec![(1, 5), (2, 7)]);
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let (train, test) = (halves(32, 1), halves(16, 2));
        let mut m = toy_model(2);
        let before = params(&mut m);
        let cfg = TrainConfig { lr: 0.0, ..quick_cfg() };
        train_loop(&mut m, &train, Some(&test), &cfg, &mut |_| Ok(())).unwrap();
        assert_eq!(params(&mut m), before);

        // Without batch-norm buffers the evaluation is unchanged as well.
        let text = "input 1 6 6\ngroup g1\nconv 3 4\nrelu\ngap\nflatten\ndense 2\n";
        let mut m = parse(text).unwrap().build::<f32>(3).unwrap();
        let initial = evaluate(&mut m, &test, 16).unwrap();
        let s = train_loop(&mut m, &train, Some(&test), &cfg, &mut |_| Ok(())).unwrap();
        let last = s.last(Split::Test).unwrap();
        assert_eq!((last.loss, last.top1), initial);
    }

    #[test]
    fn overfit_one_batch() {
        let spec = crate::archdsl::ConvStack::new(
            "toy",
            crate::tensor::ImageShape { c: 1, h: 8, w: 8 },
            vec![4, 4, 4, 6, 6, 6, 8, 8],
            vec![3, 6],
            crate::archdsl::SimpNetOptions { num_classes: 2, ..Default::default() },
        )
        .spec()
        .unwrap();
        let mut m = spec.build::<f32>(4).unwrap();
        let s = Shape4::new(16, 1, 8, 8).unwrap();
        let x = Tensor4::fill_random_normal(s, 1.0, &CounterRng::new(8)).unwrap();
        let y: Vec<usize> = (0..16).map(|i| i % 2).collect();
        let mut sgd = Sgd::new(0.9, 0.0);
        let mut losses = Vec::new();
        for _ in 0..20 {
            m.zero_grad();
            // One mask stream throughout, so every step sees the same function.
            let (logits, cache) = m.forward(&x, &CounterRng::new(1)).unwrap();
            let (loss, grad) = softmax_xent(&logits, &y).unwrap();
            losses.push(loss);
            m.backward(&grad, &cache).unwrap();
            sgd.step(&mut m, 0.02).unwrap();
        }
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
        assert!(losses[19] < 0.5 * losses[0], "{losses:?}");
    }

    #[test]
    fn divergence_aborts_with_finite_model() {
        let train = halves(32, 1);
        let mut m = toy_model(1);
        let cfg = TrainConfig { lr: 1e30, momentum: 0.0, ..quick_cfg() };
        let err = train_loop(&mut m, &train, None, &cfg, &mut |_| Ok(())).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
        assert!(m.checkpoint_bytes().is_ok());
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        let data = one_hot_set();
        assert!(matches!(
            train_loop(&mut toy_model(1), &data, None, &quick_cfg(), &mut |_| Ok(())),
            Err(Error::Shape(_))
        ));
    }
}
