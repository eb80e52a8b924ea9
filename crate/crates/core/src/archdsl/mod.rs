//! Line-oriented architecture descriptions.
//!
//! ```text
//! name toy
//! input 1 28 28
//! group g1
//! conv 3 32 s1 p1
//! relu
//! safpool 2 p0.2
//! flatten
//! dense 10
//! ```
//!
//! One layer per line, `#` starts a comment. The classifier tail begins at
//! the first `gap`, `gmp`, `flatten` or `dense` line.

mod builders;
mod parse;
mod presets;

use std::fmt;

pub use builders::{scale_to_budget, simpnet, ConvStack, Downsample, SimpNetOptions, Tail, SIMPNET_BASE_WIDTHS};
pub use parse::parse;
pub use presets::{ablation_presets, preset, preset_names, resolve_preset, simpnet_preset, Arm, Preset, SIMPNET_PRESETS};

use crate::error::{Error, Result};
use crate::layers::{conv_output_len, SafPoolConfig};
use crate::network::{BatchNormLayer, ConvLayer, DenseLayer, Layer, LedgerRow, Model, Node, ParamLedger};
use crate::rng::CounterRng;
use crate::tensor::{ImageShape, Scalar};

/// Conv kernel sizes the format accepts.
pub const ALLOWED_KERNELS: [usize; 5] = [1, 2, 3, 5, 7];

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv { kernel: usize, out: usize, stride: usize, pad: usize },
    /// Convolution used as a downsampling step in place of pooling.
    SConv { kernel: usize, out: usize, stride: usize, pad: usize },
    MaxPool { window: usize, stride: usize },
    SafPool { window: usize, stride: usize, p: f64 },
    Dropout { p: f64 },
    BatchNorm,
    Relu,
    GlobalAvgPool,
    GlobalMaxPool,
    Flatten,
    Dense { units: usize },
}

impl LayerSpec {
    pub fn keyword(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::SConv { .. } => "sconv",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::SafPool { .. } => "safpool",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::BatchNorm => "bn",
            LayerSpec::Relu => "relu",
            LayerSpec::GlobalAvgPool => "gap",
            LayerSpec::GlobalMaxPool => "gmp",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::SConv { .. })
    }

    /// Layers that begin the classifier tail.
    pub fn starts_tail(&self) -> bool {
        matches!(
            self,
            LayerSpec::GlobalAvgPool | LayerSpec::GlobalMaxPool | LayerSpec::Flatten | LayerSpec::Dense { .. }
        )
    }

    fn allowed_in_tail(&self) -> bool {
        self.starts_tail() || matches!(self, LayerSpec::Relu | LayerSpec::Dropout { .. })
    }

    pub fn kernel(&self) -> Option<usize> {
        match self {
            LayerSpec::Conv { kernel, .. } | LayerSpec::SConv { kernel, .. } => Some(*kernel),
            _ => None,
        }
    }

    /// Output shape for one sample, or a description of why it collapses.
    pub fn output_shape(&self, x: ImageShape) -> std::result::Result<ImageShape, String> {
        let pool = |window: usize, stride: usize| {
            if window > x.h || window > x.w {
                Err(format!("pool window {window} exceeds {}x{} feature map", x.h, x.w))
            } else {
                Ok(ImageShape::new(x.c, (x.h - window) / stride + 1, (x.w - window) / stride + 1))
            }
        };
        match *self {
            LayerSpec::Conv { kernel, out, stride, pad } | LayerSpec::SConv { kernel, out, stride, pad } => {
                match (conv_output_len(x.h, kernel, stride, pad), conv_output_len(x.w, kernel, stride, pad)) {
                    (Some(h), Some(w)) => Ok(ImageShape::new(out, h, w)),
                    _ => Err(format!("kernel {kernel} exceeds padded {}x{} feature map", x.h + 2 * pad, x.w + 2 * pad)),
                }
            }
            LayerSpec::MaxPool { window, stride } | LayerSpec::SafPool { window, stride, .. } => pool(window, stride),
            LayerSpec::Dropout { .. } | LayerSpec::BatchNorm | LayerSpec::Relu => Ok(x),
            LayerSpec::GlobalAvgPool | LayerSpec::GlobalMaxPool => Ok(ImageShape::new(x.c, 1, 1)),
            LayerSpec::Flatten => Ok(ImageShape::new(x.len(), 1, 1)),
            LayerSpec::Dense { units } => Ok(ImageShape::new(units, 1, 1)),
        }
    }

    /// Trainable parameters given the input shape.
    pub fn param_count(&self, x: ImageShape) -> usize {
        match *self {
            LayerSpec::Conv { kernel, out, .. } | LayerSpec::SConv { kernel, out, .. } => out * x.c * kernel * kernel + out,
            LayerSpec::BatchNorm => 2 * x.c,
            LayerSpec::Dense { units } => x.len() * units + units,
            _ => 0,
        }
    }

    pub fn macs(&self, x: ImageShape, out: ImageShape) -> u64 {
        match *self {
            LayerSpec::Conv { kernel, .. } | LayerSpec::SConv { kernel, .. } => {
                out.len() as u64 * (x.c * kernel * kernel) as u64
            }
            LayerSpec::Dense { units } => (x.len() * units) as u64,
            _ => 0,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        match *self {
            LayerSpec::Conv { kernel, out, stride, .. } | LayerSpec::SConv { kernel, out, stride, .. } => {
                if !ALLOWED_KERNELS.contains(&kernel) {
                    return bad(format!("conv kernel {kernel} not in {ALLOWED_KERNELS:?}"));
                }
                if out == 0 || stride == 0 {
                    return bad("conv needs at least one output channel and stride >= 1".into());
                }
            }
            LayerSpec::MaxPool { window, stride } => {
                if window == 0 || stride == 0 {
                    return bad("pool window and stride must be >= 1".into());
                }
            }
            LayerSpec::SafPool { window, stride, p } => {
                SafPoolConfig::new(window, stride, p).map_err(|e| Error::Validation(e.to_string()))?;
            }
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return bad(format!("dropout probability {p} outside [0, 1)"));
                }
            }
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return bad("dense needs at least one unit".into());
                }
            }
            _ => {}
        }
        Ok(())
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kw = self.keyword();
        match self {
            LayerSpec::Conv { kernel, out, stride, pad } | LayerSpec::SConv { kernel, out, stride, pad } => {
                write!(f, "{kw} {kernel} {out} s{stride} p{pad}")
            }
            LayerSpec::MaxPool { window, stride } => write!(f, "{kw} {window} s{stride}"),
            LayerSpec::SafPool { window, stride, p } => write!(f, "{kw} {window} s{stride} p{p:?}"),
            LayerSpec::Dropout { p } => write!(f, "{kw} p{p:?}"),
            LayerSpec::Dense { units } => write!(f, "{kw} {units}"),
            _ => f.write_str(kw),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub name: String,
    pub input: ImageShape,
    pub groups: Vec<Group>,
    pub tail: Vec<LayerSpec>,
}

/// One layer with its generated name, position and symbolic shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedLayer {
    pub name: String,
    /// Group name, or `None` for tail layers.
    pub group: Option<String>,
    pub spec: LayerSpec,
    pub input: ImageShape,
    pub output: ImageShape,
}

impl ArchSpec {
    /// Structural checks: at least one group, no empty groups, a tail that
    /// contains a classifier and nothing but classifier layers.
    pub fn validate(&self) -> Result<()> {
        if self.input.c == 0 || self.input.h == 0 || self.input.w == 0 {
            return Err(Error::Validation(format!("input dims must be >= 1, got {}", self.input)));
        }
        if self.groups.is_empty() {
            return Err(Error::Validation("architecture has no groups".into()));
        }
        for g in &self.groups {
            if g.layers.is_empty() {
                return Err(Error::Validation(format!("group `{}` is empty", g.name)));
            }
            if let Some(l) = g.layers.iter().find(|l| l.starts_tail()) {
                return Err(Error::Validation(format!("`{}` inside group `{}`; it belongs to the tail", l.keyword(), g.name)));
            }
        }
        if self.tail.is_empty() {
            return Err(Error::Validation("missing classifier tail (gap or flatten + dense)".into()));
        }
        if !self.tail[0].starts_tail() {
            return Err(Error::Validation(format!("tail cannot start with `{}`", self.tail[0].keyword())));
        }
        if let Some(l) = self.tail.iter().find(|l| !l.allowed_in_tail()) {
            return Err(Error::Validation(format!("`{}` after the classifier tail began", l.keyword())));
        }
        for l in self.layers() {
            l.validate()?;
        }
        Ok(())
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.groups.iter().flat_map(|g| g.layers.iter()).chain(&self.tail)
    }

    pub fn conv_count(&self) -> usize {
        self.layers().filter(|l| l.is_conv()).count()
    }

    /// Names every layer (`conv1`, `relu3`, ...) and infers shapes without
    /// building anything.
    pub fn resolve(&self) -> Result<Vec<ResolvedLayer>> {
        self.validate()?;
        let mut counters: std::collections::HashMap<&str, usize> = Default::default();
        let mut shape = self.input;
        let mut out = Vec::new();
        let entries = self
            .groups
            .iter()
            .flat_map(|g| g.layers.iter().map(move |l| (Some(g.name.clone()), l)))
            .chain(self.tail.iter().map(|l| (None, l)));
        for (group, spec) in entries {
            let n = counters.entry(spec.keyword()).or_default();
            *n += 1;
            let name = format!("{}{}", spec.keyword(), n);
            let output = spec
                .output_shape(shape)
                .map_err(|message| Error::ShapeCollapse { layer: name.clone(), message })?;
            out.push(ResolvedLayer {
                name,
                group,
                spec: spec.clone(),
                input: shape,
                output,
            });
            shape = output;
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<ImageShape> {
        Ok(self.resolve()?.last().map(|l| l.output).unwrap_or(self.input))
    }

    /// Parameter/MAC ledger computed from the specs alone.
    pub fn ledger(&self) -> Result<ParamLedger> {
        Ok(ParamLedger::new(
            self.resolve()?
                .into_iter()
                .map(|l| LedgerRow {
                    params: l.spec.param_count(l.input),
                    macs: l.spec.macs(l.input, l.output),
                    kind: l.spec.keyword().to_string(),
                    out_shape: l.output,
                    name: l.name,
                })
                .collect(),
        ))
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.ledger()?.total_params())
    }

    pub fn with_input(mut self, input: ImageShape) -> Self {
        self.input = input;
        self
    }

    /// Retargets the final dense layer to `k` classes.
    pub fn with_num_classes(mut self, k: usize) -> Result<Self> {
        match self.tail.iter_mut().rev().find(|l| matches!(l, LayerSpec::Dense { .. })) {
            Some(LayerSpec::Dense { units }) => *units = k,
            _ => return Err(Error::Validation("architecture has no dense classifier".into())),
        }
        Ok(self)
    }

    /// Number of classes the classifier emits.
    pub fn num_classes(&self) -> Option<usize> {
        match self.tail.last()? {
            LayerSpec::Dense { units } => Some(*units),
            _ => None,
        }
    }

    /// Instantiates the model with Kaiming-initialised weights; layer `i`
    /// is initialised from `CounterRng::new(seed).split(i)`.
    pub fn build<T: Scalar>(&self, seed: u64) -> Result<Model<T>> {
        let rng = CounterRng::new(seed);
        let mut nodes = Vec::new();
        for (i, l) in self.resolve()?.into_iter().enumerate() {
            let r = rng.split(i as u64);
            let layer = match l.spec {
                LayerSpec::Conv { kernel, out, stride, pad } => {
                    Layer::Conv(ConvLayer::kaiming(l.input.c, out, kernel, stride, pad, false, &r)?)
                }
                LayerSpec::SConv { kernel, out, stride, pad } => {
                    Layer::Conv(ConvLayer::kaiming(l.input.c, out, kernel, stride, pad, true, &r)?)
                }
                LayerSpec::MaxPool { window, stride } => Layer::MaxPool { window, stride },
                LayerSpec::SafPool { window, stride, p } => Layer::SafPool(SafPoolConfig::new(window, stride, p)?),
                LayerSpec::Dropout { p } => Layer::Dropout { p },
                LayerSpec::BatchNorm => Layer::BatchNorm(BatchNormLayer::new(l.input.c)),
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
                LayerSpec::GlobalMaxPool => Layer::GlobalMaxPool,
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Dense { units } => Layer::Dense(DenseLayer::kaiming(l.input.len(), units, &r)?),
            };
            nodes.push(Node { name: l.name, layer });
        }
        Model::new(self.name.clone(), self.input, nodes)
    }

    /// Canonical text form; `parse(&spec.render())` gives back `spec`.
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.name.is_empty() {
            writeln!(f, "name {}", self.name)?;
        }
        writeln!(f, "input {} {} {}", self.input.c, self.input.h, self.input.w)?;
        for g in &self.groups {
            writeln!(f, "group {}", g.name)?;
            for l in &g.layers {
                writeln!(f, "{l}")?;
            }
        }
        for l in &self.tail {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::count_params;
    use crate::tensor::Tensor4;

    const TOY: &str = "input 1 28 28\ngroup g1\nconv 3 32 s1 p1\nrelu\nsafpool 2 p0.2\nflatten\ndense 10\n";

    #[test]
    fn toy_builds_and_runs() {
        let spec = parse(TOY).unwrap();
        let mut m = spec.build::<f32>(0).unwrap();
        let x = Tensor4::zeros(spec.input.batch(2).unwrap()).unwrap();
        let (y, _) = m.forward(&x, &CounterRng::new(0)).unwrap();
        assert_eq!(ImageShape::from(y.shape()), spec.output_shape().unwrap());
        assert_eq!(y.shape().n, 2);
    }

    #[test]
    fn spec_ledger_matches_model() {
        let spec = parse(TOY).unwrap();
        let m = spec.build::<f32>(0).unwrap();
        assert_eq!(spec.ledger().unwrap(), count_params(&m).unwrap());
        assert_eq!(spec.param_count().unwrap(), 320 + 32 * 14 * 14 * 10 + 10);
    }

    #[test]
    fn collapse_is_reported() {
        let text = "input 1 28 28\ngroup g\nmaxpool 2\nmaxpool 2\nmaxpool 2\nmaxpool 2\nmaxpool 2\ngap\ndense 10\n";
        let err = parse(text).unwrap().build::<f32>(0).unwrap_err();
        match err {
            Error::ShapeCollapse { layer, .. } => assert_eq!(layer, "maxpool5"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn retarget_classes() {
        let spec = parse(TOY).unwrap();
        let a = spec.param_count().unwrap();
        let b = spec.clone().with_num_classes(100).unwrap().param_count().unwrap();
        assert_eq!(b - a, 90 * (32 * 14 * 14 + 1));
    }
}
