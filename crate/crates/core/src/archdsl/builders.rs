use super::{ArchSpec, Group, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::ImageShape;

/// Relative widths of the 13 SimpNet convolutions before budget scaling.
pub const SIMPNET_BASE_WIDTHS: [usize; 13] = [32, 32, 32, 48, 48, 48, 48, 64, 64, 64, 64, 80, 96];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Tail {
    #[default]
    Gap,
    Gmp,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Downsample {
    #[default]
    SafPool,
    MaxPool,
    /// 3×3 stride-2 convolution (with its own BN/ReLU) instead of pooling.
    StridedConv,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimpNetOptions {
    pub bn: bool,
    /// Dropout after every convolution; 0 disables it.
    pub conv_dropout_p: f64,
    pub saf_drop_p: f64,
    pub num_classes: usize,
    pub tail: Tail,
    pub downsample: Downsample,
}

impl Default for SimpNetOptions {
    fn default() -> Self {
        Self {
            bn: true,
            conv_dropout_p: 0.2,
            saf_drop_p: 0.2,
            num_classes: 10,
            tail: Tail::Gap,
            downsample: Downsample::SafPool,
        }
    }
}

/// A single-path stack of same-padded convolutions with downsampling after
/// chosen layers. Every downsampling step closes a group.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack {
    pub name: String,
    pub input: ImageShape,
    pub widths: Vec<usize>,
    pub kernels: Vec<usize>,
    /// 1-based indices of the convolutions followed by downsampling.
    pub pool_after: Vec<usize>,
    pub options: SimpNetOptions,
}

impl ConvStack {
    pub fn new(name: impl Into<String>, input: ImageShape, widths: Vec<usize>, pool_after: Vec<usize>, options: SimpNetOptions) -> Self {
        let kernels = vec![3; widths.len()];
        Self {
            name: name.into(),
            input,
            widths,
            kernels,
            pool_after,
            options,
        }
    }

    pub fn with_kernels(mut self, kernels: Vec<usize>) -> Self {
        self.kernels = kernels;
        self
    }

    pub fn spec(&self) -> Result<ArchSpec> {
        let o = &self.options;
        if self.widths.is_empty() || self.kernels.len() != self.widths.len() {
            return Err(Error::Argument(format!(
                "{} widths and {} kernels; need the same non-zero count",
                self.widths.len(),
                self.kernels.len()
            )));
        }
        if let Some(&bad) = self.pool_after.iter().find(|&&i| i == 0 || i > self.widths.len()) {
            return Err(Error::Argument(format!("pool position {bad} outside 1..={}", self.widths.len())));
        }
        if self.widths.contains(&0) || o.num_classes == 0 {
            return Err(Error::Argument("widths and class count must be >= 1".into()));
        }
        let block = |layers: &mut Vec<LayerSpec>, conv: LayerSpec, dropout: bool| {
            layers.push(conv);
            if o.bn {
                layers.push(LayerSpec::BatchNorm);
            }
            layers.push(LayerSpec::Relu);
            if dropout && o.conv_dropout_p > 0.0 {
                layers.push(LayerSpec::Dropout { p: o.conv_dropout_p });
            }
        };
        let mut groups = Vec::new();
        let mut current = Vec::new();
        for (i, (&w, &k)) in self.widths.iter().zip(&self.kernels).enumerate() {
            let conv = LayerSpec::Conv {
                kernel: k,
                out: w,
                stride: 1,
                pad: (k - 1) / 2,
            };
            block(&mut current, conv, true);
            if self.pool_after.contains(&(i + 1)) {
                match o.downsample {
                    Downsample::SafPool => current.push(LayerSpec::SafPool {
                        window: 2,
                        stride: 2,
                        p: o.saf_drop_p,
                    }),
                    Downsample::MaxPool => current.push(LayerSpec::MaxPool { window: 2, stride: 2 }),
                    Downsample::StridedConv => {
                        let sconv = LayerSpec::SConv {
                            kernel: 3,
                            out: w,
                            stride: 2,
                            pad: 1,
                        };
                        block(&mut current, sconv, false);
                    }
                }
                groups.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            groups.push(current);
        }
        let global = match o.tail {
            Tail::Gap => LayerSpec::GlobalAvgPool,
            Tail::Gmp => LayerSpec::GlobalMaxPool,
        };
        let spec = ArchSpec {
            name: self.name.clone(),
            input: self.input,
            groups: groups
                .into_iter()
                .enumerate()
                .map(|(i, layers)| Group {
                    name: format!("g{}", i + 1),
                    layers,
                })
                .collect(),
            tail: vec![global, LayerSpec::Flatten, LayerSpec::Dense { units: o.num_classes }],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn param_count(&self) -> Result<usize> {
        self.spec()?.param_count()
    }

    fn scaled(&self, s: f64, base: &[usize]) -> Self {
        let mut out = self.clone();
        out.widths = base.iter().map(|&w| ((w as f64 * s).round() as usize).max(1)).collect();
        out
    }
}

/// The 13-convolution SimpNet topology: five convolutions, downsampling,
/// five more, downsampling, three more, then global pooling and a dense
/// classifier. Returns the spec and any design warnings about the widths.
pub fn simpnet(widths: &[usize], input: ImageShape, options: SimpNetOptions) -> Result<(ArchSpec, Vec<String>)> {
    if widths.len() != 13 {
        return Err(Error::Argument(format!("simpnet needs 13 widths, got {}", widths.len())));
    }
    let mut warnings = Vec::new();
    for (i, pair) in widths.windows(2).enumerate() {
        if pair[1] < pair[0] {
            warnings.push(format!("width decreases from conv{} ({}) to conv{} ({})", i + 1, pair[0], i + 2, pair[1]));
        }
    }
    if widths.iter().all(|&w| w == widths[0]) {
        warnings.push(format!("all widths equal ({}); no gradual expansion", widths[0]));
    }
    let stack = ConvStack::new("simpnet", input, widths.to_vec(), vec![5, 10], options);
    Ok((stack.spec()?, warnings))
}

/// Scales `stack.widths` by a common factor, then nudges single widths by
/// one, so that the parameter total lands as close to `budget` as possible.
/// Fails if the result is further than `tolerance` (relative) away.
pub fn scale_to_budget(stack: &ConvStack, budget: usize, tolerance: f64) -> Result<ConvStack> {
    let base = stack.widths.clone();
    let target = budget as f64;
    let err = |s: &ConvStack| -> Result<f64> { Ok((s.param_count()? as f64 - target).abs()) };

    let (mut lo, mut hi) = (1e-3f64, 1e3f64);
    for _ in 0..80 {
        let mid = (lo * hi).sqrt();
        if (stack.scaled(mid, &base).param_count()? as f64) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (a, b) = (stack.scaled(lo, &base), stack.scaled(hi, &base));
    let mut best = if err(&a)? <= err(&b)? { a } else { b };
    let mut best_err = err(&best)?;

    // Widths stay non-decreasing wherever the base was.
    let keeps_order = |w: &[usize], i: usize| -> bool {
        (i == 0 || base[i - 1] > base[i] || w[i - 1] <= w[i]) && (i + 1 == w.len() || base[i] > base[i + 1] || w[i] <= w[i + 1])
    };
    loop {
        let mut improved = None;
        for i in 0..best.widths.len() {
            for delta in [-1i64, 1] {
                let w = best.widths[i] as i64 + delta;
                if w < 1 {
                    continue;
                }
                let mut cand = best.clone();
                cand.widths[i] = w as usize;
                if !keeps_order(&cand.widths, i) {
                    continue;
                }
                let e = err(&cand)?;
                if e < best_err && improved.as_ref().is_none_or(|(be, _)| e < *be) {
                    improved = Some((e, cand));
                }
            }
        }
        match improved {
            Some((e, cand)) => {
                best = cand;
                best_err = e;
            }
            None => break,
        }
    }
    if best_err / target > tolerance {
        return Err(Error::Validation(format!(
            "cannot reach {budget} parameters within {:.1}% (closest {})",
            tolerance * 100.0,
            best.param_count()?
        )));
    }
    Ok(best)
}
