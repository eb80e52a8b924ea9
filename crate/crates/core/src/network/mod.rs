//! Sequential model container with a named parameter registry.

mod checkpoint;
mod ledger;

use std::sync::atomic::{AtomicU64, Ordering};

pub use checkpoint::{decode_records, encode_records, TensorRecord, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use ledger::{count_macs, count_params, LedgerRow, ParamLedger};

use crate::error::{Error, Result};
use crate::layers::{
    self, BatchNormCache, BatchNormParams, Conv2dParams, DenseParams, DropMask, Mode, SafPoolConfig,
};
use crate::rng::CounterRng;
use crate::tensor::{ImageShape, Scalar, Shape4, Tensor4};

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Debug)]
pub struct ConvLayer<T> {
    pub params: Conv2dParams<T>,
    pub grad_weight: Tensor4<T>,
    pub grad_bias: Vec<T>,
    /// Stride-2 convolution standing in for a pooling layer.
    pub downsample: bool,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(params: Conv2dParams<T>, downsample: bool) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            grad_weight: Tensor4::zeros(params.weight.shape())?,
            grad_bias: vec![T::zero(); params.c_out()],
            params,
            downsample,
        })
    }

    /// Kaiming-normal weights (std √(2/fan_in)), zero bias.
    pub fn kaiming(c_in: usize, c_out: usize, kernel: usize, stride: usize, pad: usize, downsample: bool, rng: &CounterRng) -> Result<Self> {
        let fan_in = (c_in * kernel * kernel) as f64;
        let weight = Tensor4::fill_random_normal(Shape4::new(c_out, c_in, kernel, kernel)?, (2.0 / fan_in).sqrt(), rng)?;
        Self::new(Conv2dParams::new(weight, vec![T::zero(); c_out], stride, pad)?, downsample)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormLayer<T> {
    pub params: BatchNormParams<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
}

impl<T: Scalar> BatchNormLayer<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            params: BatchNormParams::new(channels),
            grad_gamma: vec![T::zero(); channels],
            grad_beta: vec![T::zero(); channels],
        }
    }
}

#[derive(Clone, Debug)]
pub struct DenseLayer<T> {
    pub params: DenseParams<T>,
    pub grad_weight: Tensor4<T>,
    pub grad_bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(params: DenseParams<T>) -> Result<Self> {
        Ok(Self {
            grad_weight: Tensor4::zeros(params.weight.shape())?,
            grad_bias: vec![T::zero(); params.out_features()],
            params,
        })
    }

    pub fn kaiming(d: usize, m: usize, rng: &CounterRng) -> Result<Self> {
        let weight = Tensor4::fill_random_normal(Shape4::new(d, m, 1, 1)?, (2.0 / d as f64).sqrt(), rng)?;
        Self::new(DenseParams::new(weight, vec![T::zero(); m])?)
    }
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Conv(ConvLayer<T>),
    BatchNorm(BatchNormLayer<T>),
    Relu,
    Dropout { p: f64 },
    MaxPool { window: usize, stride: usize },
    SafPool(SafPoolConfig),
    GlobalAvgPool,
    GlobalMaxPool,
    Flatten,
    Dense(DenseLayer<T>),
}

/// Per-layer state saved by a forward pass for the matching backward pass.
#[derive(Clone, Debug)]
pub enum LayerCache<T> {
    Input(Tensor4<T>),
    BatchNorm(BatchNormCache<T>),
    Mask(DropMask),
    Argmax { argmax: Vec<usize>, input: Shape4 },
    Saf { mask: DropMask, argmax: Vec<usize>, input: Shape4 },
    InputShape(Shape4),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(c) if c.downsample => "sconv",
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "bn",
            Layer::Relu => "relu",
            Layer::Dropout { .. } => "dropout",
            Layer::MaxPool { .. } => "maxpool",
            Layer::SafPool(_) => "safpool",
            Layer::GlobalAvgPool => "gap",
            Layer::GlobalMaxPool => "gmp",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
        }
    }

    pub fn output_shape(&self, x: Shape4) -> Result<Shape4> {
        match self {
            Layer::Conv(c) => c.params.output_shape(x),
            Layer::BatchNorm(b) => {
                if x.c != b.params.channels() {
                    return Err(Error::Shape(format!(
                        "input has {} channels, batch norm has {}",
                        x.c,
                        b.params.channels()
                    )));
                }
                Ok(x)
            }
            Layer::Relu | Layer::Dropout { .. } => Ok(x),
            Layer::MaxPool { window, stride } => pool_shape(x, *window, *stride),
            Layer::SafPool(cfg) => pool_shape(x, cfg.window, cfg.stride),
            Layer::GlobalAvgPool | Layer::GlobalMaxPool => Shape4::new(x.n, x.c, 1, 1),
            Layer::Flatten => Shape4::new(x.n, x.sample_len(), 1, 1),
            Layer::Dense(d) => {
                if x.sample_len() != d.params.in_features() {
                    return Err(Error::Shape(format!(
                        "dense expects {} features, got {}",
                        d.params.in_features(),
                        x.sample_len()
                    )));
                }
                Shape4::new(x.n, d.params.out_features(), 1, 1)
            }
        }
    }

    /// Trainable parameter count (running statistics excluded).
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.params.weight.len() + c.params.bias.len(),
            Layer::BatchNorm(b) => 2 * b.params.channels(),
            Layer::Dense(d) => d.params.param_count(),
            _ => 0,
        }
    }

    pub fn forward(&mut self, x: Tensor4<T>, mode: Mode, rng: &CounterRng) -> Result<(Tensor4<T>, LayerCache<T>)> {
        Ok(match self {
            Layer::Conv(c) => (layers::conv2d_forward(&x, &c.params)?, LayerCache::Input(x)),
            Layer::BatchNorm(b) => {
                let (y, cache) = layers::batchnorm_forward(&x, &mut b.params, mode)?;
                (y, LayerCache::BatchNorm(cache))
            }
            Layer::Relu => (layers::relu_forward(&x), LayerCache::Input(x)),
            Layer::Dropout { p } => {
                let (y, mask) = layers::dropout_forward(&x, *p, mode, rng)?;
                (y, LayerCache::Mask(mask))
            }
            Layer::MaxPool { window, stride } => {
                let (y, argmax) = layers::maxpool_forward(&x, *window, *stride)?;
                (y, LayerCache::Argmax { argmax, input: x.shape() })
            }
            Layer::SafPool(cfg) => {
                let out = layers::saf_pool_forward(&x, cfg, mode, rng)?;
                (
                    out.output,
                    LayerCache::Saf {
                        mask: out.mask,
                        argmax: out.argmax,
                        input: x.shape(),
                    },
                )
            }
            Layer::GlobalAvgPool => (layers::global_avgpool_forward(&x)?, LayerCache::InputShape(x.shape())),
            Layer::GlobalMaxPool => {
                let (y, argmax) = layers::global_maxpool_forward(&x)?;
                (y, LayerCache::Argmax { argmax, input: x.shape() })
            }
            Layer::Flatten => {
                let s = x.shape();
                (x.reshape(Shape4::new(s.n, s.sample_len(), 1, 1)?)?, LayerCache::InputShape(s))
            }
            Layer::Dense(d) => (layers::dense_forward(&x, &d.params)?, LayerCache::Input(x)),
        })
    }

    /// Accumulates parameter gradients (+=) and returns the input gradient.
    pub fn backward(&mut self, cache: &LayerCache<T>, grad: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mismatch = || Error::Invariant("cache entry does not match layer kind".into());
        match (self, cache) {
            (Layer::Conv(c), LayerCache::Input(x)) => {
                let g = layers::conv2d_backward(x, &c.params, grad)?;
                c.grad_weight.add_assign(&g.grad_weight)?;
                accumulate(&mut c.grad_bias, &g.grad_bias);
                Ok(g.grad_x)
            }
            (Layer::BatchNorm(b), LayerCache::BatchNorm(cache)) => {
                let g = layers::batchnorm_backward(cache, &b.params, grad)?;
                accumulate(&mut b.grad_gamma, &g.grad_gamma);
                accumulate(&mut b.grad_beta, &g.grad_beta);
                Ok(g.grad_x)
            }
            (Layer::Relu, LayerCache::Input(x)) => layers::relu_backward(x, grad),
            (Layer::Dropout { .. }, LayerCache::Mask(mask)) => layers::dropout_backward(mask, grad),
            (Layer::MaxPool { .. } | Layer::GlobalMaxPool, LayerCache::Argmax { argmax, input }) => {
                layers::maxpool_backward(argmax, grad, *input)
            }
            (Layer::SafPool(_), LayerCache::Saf { mask, argmax, input }) => {
                layers::saf_pool_backward(mask, argmax, grad, *input)
            }
            (Layer::GlobalAvgPool, LayerCache::InputShape(s)) => layers::global_avgpool_backward(grad, *s),
            (Layer::Flatten, LayerCache::InputShape(s)) => grad.clone().reshape(*s),
            (Layer::Dense(d), LayerCache::Input(x)) => {
                let g = layers::dense_backward(x, &d.params, grad)?;
                d.grad_weight.add_assign(&g.grad_weight)?;
                accumulate(&mut d.grad_bias, &g.grad_bias);
                Ok(g.grad_x)
            }
            _ => Err(mismatch()),
        }
    }

    fn push_slots<'a>(&'a mut self, name: &str, out: &mut Vec<TensorSlot<'a, T>>) {
        let slot = |suffix: &str, dims: Vec<usize>, value: &'a mut [T], grad: Option<&'a mut [T]>| TensorSlot {
            name: format!("{name}.{suffix}"),
            dims,
            value,
            grad,
        };
        match self {
            Layer::Conv(c) => {
                let dims = c.params.weight.shape().dims().to_vec();
                let n = c.params.bias.len();
                out.push(slot("weight", dims, c.params.weight.data_mut(), Some(c.grad_weight.data_mut())));
                out.push(slot("bias", vec![n], &mut c.params.bias, Some(&mut c.grad_bias)));
            }
            Layer::BatchNorm(b) => {
                let n = b.params.channels();
                let p = &mut b.params;
                out.push(slot("gamma", vec![n], &mut p.gamma, Some(&mut b.grad_gamma)));
                out.push(slot("beta", vec![n], &mut p.beta, Some(&mut b.grad_beta)));
                out.push(slot("running_mean", vec![n], &mut p.running_mean, None));
                out.push(slot("running_var", vec![n], &mut p.running_var, None));
            }
            Layer::Dense(d) => {
                let (din, dout) = (d.params.in_features(), d.params.out_features());
                out.push(slot("weight", vec![din, dout], d.params.weight.data_mut(), Some(d.grad_weight.data_mut())));
                out.push(slot("bias", vec![dout], &mut d.params.bias, Some(&mut d.grad_bias)));
            }
            _ => {}
        }
    }
}

fn accumulate<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn pool_shape(x: Shape4, window: usize, stride: usize) -> Result<Shape4> {
    if window == 0 || stride == 0 {
        return Err(Error::Argument("pool window and stride must be >= 1".into()));
    }
    if window > x.h || window > x.w {
        return Err(Error::Shape(format!("pool window {window} larger than input {}x{}", x.h, x.w)));
    }
    Shape4::new(x.n, x.c, (x.h - window) / stride + 1, (x.w - window) / stride + 1)
}

/// A parameter or buffer exposed by the registry. Buffers (batch-norm
/// running statistics) have no gradient.
pub struct TensorSlot<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: &'a mut [T],
    pub grad: Option<&'a mut [T]>,
}

#[derive(Clone, Debug)]
pub struct Node<T> {
    pub name: String,
    pub layer: Layer<T>,
}

#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    model_id: u64,
    version: u64,
    entries: Vec<LayerCache<T>>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    name: String,
    input: ImageShape,
    nodes: Vec<Node<T>>,
    mode: Mode,
    id: u64,
    version: u64,
}

impl<T: Scalar> Model<T> {
    /// Checks names are unique and every layer accepts its input shape.
    pub fn new(name: impl Into<String>, input: ImageShape, nodes: Vec<Node<T>>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for node in &nodes {
            if !seen.insert(node.name.as_str()) {
                return Err(Error::Validation(format!("duplicate layer name `{}`", node.name)));
            }
        }
        let model = Self {
            name: name.into(),
            input,
            nodes,
            mode: Mode::Train,
            id: NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        };
        model.output_shape(1)?;
        Ok(model)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> ImageShape {
        self.input
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [Node<T>] {
        &mut self.nodes
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Shape after every layer for a batch of `n`.
    pub fn layer_shapes(&self, n: usize) -> Result<Vec<Shape4>> {
        let mut s = self.input.batch(n)?;
        let mut shapes = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            s = node.layer.output_shape(s).map_err(|e| e.in_layer(&node.name))?;
            shapes.push(s);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self, n: usize) -> Result<Shape4> {
        Ok(self.layer_shapes(n)?.last().copied().unwrap_or(self.input.batch(n)?))
    }

    pub fn num_params(&self) -> usize {
        self.nodes.iter().map(|n| n.layer.param_count()).sum()
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let s = x.shape();
        if ImageShape::from(s) != self.input {
            return Err(Error::Shape(format!(
                "model `{}` expects inputs of {}, got {s}",
                self.name, self.input
            )));
        }
        Ok(())
    }

    /// Runs every layer in order, keeping what backward needs. Layer `i`
    /// draws its randomness from `rng.split(i)`.
    pub fn forward(&mut self, x: &Tensor4<T>, rng: &CounterRng) -> Result<(Tensor4<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let mode = self.mode;
        let mut entries = Vec::with_capacity(self.nodes.len());
        let mut h = x.clone();
        for (i, node) in self.nodes.iter_mut().enumerate() {
            let (y, cache) = node
                .layer
                .forward(h, mode, &rng.split(i as u64))
                .map_err(|e| e.in_layer(&node.name))?;
            entries.push(cache);
            h = y;
        }
        Ok((
            h,
            ForwardCache {
                model_id: self.id,
                version: self.version,
                entries,
            },
        ))
    }

    /// Forward pass without keeping caches, in the current mode.
    pub fn predict(&mut self, x: &Tensor4<T>, rng: &CounterRng) -> Result<Tensor4<T>> {
        self.forward_until(x, rng, self.nodes.len())
    }

    /// Output of the first `count` layers.
    pub fn forward_until(&mut self, x: &Tensor4<T>, rng: &CounterRng, count: usize) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let mode = self.mode;
        let mut h = x.clone();
        for (i, node) in self.nodes.iter_mut().enumerate().take(count) {
            h = node
                .layer
                .forward(h, mode, &rng.split(i as u64))
                .map_err(|e| e.in_layer(&node.name))?
                .0;
        }
        Ok(h)
    }

    /// Forward pass that hands every layer's output to `visit`.
    pub fn forward_inspect(
        &mut self,
        x: &Tensor4<T>,
        rng: &CounterRng,
        mut visit: impl FnMut(usize, &Node<T>, &Tensor4<T>),
    ) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let mode = self.mode;
        let mut h = x.clone();
        for (i, node) in self.nodes.iter_mut().enumerate() {
            h = node
                .layer
                .forward(h, mode, &rng.split(i as u64))
                .map_err(|e| e.in_layer(&node.name))?
                .0;
            visit(i, node, &h);
        }
        Ok(h)
    }

    /// Accumulates gradients for every parameter and returns the gradient
    /// with respect to the model input.
    pub fn backward(&mut self, grad_out: &Tensor4<T>, cache: &ForwardCache<T>) -> Result<Tensor4<T>> {
        if cache.model_id != self.id || cache.version != self.version || cache.entries.len() != self.nodes.len() {
            return Err(Error::Invariant(
                "stale forward cache: model parameters changed or cache belongs to another model".into(),
            ));
        }
        let mut g = grad_out.clone();
        for (node, entry) in self.nodes.iter_mut().zip(&cache.entries).rev() {
            g = node.layer.backward(entry, &g).map_err(|e| e.in_layer(&node.name))?;
        }
        Ok(g)
    }

    /// Parameters and buffers in registry order.
    pub fn slots_mut(&mut self) -> Vec<TensorSlot<'_, T>> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            let name = node.name.clone();
            node.layer.push_slots(&name, &mut out);
        }
        out
    }

    /// Trainable parameters only.
    pub fn params_mut(&mut self) -> Vec<TensorSlot<'_, T>> {
        self.slots_mut().into_iter().filter(|s| s.grad.is_some()).collect()
    }

    /// (name, dims, values) for every parameter and buffer.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, Vec<T>)> {
        // Borrowing through a clone keeps `slots_mut` the single source of names.
        let mut copy = self.clone();
        copy.slots_mut()
            .into_iter()
            .map(|s| (s.name, s.dims, s.value.to_vec()))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for slot in self.params_mut() {
            if let Some(g) = slot.grad {
                g.fill(T::zero());
            }
        }
    }

    /// Invalidates outstanding forward caches after a parameter update.
    pub fn mark_updated(&mut self) {
        self.version += 1;
    }
}
