//! A small CPU convolutional network engine with reverse-mode gradients.
//!
//! Networks are trees of [`Layer`]s operating on one sample at a time.
//! A forward [`Pass`] optionally records a [`Cache`] per layer; feeding the
//! caches back to [`backward`] accumulates parameter gradients and returns
//! the gradient with respect to the input. Mini-batches are formed by
//! accumulating gradients over several samples before an optimizer step.

mod gemm;
mod layers;
mod tensor;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use layers::{BatchNorm, Conv2d, Linear, MaxPool};
pub use tensor::Tensor;

/// A learnable (or frozen) parameter array and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    /// Empty until the first backward pass touches this parameter.
    pub grad: Vec<f32>,
    pub trainable: bool,
}

impl Param {
    pub fn new(shape: Vec<usize>, value: Vec<f32>, trainable: bool) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "parameter value does not match shape");
        Self { shape, value, grad: Vec::new(), trainable }
    }

    pub fn filled(shape: Vec<usize>, v: f32, trainable: bool) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![v; n], trainable)
    }

    /// Samples from `N(0, 2 / fan_in)`.
    pub fn he_normal(shape: Vec<usize>, fan_in: usize, rng: &mut dyn RngCore) -> Self {
        let std = libm::sqrtf(2.0 / fan_in.max(1) as f32);
        let normal = Normal::new(0.0f32, std).expect("finite standard deviation");
        let n = shape.iter().product();
        let value = (0..n).map(|_| normal.sample(rng)).collect();
        Self::new(shape, value, true)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn grad_mut(&mut self) -> &mut [f32] {
        if self.grad.len() != self.value.len() {
            self.grad = vec![0.0; self.value.len()];
        }
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Forward-pass options.
pub struct Pass<'r> {
    record: bool,
    dropout: Option<&'r mut dyn RngCore>,
}

impl<'r> Pass<'r> {
    /// Inference: no caches, dropout disabled.
    pub fn infer() -> Pass<'static> {
        Pass { record: false, dropout: None }
    }

    /// Records caches for a later backward pass, dropout disabled.
    pub fn record() -> Pass<'static> {
        Pass { record: true, dropout: None }
    }

    /// Training: records caches and samples dropout masks from `rng`.
    pub fn train(rng: &'r mut dyn RngCore) -> Pass<'r> {
        Pass { record: true, dropout: Some(rng) }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }
}

/// Intermediate values a layer needs for its backward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    None,
    Conv { cols: Vec<f32>, in_shape: [usize; 3] },
    Linear { input: Vec<f32>, in_shape: [usize; 3] },
    Relu { active: Vec<bool> },
    MaxPool { argmax: Vec<usize>, in_shape: [usize; 3] },
    GlobalAvgPool { in_shape: [usize; 3] },
    Flatten { in_shape: [usize; 3] },
    Dropout { mask: Vec<f32> },
    BatchNorm { normalized: Vec<f32> },
    Seq(Vec<Cache>),
    Concat { branches: Vec<Vec<Cache>>, channels: Vec<usize> },
    Residual { main: Vec<Cache>, shortcut: Vec<Cache> },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("layer `{layer}` cannot take input of shape {input:?}")]
pub struct ShapeError {
    pub layer: String,
    pub input: [usize; 3],
}

/// Network building block.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Linear(Linear),
    Relu,
    MaxPool(MaxPool),
    GlobalAvgPool,
    Flatten,
    /// Inverted dropout with drop probability `p`; identity outside training.
    Dropout(f32),
    BatchNorm(BatchNorm),
    Seq(Vec<Layer>),
    /// Runs every branch on the same input and stacks their channels.
    Concat(Vec<Vec<Layer>>),
    /// `main(x) + shortcut(x)`; an empty shortcut is the identity.
    Residual { main: Vec<Layer>, shortcut: Vec<Layer> },
}

impl Layer {
    pub fn output_shape(&self, s: [usize; 3]) -> Result<[usize; 3], ShapeError> {
        let err = || ShapeError { layer: self.describe(), input: s };
        match self {
            Layer::Conv(c) => c.output_shape(s).ok_or_else(err),
            Layer::Linear(l) => {
                if s[0] * s[1] * s[2] == l.in_features {
                    Ok([l.out_features, 1, 1])
                } else {
                    Err(err())
                }
            }
            Layer::MaxPool(p) => p.output_shape(s).ok_or_else(err),
            Layer::BatchNorm(b) if b.channels() != s[0] => Err(err()),
            Layer::Relu | Layer::Dropout(_) | Layer::BatchNorm(_) => Ok(s),
            Layer::GlobalAvgPool => Ok([s[0], 1, 1]),
            Layer::Flatten => Ok([s[0] * s[1] * s[2], 1, 1]),
            Layer::Seq(layers) => sequence_shape(layers, s),
            Layer::Concat(branches) => {
                let mut channels = 0;
                let mut spatial = None;
                for b in branches {
                    let o = sequence_shape(b, s)?;
                    if spatial.is_some_and(|hw| hw != (o[1], o[2])) {
                        return Err(err());
                    }
                    spatial = Some((o[1], o[2]));
                    channels += o[0];
                }
                let (h, w) = spatial.ok_or_else(err)?;
                Ok([channels, h, w])
            }
            Layer::Residual { main, shortcut } => {
                let a = sequence_shape(main, s)?;
                let b = sequence_shape(shortcut, s)?;
                if a == b {
                    Ok(a)
                } else {
                    Err(err())
                }
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Layer::Conv(c) => format!(
                "conv {}x{} {}->{} stride {} pad {}",
                c.kernel, c.kernel, c.in_channels, c.out_channels, c.stride, c.padding
            ),
            Layer::Linear(l) => format!("linear {}->{}", l.in_features, l.out_features),
            Layer::Relu => "relu".into(),
            Layer::MaxPool(p) => format!("maxpool {}x{} stride {}", p.kernel, p.kernel, p.stride),
            Layer::GlobalAvgPool => "global average pool".into(),
            Layer::Flatten => "flatten".into(),
            Layer::Dropout(p) => format!("dropout {p}"),
            Layer::BatchNorm(b) => format!("batchnorm {}", b.channels()),
            Layer::Seq(l) => format!("sequence of {}", l.len()),
            Layer::Concat(b) => format!("concat of {} branches", b.len()),
            Layer::Residual { .. } => "residual block".into(),
        }
    }

    pub fn has_params(&self) -> bool {
        let mut any = false;
        self.visit("", &mut |_, _| any = true);
        any
    }

    pub fn forward(&self, x: Tensor, pass: &mut Pass<'_>) -> (Tensor, Cache) {
        match self {
            Layer::Conv(c) => c.forward(x, pass.record),
            Layer::Linear(l) => l.forward(x, pass.record),
            Layer::Relu => layers::relu_forward(x, pass.record),
            Layer::MaxPool(p) => p.forward(&x, pass.record),
            Layer::GlobalAvgPool => layers::gap_forward(&x, pass.record),
            Layer::Flatten => {
                let s = x.shape();
                let n = x.len();
                let cache = if pass.record { Cache::Flatten { in_shape: s } } else { Cache::None };
                (x.reshape(n, 1, 1), cache)
            }
            Layer::Dropout(p) => layers::dropout_forward(x, *p, pass),
            Layer::BatchNorm(b) => b.forward(x, pass.record),
            Layer::Seq(layers) => {
                let (y, caches) = forward_sequence(layers, x, pass);
                (y, Cache::Seq(caches))
            }
            Layer::Concat(branches) => {
                let mut outputs = Vec::with_capacity(branches.len());
                let mut caches = Vec::with_capacity(branches.len());
                for b in branches {
                    let (y, c) = forward_sequence(b, x.clone(), pass);
                    outputs.push(y);
                    caches.push(c);
                }
                let [_, h, w] = outputs[0].shape();
                let channels: Vec<usize> = outputs.iter().map(|o| o.channels()).collect();
                let mut data = Vec::with_capacity(channels.iter().sum::<usize>() * h * w);
                for o in outputs {
                    data.extend_from_slice(o.data());
                }
                let y = Tensor::from_vec(channels.iter().sum(), h, w, data);
                let cache = if pass.record { Cache::Concat { branches: caches, channels } } else { Cache::None };
                (y, cache)
            }
            Layer::Residual { main, shortcut } => {
                let (mut y, main_caches) = forward_sequence(main, x.clone(), pass);
                let (skip, skip_caches) = forward_sequence(shortcut, x, pass);
                for (a, b) in y.data_mut().iter_mut().zip(skip.data()) {
                    *a += b;
                }
                let cache = if pass.record {
                    Cache::Residual { main: main_caches, shortcut: skip_caches }
                } else {
                    Cache::None
                };
                (y, cache)
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    ///
    /// Panics if `cache` was not recorded by a forward pass of this layer.
    pub fn backward(&mut self, cache: Cache, grad: Tensor) -> Tensor {
        match (self, cache) {
            (Layer::Conv(c), cache) => c.backward(cache, grad),
            (Layer::Linear(l), cache) => l.backward(cache, grad),
            (Layer::Relu, Cache::Relu { active }) => {
                let mut g = grad;
                for (v, on) in g.data_mut().iter_mut().zip(active) {
                    if !on {
                        *v = 0.0;
                    }
                }
                g
            }
            (Layer::MaxPool(p), cache) => p.backward(cache, grad),
            (Layer::GlobalAvgPool, Cache::GlobalAvgPool { in_shape }) => layers::gap_backward(in_shape, &grad),
            (Layer::Flatten, Cache::Flatten { in_shape: [c, h, w] }) => grad.reshape(c, h, w),
            (Layer::Dropout(_), Cache::Dropout { mask }) => {
                let mut g = grad;
                for (v, m) in g.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
                g
            }
            (Layer::Dropout(_), Cache::None) => grad,
            (Layer::BatchNorm(b), cache) => b.backward(cache, grad),
            (Layer::Seq(layers), Cache::Seq(caches)) => backward_sequence(layers, caches, grad),
            (Layer::Concat(branches), Cache::Concat { branches: caches, channels }) => {
                let plane = grad.plane();
                let [_, h, w] = grad.shape();
                let mut offset = 0;
                let mut total: Option<Tensor> = None;
                for ((branch, caches), ch) in branches.iter_mut().zip(caches).zip(channels) {
                    let part = grad.data()[offset * plane..(offset + ch) * plane].to_vec();
                    offset += ch;
                    let dx = backward_sequence(branch, caches, Tensor::from_vec(ch, h, w, part));
                    total = Some(match total {
                        None => dx,
                        Some(mut t) => {
                            add_into(&mut t, &dx);
                            t
                        }
                    });
                }
                total.expect("concat has at least one branch")
            }
            (Layer::Residual { main, shortcut }, Cache::Residual { main: mc, shortcut: sc }) => {
                let mut dx = backward_sequence(main, mc, grad.clone());
                let ds = backward_sequence(shortcut, sc, grad);
                add_into(&mut dx, &ds);
                dx
            }
            (layer, _) => panic!("backward through `{}` without a recorded forward pass", layer.describe()),
        }
    }

    /// Visits parameters depth-first with dotted path names.
    pub fn visit(&self, path: &str, f: &mut dyn FnMut(&str, &Param)) {
        match self {
            Layer::Conv(c) => {
                f(&join(path, "weight"), &c.weight);
                f(&join(path, "bias"), &c.bias);
            }
            Layer::Linear(l) => {
                f(&join(path, "weight"), &l.weight);
                f(&join(path, "bias"), &l.bias);
            }
            Layer::BatchNorm(b) => {
                f(&join(path, "gamma"), &b.gamma);
                f(&join(path, "beta"), &b.beta);
                f(&join(path, "running_mean"), &b.running_mean);
                f(&join(path, "running_var"), &b.running_var);
            }
            Layer::Seq(layers) => visit_sequence(layers, path, f),
            Layer::Concat(branches) => {
                for (i, b) in branches.iter().enumerate() {
                    visit_sequence(b, &join(path, &format!("{i}")), f);
                }
            }
            Layer::Residual { main, shortcut } => {
                visit_sequence(main, &join(path, "main"), f);
                visit_sequence(shortcut, &join(path, "shortcut"), f);
            }
            _ => {}
        }
    }

    pub fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            Layer::Conv(c) => {
                f(&join(path, "weight"), &mut c.weight);
                f(&join(path, "bias"), &mut c.bias);
            }
            Layer::Linear(l) => {
                f(&join(path, "weight"), &mut l.weight);
                f(&join(path, "bias"), &mut l.bias);
            }
            Layer::BatchNorm(b) => {
                f(&join(path, "gamma"), &mut b.gamma);
                f(&join(path, "beta"), &mut b.beta);
                f(&join(path, "running_mean"), &mut b.running_mean);
                f(&join(path, "running_var"), &mut b.running_var);
            }
            Layer::Seq(layers) => visit_sequence_mut(layers, path, f),
            Layer::Concat(branches) => {
                for (i, b) in branches.iter_mut().enumerate() {
                    visit_sequence_mut(b, &join(path, &format!("{i}")), f);
                }
            }
            Layer::Residual { main, shortcut } => {
                visit_sequence_mut(main, &join(path, "main"), f);
                visit_sequence_mut(shortcut, &join(path, "shortcut"), f);
            }
            _ => {}
        }
    }
}

fn join(path: &str, leaf: &str) -> String {
    if path.is_empty() {
        leaf.into()
    } else {
        format!("{path}.{leaf}")
    }
}

fn add_into(acc: &mut Tensor, other: &Tensor) {
    for (a, b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
}

pub fn sequence_shape(layers: &[Layer], mut s: [usize; 3]) -> Result<[usize; 3], ShapeError> {
    for l in layers {
        s = l.output_shape(s)?;
    }
    Ok(s)
}

pub fn forward_sequence(layers: &[Layer], mut x: Tensor, pass: &mut Pass<'_>) -> (Tensor, Vec<Cache>) {
    let mut caches = Vec::with_capacity(if pass.record { layers.len() } else { 0 });
    for l in layers {
        let (y, c) = l.forward(x, pass);
        if pass.record {
            caches.push(c);
        }
        x = y;
    }
    (x, caches)
}

pub fn backward_sequence(layers: &mut [Layer], caches: Vec<Cache>, mut grad: Tensor) -> Tensor {
    assert_eq!(layers.len(), caches.len(), "cache count does not match layer count");
    for (l, c) in layers.iter_mut().zip(caches).rev() {
        grad = l.backward(c, grad);
    }
    grad
}

pub fn visit_sequence(layers: &[Layer], path: &str, f: &mut dyn FnMut(&str, &Param)) {
    for (i, l) in layers.iter().enumerate() {
        l.visit(&join(path, &format!("{i}")), f);
    }
}

pub fn visit_sequence_mut(layers: &mut [Layer], path: &str, f: &mut dyn FnMut(&str, &mut Param)) {
    for (i, l) in layers.iter_mut().enumerate() {
        l.visit_mut(&join(path, &format!("{i}")), f);
    }
}
