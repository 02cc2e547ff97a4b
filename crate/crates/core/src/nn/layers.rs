use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use super::gemm::{gemm, View};
use super::{Cache, Param, Pass, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out, in, k, k]`
    pub weight: Param,
    pub bias: Param,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn he(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut dyn RngCore,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Param::he_normal(vec![out_channels, in_channels, kernel, kernel], fan_in, rng),
            bias: Param::filled(vec![out_channels], 0.0, true),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    pub fn output_shape(&self, [c, h, w]: [usize; 3]) -> Option<[usize; 3]> {
        if c != self.in_channels || h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return None;
        }
        let ho = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let wo = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        Some([self.out_channels, ho, wo])
    }

    pub(super) fn forward(&self, x: Tensor, record: bool) -> (Tensor, Cache) {
        let in_shape = x.shape();
        let [o, ho, wo] = self.output_shape(in_shape).expect("conv input shape was validated");
        let pixels = ho * wo;
        let rows = self.in_channels * self.kernel * self.kernel;
        let cols = if self.is_pointwise() { x.into_vec() } else { self.im2col(&x, ho, wo) };
        let mut y = vec![0.0f32; o * pixels];
        for (row, &b) in y.chunks_exact_mut(pixels).zip(&self.bias.value) {
            row.iter_mut().for_each(|v| *v = b);
        }
        gemm(View::new(&self.weight.value, o, rows), View::new(&cols, rows, pixels), 1.0, &mut y);
        let cache = if record { Cache::Conv { cols, in_shape } } else { Cache::None };
        (Tensor::from_vec(o, ho, wo, y), cache)
    }

    pub(super) fn backward(&mut self, cache: Cache, grad: Tensor) -> Tensor {
        let Cache::Conv { cols, in_shape } = cache else {
            panic!("conv backward without a recorded forward pass");
        };
        let [o, ho, wo] = grad.shape();
        let pixels = ho * wo;
        let rows = self.in_channels * self.kernel * self.kernel;
        let dy = grad.data();
        for (g, row) in self.bias.grad_mut().iter_mut().zip(dy.chunks_exact(pixels)) {
            *g += row.iter().sum::<f32>();
        }
        gemm(View::new(dy, o, pixels), View::transposed(&cols, rows, pixels), 1.0, self.weight.grad_mut());
        let mut dcols = vec![0.0f32; rows * pixels];
        gemm(View::transposed(&self.weight.value, o, rows), View::new(dy, o, pixels), 0.0, &mut dcols);
        let [c, h, w] = in_shape;
        if self.is_pointwise() {
            Tensor::from_vec(c, h, w, dcols)
        } else {
            self.col2im(&dcols, in_shape, ho, wo)
        }
    }

    fn im2col(&self, x: &Tensor, ho: usize, wo: usize) -> Vec<f32> {
        let [c, h, w] = x.shape();
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let pixels = ho * wo;
        let mut cols = vec![0.0f32; c * k * k * pixels];
        let src = x.data();
        for ch in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((ch * k + ki) * k + kj) * pixels;
                    for oy in 0..ho {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[(ch * h + iy as usize) * w..][..w];
                        let dst = &mut cols[row + oy * wo..][..wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kj) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &[f32], [c, h, w]: [usize; 3], ho: usize, wo: usize) -> Tensor {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let pixels = ho * wo;
        let mut dx = vec![0.0f32; c * h * w];
        for ch in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((ch * k + ki) * k + kj) * pixels;
                    for oy in 0..ho {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dx[(ch * h + iy as usize) * w..][..w];
                        let src = &dcols[row + oy * wo..][..wo];
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * s + kj) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(c, h, w, dx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[out, in]`
    pub weight: Param,
    pub bias: Param,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn he(in_features: usize, out_features: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            weight: Param::he_normal(vec![out_features, in_features], in_features, rng),
            bias: Param::filled(vec![out_features], 0.0, true),
            in_features,
            out_features,
        }
    }

    pub(super) fn forward(&self, x: Tensor, record: bool) -> (Tensor, Cache) {
        let in_shape = x.shape();
        assert_eq!(x.len(), self.in_features, "linear input size was validated");
        let mut y = self.bias.value.clone();
        gemm(
            View::new(&self.weight.value, self.out_features, self.in_features),
            View::new(x.data(), self.in_features, 1),
            1.0,
            &mut y,
        );
        let cache = if record { Cache::Linear { input: x.into_vec(), in_shape } } else { Cache::None };
        (Tensor::vector(y), cache)
    }

    pub(super) fn backward(&mut self, cache: Cache, grad: Tensor) -> Tensor {
        let Cache::Linear { input, in_shape } = cache else {
            panic!("linear backward without a recorded forward pass");
        };
        let dy = grad.data();
        for (g, d) in self.bias.grad_mut().iter_mut().zip(dy) {
            *g += d;
        }
        gemm(
            View::new(dy, self.out_features, 1),
            View::new(&input, 1, self.in_features),
            1.0,
            self.weight.grad_mut(),
        );
        let mut dx = vec![0.0f32; self.in_features];
        gemm(
            View::transposed(&self.weight.value, self.out_features, self.in_features),
            View::new(dy, self.out_features, 1),
            0.0,
            &mut dx,
        );
        let [c, h, w] = in_shape;
        Tensor::from_vec(c, h, w, dx)
    }
}

/// Max pooling; `ceil_mode` keeps a partial window at the bottom/right edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub ceil_mode: bool,
}

impl MaxPool {
    fn extent(&self, n: usize) -> Option<usize> {
        let span = (n + 2 * self.padding).checked_sub(self.kernel)?;
        let mut out = if self.ceil_mode { span.div_ceil(self.stride) + 1 } else { span / self.stride + 1 };
        // The last window must start inside the input or the leading padding.
        if self.ceil_mode && (out - 1) * self.stride >= n + self.padding {
            out -= 1;
        }
        Some(out)
    }

    pub fn output_shape(&self, [c, h, w]: [usize; 3]) -> Option<[usize; 3]> {
        Some([c, self.extent(h)?, self.extent(w)?])
    }

    pub(super) fn forward(&self, x: &Tensor, record: bool) -> (Tensor, Cache) {
        let in_shape = x.shape();
        let [c, ho, wo] = self.output_shape(in_shape).expect("pool input shape was validated");
        let [_, h, w] = in_shape;
        let mut y = vec![0.0f32; c * ho * wo];
        let mut argmax = if record { vec![0usize; y.len()] } else { Vec::new() };
        let src = x.data();
        for ch in 0..c {
            for oy in 0..ho {
                let y0 = (oy * self.stride) as isize - self.padding as isize;
                let ys = y0.max(0) as usize..((y0 + self.kernel as isize).min(h as isize)) as usize;
                for ox in 0..wo {
                    let x0 = (ox * self.stride) as isize - self.padding as isize;
                    let xs = x0.max(0) as usize..((x0 + self.kernel as isize).min(w as isize)) as usize;
                    let mut best = f32::NEG_INFINITY;
                    let mut at = 0;
                    for iy in ys.clone() {
                        for ix in xs.clone() {
                            let i = (ch * h + iy) * w + ix;
                            if src[i] > best {
                                best = src[i];
                                at = i;
                            }
                        }
                    }
                    let o = (ch * ho + oy) * wo + ox;
                    y[o] = best;
                    if record {
                        argmax[o] = at;
                    }
                }
            }
        }
        let cache = if record { Cache::MaxPool { argmax, in_shape } } else { Cache::None };
        (Tensor::from_vec(c, ho, wo, y), cache)
    }

    pub(super) fn backward(&self, cache: Cache, grad: Tensor) -> Tensor {
        let Cache::MaxPool { argmax, in_shape: [c, h, w] } = cache else {
            panic!("maxpool backward without a recorded forward pass");
        };
        let mut dx = vec![0.0f32; c * h * w];
        for (&i, &g) in argmax.iter().zip(grad.data()) {
            dx[i] += g;
        }
        Tensor::from_vec(c, h, w, dx)
    }
}

/// Batch normalization with frozen running statistics and a learnable affine.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub eps: f32,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: Param::filled(vec![channels], 1.0, true),
            beta: Param::filled(vec![channels], 0.0, true),
            running_mean: Param::filled(vec![channels], 0.0, false),
            running_var: Param::filled(vec![channels], 1.0, false),
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn inv_std(&self, c: usize) -> f32 {
        1.0 / libm::sqrtf(self.running_var.value[c] + self.eps)
    }

    pub(super) fn forward(&self, mut x: Tensor, record: bool) -> (Tensor, Cache) {
        let plane = x.plane();
        let mut normalized = if record { Vec::with_capacity(x.len()) } else { Vec::new() };
        for c in 0..x.channels() {
            let (mean, inv) = (self.running_mean.value[c], self.inv_std(c));
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for v in &mut x.data_mut()[c * plane..(c + 1) * plane] {
                let n = (*v - mean) * inv;
                if record {
                    normalized.push(n);
                }
                *v = g * n + b;
            }
        }
        let cache = if record { Cache::BatchNorm { normalized } } else { Cache::None };
        (x, cache)
    }

    pub(super) fn backward(&mut self, cache: Cache, mut grad: Tensor) -> Tensor {
        let Cache::BatchNorm { normalized } = cache else {
            panic!("batchnorm backward without a recorded forward pass");
        };
        let plane = grad.plane();
        for c in 0..grad.channels() {
            let range = c * plane..(c + 1) * plane;
            let g = &mut grad.data_mut()[range.clone()];
            let dgamma: f32 = g.iter().zip(&normalized[range]).map(|(a, b)| a * b).sum();
            let dbeta: f32 = g.iter().sum();
            let scale = self.gamma.value[c] * self.inv_std(c);
            g.iter_mut().for_each(|v| *v *= scale);
            self.gamma.grad_mut()[c] += dgamma;
            self.beta.grad_mut()[c] += dbeta;
        }
        grad
    }
}

pub(super) fn relu_forward(mut x: Tensor, record: bool) -> (Tensor, Cache) {
    let mut active = if record { Vec::with_capacity(x.len()) } else { Vec::new() };
    for v in x.data_mut() {
        let on = *v > 0.0;
        if !on {
            *v = 0.0;
        }
        if record {
            active.push(on);
        }
    }
    let cache = if record { Cache::Relu { active } } else { Cache::None };
    (x, cache)
}

pub(super) fn gap_forward(x: &Tensor, record: bool) -> (Tensor, Cache) {
    let plane = x.plane() as f32;
    let y: Vec<f32> = (0..x.channels()).map(|c| x.channel(c).iter().sum::<f32>() / plane).collect();
    let cache = if record { Cache::GlobalAvgPool { in_shape: x.shape() } } else { Cache::None };
    (Tensor::vector(y), cache)
}

pub(super) fn gap_backward([c, h, w]: [usize; 3], grad: &Tensor) -> Tensor {
    let plane = h * w;
    let mut dx = Vec::with_capacity(c * plane);
    for &g in grad.data() {
        let v = g / plane as f32;
        dx.extend(core::iter::repeat_n(v, plane));
    }
    Tensor::from_vec(c, h, w, dx)
}

pub(super) fn dropout_forward(mut x: Tensor, p: f32, pass: &mut Pass<'_>) -> (Tensor, Cache) {
    let Some(rng) = pass.dropout.as_deref_mut() else {
        return (x, Cache::None);
    };
    let keep = 1.0 - p;
    let scale = if keep > 0.0 { 1.0 / keep } else { 0.0 };
    let mut mask = Vec::with_capacity(x.len());
    for v in x.data_mut() {
        // 24 random bits give a uniform draw in [0, 1).
        let u = (rng.next_u32() >> 8) as f32 / (1u32 << 24) as f32;
        let m = if u < keep { scale } else { 0.0 };
        *v *= m;
        mask.push(m);
    }
    let cache = if pass.record { Cache::Dropout { mask } } else { Cache::None };
    (x, cache)
}
