use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{FwicError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Learnable values with their accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f32>) -> Self {
        let n = value.len();
        debug_assert_eq!(n, shape.iter().product::<usize>());
        Param { name: name.into(), shape, value, grad: vec![0.0; n] }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

pub trait Layer: Send {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor>;
    /// Gradient with respect to the last forward input; parameter gradients accumulate.
    fn backward(&mut self, grad: &Tensor) -> Result<Tensor>;
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
    fn kind(&self) -> &'static str;
}

fn no_cache(kind: &str) -> FwicError {
    FwicError::param(format!("{kind}: backward called before forward"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    /// Output size equals input size at stride 1 (extra row/column at the end for even kernels).
    pub fn same(kh: usize, kw: usize) -> Self {
        Padding { top: (kh - 1) / 2, bottom: kh / 2, left: (kw - 1) / 2, right: kw / 2 }
    }
}

fn he_normal(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f32> {
    let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    (0..n).map(|_| d.sample(rng) as f32).collect()
}

struct ConvCache {
    input_shape: [usize; 4],
    out_hw: (usize, usize),
    cols: Vec<Vec<f32>>,
}

/// 2D cross-correlation via im2col and a matrix product.
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: Padding,
    pub weight: Param,
    pub bias: Param,
    cache: Option<ConvCache>,
}

impl Conv2d {
    /// Stride 1, "same" padding, He-normal weights, zero bias.
    pub fn new(name: &str, in_channels: usize, out_channels: usize, kernel: (usize, usize), rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_channels * kernel.0 * kernel.1;
        let w = he_normal(rng, out_channels * fan_in, fan_in);
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride: (1, 1),
            padding: Padding::same(kernel.0, kernel.1),
            weight: Param::new(format!("{name}.weight"), vec![out_channels, in_channels, kernel.0, kernel.1], w),
            bias: Param::new(format!("{name}.bias"), vec![out_channels], vec![0.0; out_channels]),
            cache: None,
        }
    }

    pub fn with_stride(mut self, stride: (usize, usize)) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let ph = h + self.padding.top + self.padding.bottom;
        let pw = w + self.padding.left + self.padding.right;
        if ph < kh || pw < kw {
            return Err(FwicError::dims("conv2d input (padded h, w) vs kernel", &[kh, kw], &[ph, pw]));
        }
        Ok(((ph - kh) / self.stride.0 + 1, (pw - kw) / self.stride.1 + 1))
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, ho: usize, wo: usize) -> Vec<f32> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let p = ho * wo;
        let mut cols = vec![0.0f32; self.in_channels * kh * kw * p];
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for i in 0..kh {
                for j in 0..kw {
                    let row = &mut cols[((c * kh + i) * kw + j) * p..][..p];
                    for oh in 0..ho {
                        let ih = (oh * sh + i) as isize - self.padding.top as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let src = &plane[ih as usize * w..][..w];
                        let dst = &mut row[oh * wo..][..wo];
                        for (ow, d) in dst.iter_mut().enumerate() {
                            let iw = (ow * sw + j) as isize - self.padding.left as isize;
                            if iw >= 0 && iw < w as isize {
                                *d = src[iw as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize, ho: usize, wo: usize, out: &mut [f32]) {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let p = ho * wo;
        for c in 0..self.in_channels {
            let plane = &mut out[c * h * w..(c + 1) * h * w];
            for i in 0..kh {
                for j in 0..kw {
                    let row = &cols[((c * kh + i) * kw + j) * p..][..p];
                    for oh in 0..ho {
                        let ih = (oh * sh + i) as isize - self.padding.top as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[ih as usize * w..][..w];
                        for (ow, &g) in row[oh * wo..][..wo].iter().enumerate() {
                            let iw = (ow * sw + j) as isize - self.padding.left as isize;
                            if iw >= 0 && iw < w as isize {
                                dst[iw as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let [n, c, h, w] = x.shape();
        if c != self.in_channels {
            return Err(FwicError::dims("conv2d input channels", &[self.in_channels], &[c]));
        }
        let (ho, wo) = self.output_hw(h, w)?;
        let ckk = c * self.kernel.0 * self.kernel.1;
        let p = ho * wo;
        let wmat = ArrayView2::from_shape((self.out_channels, ckk), &self.weight.value).expect("weight shape");
        let mut out = Tensor::zeros([n, self.out_channels, ho, wo]);
        let mut cols_all = Vec::with_capacity(n);
        for s in 0..n {
            let cols = self.im2col(x.sample(s), h, w, ho, wo);
            {
                let cv = ArrayView2::from_shape((ckk, p), &cols).expect("cols shape");
                let dst = out.sample_mut(s);
                for (o, &b) in self.bias.value.iter().enumerate() {
                    dst[o * p..(o + 1) * p].iter_mut().for_each(|v| *v = b);
                }
                let mut ov = ArrayViewMut2::from_shape((self.out_channels, p), dst).expect("out shape");
                general_mat_mul(1.0, &wmat, &cv, 1.0, &mut ov);
            }
            cols_all.push(cols);
        }
        self.cache = Some(ConvCache { input_shape: x.shape(), out_hw: (ho, wo), cols: cols_all });
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| no_cache("conv2d"))?;
        let [n, c, h, w] = cache.input_shape;
        let (ho, wo) = cache.out_hw;
        grad.expect_shape("conv2d output gradient", [n, self.out_channels, ho, wo])?;
        let ckk = c * self.kernel.0 * self.kernel.1;
        let p = ho * wo;
        let mut dx = Tensor::zeros(cache.input_shape);
        let mut dcols = vec![0.0f32; ckk * p];
        for s in 0..n {
            let g = ArrayView2::from_shape((self.out_channels, p), grad.sample(s)).expect("grad shape");
            let cv = ArrayView2::from_shape((ckk, p), &cache.cols[s]).expect("cols shape");
            {
                let mut dw = ArrayViewMut2::from_shape((self.out_channels, ckk), &mut self.weight.grad).expect("weight shape");
                general_mat_mul(1.0, &g, &cv.t(), 1.0, &mut dw);
            }
            for (o, db) in self.bias.grad.iter_mut().enumerate() {
                *db += grad.sample(s)[o * p..(o + 1) * p].iter().sum::<f32>();
            }
            let wmat = ArrayView2::from_shape((self.out_channels, ckk), &self.weight.value).expect("weight shape");
            {
                let mut dc = ArrayViewMut2::from_shape((ckk, p), &mut dcols).expect("cols shape");
                general_mat_mul(1.0, &wmat.t(), &g, 0.0, &mut dc);
            }
            self.col2im(&dcols, h, w, ho, wo, dx.sample_mut(s));
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn kind(&self) -> &'static str {
        "conv2d"
    }
}

/// Transposed convolution with kernel equal to stride (non-overlapping
/// upsampling by `k` in both directions).
pub struct ConvTranspose2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub k: usize,
    /// shape `[in, out, k, k]`
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl ConvTranspose2d {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = he_normal(rng, in_channels * out_channels * k * k, in_channels);
        ConvTranspose2d {
            in_channels,
            out_channels,
            k,
            weight: Param::new(format!("{name}.weight"), vec![in_channels, out_channels, k, k], w),
            bias: Param::new(format!("{name}.bias"), vec![out_channels], vec![0.0; out_channels]),
            cache: None,
        }
    }
}

impl Layer for ConvTranspose2d {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let [n, c, h, w] = x.shape();
        if c != self.in_channels {
            return Err(FwicError::dims("conv-transpose input channels", &[self.in_channels], &[c]));
        }
        let k = self.k;
        let okk = self.out_channels * k * k;
        let hw = h * w;
        let wm = ArrayView2::from_shape((c, okk), &self.weight.value).expect("weight shape");
        let mut out = Tensor::zeros([n, self.out_channels, h * k, w * k]);
        let mut yc = vec![0.0f32; okk * hw];
        for s in 0..n {
            let xv = ArrayView2::from_shape((c, hw), x.sample(s)).expect("input shape");
            {
                let mut yv = ArrayViewMut2::from_shape((okk, hw), &mut yc).expect("cols shape");
                general_mat_mul(1.0, &wm.t(), &xv, 0.0, &mut yv);
            }
            let dst = out.sample_mut(s);
            let (oh, ow) = (h * k, w * k);
            for o in 0..self.out_channels {
                let b = self.bias.value[o];
                for i in 0..k {
                    for j in 0..k {
                        let row = &yc[((o * k + i) * k + j) * hw..][..hw];
                        for y in 0..h {
                            for xx in 0..w {
                                dst[o * oh * ow + (y * k + i) * ow + xx * k + j] = row[y * w + xx] + b;
                            }
                        }
                    }
                }
            }
        }
        self.cache = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.cache.as_ref().ok_or_else(|| no_cache("conv-transpose"))?;
        let [n, c, h, w] = x.shape();
        let k = self.k;
        let (oh, ow) = (h * k, w * k);
        grad.expect_shape("conv-transpose output gradient", [n, self.out_channels, oh, ow])?;
        let okk = self.out_channels * k * k;
        let hw = h * w;
        let mut dx = Tensor::zeros(x.shape());
        let mut gc = vec![0.0f32; okk * hw];
        for s in 0..n {
            let g = grad.sample(s);
            for o in 0..self.out_channels {
                self.bias.grad[o] += g[o * oh * ow..(o + 1) * oh * ow].iter().sum::<f32>();
                for i in 0..k {
                    for j in 0..k {
                        let row = &mut gc[((o * k + i) * k + j) * hw..][..hw];
                        for y in 0..h {
                            for xx in 0..w {
                                row[y * w + xx] = g[o * oh * ow + (y * k + i) * ow + xx * k + j];
                            }
                        }
                    }
                }
            }
            let gv = ArrayView2::from_shape((okk, hw), &gc).expect("cols shape");
            let xv = ArrayView2::from_shape((c, hw), x.sample(s)).expect("input shape");
            {
                let mut dw = ArrayViewMut2::from_shape((c, okk), &mut self.weight.grad).expect("weight shape");
                general_mat_mul(1.0, &xv, &gv.t(), 1.0, &mut dw);
            }
            let wm = ArrayView2::from_shape((c, okk), &self.weight.value).expect("weight shape");
            let mut dxv = ArrayViewMut2::from_shape((c, hw), dx.sample_mut(s)).expect("input shape");
            general_mat_mul(1.0, &wm, &gv, 0.0, &mut dxv);
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn kind(&self) -> &'static str {
        "conv-transpose2d"
    }
}

/// Non-overlapping `k x k` max pooling; trailing rows/columns that do not
/// fill a window are dropped.
pub struct MaxPool2d {
    pub k: usize,
    cache: Option<([usize; 4], Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(k: usize) -> Self {
        MaxPool2d { k, cache: None }
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let [n, c, h, w] = x.shape();
        let k = self.k;
        let (ho, wo) = (h / k, w / k);
        if ho == 0 || wo == 0 {
            return Err(FwicError::dims("max-pool input (h, w)", &[k, k], &[h, w]));
        }
        let mut out = Tensor::zeros([n, c, ho, wo]);
        let mut arg = Vec::with_capacity(n * c * ho * wo);
        for s in 0..n {
            for ch in 0..c {
                let plane = x.plane(s, ch);
                let dst = out.plane_mut(s, ch);
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = (oy * k) * w + ox * k;
                        for i in 0..k {
                            for j in 0..k {
                                let idx = (oy * k + i) * w + ox * k + j;
                                if plane[idx] > plane[best] {
                                    best = idx;
                                }
                            }
                        }
                        dst[oy * wo + ox] = plane[best];
                        arg.push(best);
                    }
                }
            }
        }
        self.cache = Some((x.shape(), arg));
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (shape, arg) = self.cache.as_ref().ok_or_else(|| no_cache("max-pool"))?;
        let [n, c, h, w] = *shape;
        grad.expect_shape("max-pool output gradient", [n, c, h / self.k, w / self.k])?;
        let mut dx = Tensor::zeros(*shape);
        let per = grad.plane_len();
        for s in 0..n {
            for ch in 0..c {
                let g = grad.plane(s, ch);
                let a = &arg[(s * c + ch) * per..][..per];
                let dst = dx.plane_mut(s, ch);
                for (gi, &ai) in g.iter().zip(a) {
                    dst[ai] += gi;
                }
            }
        }
        Ok(dx)
    }

    fn kind(&self) -> &'static str {
        "max-pool2d"
    }
}

/// Nearest-neighbour upsampling by integer factors.
pub struct Upsample2d {
    pub factor: (usize, usize),
    input_shape: Option<[usize; 4]>,
}

impl Upsample2d {
    pub fn new(fh: usize, fw: usize) -> Self {
        Upsample2d { factor: (fh, fw), input_shape: None }
    }
}

impl Layer for Upsample2d {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let [n, c, h, w] = x.shape();
        let (fh, fw) = self.factor;
        let (oh, ow) = (h * fh, w * fw);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        for s in 0..n {
            for ch in 0..c {
                let src = x.plane(s, ch);
                let dst = out.plane_mut(s, ch);
                for y in 0..oh {
                    for xx in 0..ow {
                        dst[y * ow + xx] = src[(y / fh) * w + xx / fw];
                    }
                }
            }
        }
        self.input_shape = Some(x.shape());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self.input_shape.ok_or_else(|| no_cache("upsample"))?;
        let [n, c, h, w] = shape;
        let (fh, fw) = self.factor;
        let (oh, ow) = (h * fh, w * fw);
        grad.expect_shape("upsample output gradient", [n, c, oh, ow])?;
        let mut dx = Tensor::zeros(shape);
        for s in 0..n {
            for ch in 0..c {
                let g = grad.plane(s, ch);
                let dst = dx.plane_mut(s, ch);
                for y in 0..oh {
                    for xx in 0..ow {
                        dst[(y / fh) * w + xx / fw] += g[y * ow + xx];
                    }
                }
            }
        }
        Ok(dx)
    }

    fn kind(&self) -> &'static str {
        "upsample2d"
    }
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-sample, per-channel normalization over the spatial plane with an
/// optional learnable scale and shift.
pub struct InstanceNorm2d {
    pub channels: usize,
    pub affine: bool,
    pub gamma: Param,
    pub beta: Param,
    cache: Option<(Tensor, Vec<f64>)>,
}

impl InstanceNorm2d {
    pub fn new(name: &str, channels: usize, affine: bool) -> Self {
        InstanceNorm2d {
            channels,
            affine,
            gamma: Param::new(format!("{name}.gamma"), vec![channels], vec![1.0; channels]),
            beta: Param::new(format!("{name}.beta"), vec![channels], vec![0.0; channels]),
            cache: None,
        }
    }
}

impl Layer for InstanceNorm2d {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let [n, c, _, _] = x.shape();
        if c != self.channels {
            return Err(FwicError::dims("instance-norm channels", &[self.channels], &[c]));
        }
        let p = x.plane_len() as f64;
        let mut xhat = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        let mut inv_std = Vec::with_capacity(n * c);
        for s in 0..n {
            for ch in 0..c {
                let src = x.plane(s, ch);
                let mean = src.iter().map(|&v| v as f64).sum::<f64>() / p;
                let var = src.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / p;
                let is = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
                inv_std.push(is);
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                let xh = xhat.plane_mut(s, ch);
                for (d, &v) in xh.iter_mut().zip(src) {
                    *d = ((v as f64 - mean) * is) as f32;
                }
                for (o, &v) in out.plane_mut(s, ch).iter_mut().zip(xhat.plane(s, ch)) {
                    *o = if self.affine { g * v + b } else { v };
                }
            }
        }
        self.cache = Some((xhat, inv_std));
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (xhat, inv_std) = self.cache.as_ref().ok_or_else(|| no_cache("instance-norm"))?;
        grad.expect_shape("instance-norm output gradient", xhat.shape())?;
        let [n, c, _, _] = xhat.shape();
        let p = xhat.plane_len() as f64;
        let mut dx = Tensor::zeros(xhat.shape());
        for s in 0..n {
            for ch in 0..c {
                let g = grad.plane(s, ch);
                let xh = xhat.plane(s, ch);
                let gamma = if self.affine { self.gamma.value[ch] as f64 } else { 1.0 };
                if self.affine {
                    self.gamma.grad[ch] += g.iter().zip(xh).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() as f32;
                    self.beta.grad[ch] += g.iter().map(|&a| a as f64).sum::<f64>() as f32;
                }
                let mean_g = g.iter().map(|&a| a as f64).sum::<f64>() / p;
                let mean_gx = g.iter().zip(xh).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / p;
                let is = inv_std[s * c + ch];
                for ((d, &gi), &xi) in dx.plane_mut(s, ch).iter_mut().zip(g).zip(xh) {
                    *d = (gamma * is * (gi as f64 - mean_g - xi as f64 * mean_gx)) as f32;
                }
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        if self.affine {
            vec![&self.gamma, &self.beta]
        } else {
            Vec::new()
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        if self.affine {
            vec![&mut self.gamma, &mut self.beta]
        } else {
            Vec::new()
        }
    }

    fn kind(&self) -> &'static str {
        "instance-norm2d"
    }
}

#[derive(Default)]
pub struct Relu {
    input: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }
}

impl Layer for Relu {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        self.input = Some(x.clone());
        Ok(x.map(|v| v.max(0.0)))
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or_else(|| no_cache("relu"))?;
        grad.zip_map(x, |g, v| if v > 0.0 { g } else { 0.0 })
    }

    fn kind(&self) -> &'static str {
        "relu"
    }
}

#[derive(Default)]
pub struct Tanh {
    output: Option<Tensor>,
}

impl Tanh {
    pub fn new() -> Self {
        Tanh::default()
    }
}

impl Layer for Tanh {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let y = x.map(f32::tanh);
        self.output = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let y = self.output.as_ref().ok_or_else(|| no_cache("tanh"))?;
        grad.zip_map(y, |g, v| g * (1.0 - v * v))
    }

    fn kind(&self) -> &'static str {
        "tanh"
    }
}

/// Inverted dropout: kept activations are scaled by `1/(1-p)` during training.
pub struct Dropout {
    pub p: f32,
    rng: ChaCha8Rng,
    mask: Option<Tensor>,
}

impl Dropout {
    pub fn new(p: f32, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(FwicError::param(format!("dropout probability {p} outside [0, 1)")));
        }
        Ok(Dropout { p, rng: ChaCha8Rng::seed_from_u64(seed), mask: None })
    }
}

impl Layer for Dropout {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode == Mode::Eval || self.p == 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let scale = 1.0 / (1.0 - self.p);
        let p = self.p;
        let mut mask = Tensor::zeros(x.shape());
        for m in mask.data_mut() {
            *m = if self.rng.random::<f32>() >= p { scale } else { 0.0 };
        }
        let y = x.zip_map(&mask, |a, b| a * b)?;
        self.mask = Some(mask);
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match &self.mask {
            Some(m) => grad.zip_map(m, |g, k| g * k),
            None => Ok(grad.clone()),
        }
    }

    fn kind(&self) -> &'static str {
        "dropout"
    }
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential {
    pub layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new(layers: Vec<Box<dyn Layer>>) -> Self {
        Sequential { layers }
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut y = x.clone();
        for l in &mut self.layers {
            y = l.forward(&y, mode)?;
        }
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn kind(&self) -> &'static str {
        "sequential"
    }
}
