use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{FwicError, Result};

/// Dense `(batch, channels, height, width)` tensor of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(FwicError::dims("tensor data", &[n], &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn filled(shape: [usize; 4], value: f32) -> Self {
        Tensor { shape, data: vec![value; shape.iter().product()] }
    }

    pub fn randn(shape: [usize; 4], rng: &mut impl Rng) -> Self {
        let data = (0..shape.iter().product()).map(|_| StandardNormal.sample(rng)).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    /// The `h x w` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.plane_len();
        let start = (n * self.shape[1] + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let p = self.plane_len();
        let start = (n * self.shape[1] + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of sample `n`.
    pub fn sample(&self, n: usize) -> &[f32] {
        let s = self.shape[1] * self.plane_len();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f32] {
        let s = self.shape[1] * self.plane_len();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        self.expect_shape("zip operand", other.shape)?;
        Ok(Tensor { shape: self.shape, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_shape("accumulated tensor", other.shape)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn expect_shape(&self, context: &'static str, expected: [usize; 4]) -> Result<()> {
        if self.shape != expected {
            return Err(FwicError::dims(context, &expected, &self.shape));
        }
        Ok(())
    }

    /// Sum of elementwise products, accumulated in f64.
    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(&a, &b)| a as f64 * b as f64).sum()
    }
}

/// Stack two tensors along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [na, ca, ha, wa] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(FwicError::dims("channel concat", &a.shape(), &b.shape()));
    }
    let mut out = Tensor::zeros([na, ca + cb, ha, wa]);
    for n in 0..na {
        let s = out.sample_mut(n);
        let split = ca * ha * wa;
        s[..split].copy_from_slice(a.sample(n));
        s[split..].copy_from_slice(b.sample(n));
    }
    Ok(out)
}

/// Inverse of [`concat_channels`] for gradients: first `ca` channels, then the rest.
pub fn split_channels(x: &Tensor, ca: usize) -> Result<(Tensor, Tensor)> {
    let [n, c, h, w] = x.shape();
    if ca > c {
        return Err(FwicError::dims("channel split", &[ca], &[c]));
    }
    let mut a = Tensor::zeros([n, ca, h, w]);
    let mut b = Tensor::zeros([n, c - ca, h, w]);
    let split = ca * h * w;
    for i in 0..n {
        let s = x.sample(i);
        a.sample_mut(i).copy_from_slice(&s[..split]);
        b.sample_mut(i).copy_from_slice(&s[split..]);
    }
    Ok((a, b))
}
