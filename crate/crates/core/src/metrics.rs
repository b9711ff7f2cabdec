//! Image-quality metrics on `[0, 1]`-normalized velocity models.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{FwicError, Result};
use crate::geomodel::VelocityModel;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub ssim: f64,
    /// `f64::INFINITY` for identical inputs
    pub psnr: f64,
}

impl Metrics {
    pub fn between(estimate: &VelocityModel, truth: &VelocityModel) -> Result<Self> {
        let (a, b) = (estimate.normalized(), truth.normalized());
        Ok(Metrics { mae: mae(&a, &b)?, ssim: ssim(&a, &b)?, psnr: psnr(&a, &b)? })
    }
}

fn check(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(FwicError::dims("metric operands", b.shape(), a.shape()));
    }
    if a.is_empty() {
        return Err(FwicError::param("metric operands are empty"));
    }
    Ok(())
}

pub fn mae(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    check(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

pub fn rmse(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    check(a, b)?;
    Ok((a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt())
}

/// Peak 1.0. Identical inputs give `+inf`.
pub fn psnr(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    let e = rmse(a, b)?;
    Ok(if e == 0.0 { f64::INFINITY } else { -20.0 * e.log10() })
}

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size / 2) as f64;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Separable weighted filter over all fully-contained window positions.
fn filter_valid(x: &Array2<f64>, w: &[f64]) -> Array2<f64> {
    let k = w.len();
    let (nz, nx) = x.dim();
    let rows: Array2<f64> = Array2::from_shape_fn((nz, nx + 1 - k), |(i, j)| (0..k).map(|t| w[t] * x[[i, j + t]]).sum::<f64>());
    Array2::from_shape_fn((nz + 1 - k, nx + 1 - k), |(i, j)| (0..k).map(|t| w[t] * rows[[i + t, j]]).sum())
}

/// Mean SSIM, 11x11 Gaussian window (sigma 1.5), data range 1. Inputs
/// smaller than the window use the largest odd window that fits.
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    check(a, b)?;
    let fit = a.nrows().min(a.ncols());
    let size = if fit >= SSIM_WINDOW { SSIM_WINDOW } else { fit - (1 - fit % 2) };
    let w = gaussian_window(size);
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let mu_a = filter_valid(a, &w);
    let mu_b = filter_valid(b, &w);
    let aa = filter_valid(&(a * a), &w);
    let bb = filter_valid(&(b * b), &w);
    let ab = filter_valid(&(a * b), &w);
    let mut total = 0.0;
    for ((((&ma, &mb), &saa), &sbb), &sab) in mu_a.iter().zip(&mu_b).zip(&aa).zip(&bb).zip(&ab) {
        let va = saa - ma * ma;
        let vb = sbb - mb * mb;
        let cov = sab - ma * mb;
        total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs() {
        let a = Array2::from_shape_fn((20, 30), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn constant_offset() {
        let a = Array2::from_shape_fn((16, 16), |(i, j)| (i + j) as f64 / 40.0);
        let b = &a + 0.1;
        assert!((mae(&b, &a).unwrap() - 0.1).abs() < 1e-12);
        assert!((psnr(&b, &a).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        assert!(ssim(&Array2::zeros((12, 12)), &Array2::zeros((12, 13))).is_err());
    }

    #[test]
    fn window_weights_sum_to_one() {
        let w = gaussian_window(11);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((w[5] / w[6] - (1.0f64 / 4.5).exp()).abs() < 1e-12);
    }
}
