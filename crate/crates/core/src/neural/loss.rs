use super::tensor::Tensor;
use crate::error::{FwicError, Result};

#[derive(Debug, Clone)]
pub struct MixedLoss {
    pub loss: f64,
    pub mae: f64,
    pub rate_term: f64,
    pub d_pred: Tensor,
    /// dLoss / dR_hat
    pub d_rate: f64,
}

/// `MAE(pred, target) + mu (R - R_hat)^2`. The MAE subgradient at a zero residual is 0.
pub fn mixed_loss(pred: &Tensor, target: &Tensor, rate_hat: f64, target_rate: f64, mu: f64) -> Result<MixedLoss> {
    if !(mu > 0.0) {
        return Err(FwicError::param(format!("rate weight mu must be positive, got {mu}")));
    }
    pred.expect_shape("prediction vs target", target.shape())?;
    let n = pred.len() as f64;
    let mut mae = 0.0;
    let mut d_pred = Tensor::zeros(pred.shape());
    for ((d, &p), &t) in d_pred.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let r = p as f64 - t as f64;
        mae += r.abs();
        *d = if r > 0.0 {
            (1.0 / n) as f32
        } else if r < 0.0 {
            (-1.0 / n) as f32
        } else {
            0.0
        };
    }
    mae /= n;
    let gap = target_rate - rate_hat;
    let rate_term = mu * gap * gap;
    Ok(MixedLoss { loss: mae + rate_term, mae, rate_term, d_pred, d_rate: -2.0 * mu * gap })
}

/// Mean squared error and its gradient.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    pred.expect_shape("prediction vs target", target.shape())?;
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut sum = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let r = p as f64 - t as f64;
        sum += r * r;
        *g = (2.0 * r / n) as f32;
    }
    Ok((sum / n, grad))
}
