use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Layer, Mode, Param};
use super::tensor::Tensor;
use crate::error::{FwicError, Result};

/// Initial weight magnitude for selected (+) and unselected (-) shots.
pub const INIT_WEIGHT: f32 = 0.25;

/// `clip((w + 1) / 2, 0, 1)`.
pub fn hard_sigmoid(w: f32) -> f32 {
    ((w + 1.0) / 2.0).clamp(0.0, 1.0)
}

/// Derivative of [`hard_sigmoid`]: 0.5 on (-1, 1), else 0.
pub fn hard_sigmoid_slope(w: f32) -> f32 {
    if w.abs() < 1.0 {
        0.5
    } else {
        0.0
    }
}

/// Number of shots a rate selects out of `n_shots`.
pub fn target_count(rate: f64, n_shots: usize) -> Result<usize> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(FwicError::param(format!("sensing rate {rate} outside (0, 1]")));
    }
    let k = (rate * n_shots as f64).round() as usize;
    if k < 1 {
        return Err(FwicError::param(format!("rate {rate} selects no shot out of {n_shots}")));
    }
    Ok(k)
}

/// Binarized per-shot gate. Forward multiplies gather `i` (channel `i`)
/// by `w_i > 0`; backward uses the hard-sigmoid slope as surrogate.
pub struct SensingLayer {
    pub weights: Param,
    pub target_rate: f64,
    pub mu: f64,
    input: Option<Tensor>,
}

impl SensingLayer {
    /// `round(rate * n_shots)` shots, drawn uniformly by `seed`, start at
    /// `+INIT_WEIGHT`; the rest at `-INIT_WEIGHT`.
    pub fn new(n_shots: usize, target_rate: f64, mu: f64, seed: u64) -> Result<Self> {
        let k = target_count(target_rate, n_shots)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = vec![-INIT_WEIGHT; n_shots];
        for i in sample(&mut rng, n_shots, k) {
            w[i] = INIT_WEIGHT;
        }
        Self::from_weights(w, target_rate, mu)
    }

    pub fn from_weights(w: Vec<f32>, target_rate: f64, mu: f64) -> Result<Self> {
        target_count(target_rate, w.len())?;
        if !(mu > 0.0) {
            return Err(FwicError::param(format!("rate weight mu must be positive, got {mu}")));
        }
        let n = w.len();
        Ok(SensingLayer { weights: Param::new("sensing.w", vec![n], w), target_rate, mu, input: None })
    }

    pub fn n_shots(&self) -> usize {
        self.weights.value.len()
    }

    pub fn target_count(&self) -> usize {
        target_count(self.target_rate, self.n_shots()).expect("validated at construction")
    }

    pub fn mask(&self) -> Vec<bool> {
        self.weights.value.iter().map(|&w| w > 0.0).collect()
    }

    pub fn selected(&self) -> Vec<usize> {
        self.mask().iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }

    /// Realized rate `R_hat = (sum mask) / N_s`.
    pub fn rate(&self) -> f64 {
        self.selected().len() as f64 / self.n_shots() as f64
    }

    /// Sorted pattern of exactly `K` shots: the mask when it has `K` entries,
    /// otherwise the `K` largest weights (ties to the lower index).
    pub fn harvest(&self) -> Vec<usize> {
        let k = self.target_count();
        let sel = self.selected();
        if sel.len() == k {
            return sel;
        }
        let mut order: Vec<usize> = (0..self.n_shots()).collect();
        order.sort_by(|&a, &b| self.weights.value[b].total_cmp(&self.weights.value[a]).then(a.cmp(&b)));
        let mut top = order[..k].to_vec();
        top.sort_unstable();
        top
    }

    /// Add `d_rate * dR_hat/dw` (surrogate) to the weight gradients.
    pub fn backward_rate(&mut self, d_rate: f64) {
        let n = self.n_shots() as f64;
        for (g, &w) in self.weights.grad.iter_mut().zip(&self.weights.value) {
            *g += (d_rate * hard_sigmoid_slope(w) as f64 / n) as f32;
        }
    }
}

impl Layer for SensingLayer {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let [n, c, _, _] = x.shape();
        if c != self.n_shots() {
            return Err(FwicError::dims("sensing input shots", &[self.n_shots()], &[c]));
        }
        let mask = self.mask();
        let mut y = x.clone();
        for s in 0..n {
            for (ch, &keep) in mask.iter().enumerate() {
                if !keep {
                    y.plane_mut(s, ch).iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or_else(|| FwicError::param("sensing: backward called before forward"))?;
        grad.expect_shape("sensing output gradient", x.shape())?;
        let n = x.shape()[0];
        let mask = self.mask();
        let mut dx = grad.clone();
        for (ch, &keep) in mask.iter().enumerate() {
            let mut inner = 0.0f64;
            for s in 0..n {
                inner += grad.plane(s, ch).iter().zip(x.plane(s, ch)).map(|(&g, &v)| g as f64 * v as f64).sum::<f64>();
                if !keep {
                    dx.plane_mut(s, ch).iter_mut().for_each(|v| *v = 0.0);
                }
            }
            self.weights.grad[ch] += (inner * hard_sigmoid_slope(self.weights.value[ch]) as f64) as f32;
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weights]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weights]
    }

    fn kind(&self) -> &'static str {
        "sensing"
    }
}
