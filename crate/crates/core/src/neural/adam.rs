use super::layers::Param;
use crate::error::{FwicError, Result};

/// ADAM with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update of every parameter from its accumulated gradient.
    pub fn update(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.value.len()) {
            return Err(FwicError::param("parameter set changed between optimizer steps"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for ((w, &g), (mi, vi)) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut().zip(v.iter_mut())) {
                let g = g as f64;
                let m_new = self.beta1 * *mi as f64 + (1.0 - self.beta1) * g;
                let v_new = self.beta2 * *vi as f64 + (1.0 - self.beta2) * g * g;
                *mi = m_new as f32;
                *vi = v_new as f32;
                let mh = m_new / c1;
                let vh = v_new / c2;
                *w = (*w as f64 - self.lr * mh / (vh.sqrt() + self.eps)) as f32;
            }
        }
        Ok(())
    }

    pub fn moments(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }
}
