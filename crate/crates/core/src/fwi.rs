//! Full waveform inversion: normalized L2 misfit over a subset of shots,
//! its adjoint-state gradient, and steepest descent with backtracking.

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{FwicError, Result};
use crate::geomodel::{smooth_model, VelocityModel, V_MAX, V_MIN};
use crate::par::{self, Execution};
use crate::wavesim::{ForwardSetup, ShotGather, Simulator};

/// Lowest velocity an iterate may take, km/s.
pub const V_FLOOR: f64 = V_MIN - 0.25;
/// Highest velocity an iterate may take, km/s. Also fixes the solver time step.
pub const V_CEILING: f64 = V_MAX + 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// normalized loss reached the threshold
    Threshold,
    /// no new best loss within the patience window
    Patience,
    MaxIterations,
    /// line search could not find a decrease
    Stalled,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StopReason::Threshold => "threshold",
            StopReason::Patience => "patience",
            StopReason::MaxIterations => "max-iterations",
            StopReason::Stalled => "stalled",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwiConfig {
    pub selected: Vec<usize>,
    pub max_iterations: usize,
    pub patience: usize,
    pub loss_threshold: f64,
    /// Largest per-cell velocity change (km/s) of the first trial step.
    pub initial_step_kms: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub preconditioner: Preconditioner,
    /// Used by [`FwiConfig::starting_model`].
    pub smoothing_sigma: f64,
}

impl FwiConfig {
    pub fn new(selected: Vec<usize>) -> Self {
        FwiConfig {
            selected,
            max_iterations: 500,
            patience: 10,
            loss_threshold: 0.05,
            initial_step_kms: 0.1,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 8,
            preconditioner: Preconditioner::Illumination { stabilization: 1e-3 },
            smoothing_sigma: 8.0,
        }
    }

    pub fn validate(&self, n_shots: usize) -> Result<()> {
        validate_selection(&self.selected, n_shots)?;
        if self.max_iterations == 0 {
            return Err(FwicError::param("max_iterations must allow at least one iteration"));
        }
        if self.patience == 0 || !(self.loss_threshold > 0.0) {
            return Err(FwicError::param("patience and loss threshold must be positive"));
        }
        if !(self.initial_step_kms > 0.0)
            || !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0)
            || !(self.armijo_c > 0.0 && self.armijo_c < 1.0)
        {
            return Err(FwicError::param("invalid line-search parameters"));
        }
        Ok(())
    }

    /// Smoothed copy of `truth`, the conventional FWI starting point.
    pub fn starting_model(&self, truth: &VelocityModel) -> Result<VelocityModel> {
        smooth_model(truth, self.smoothing_sigma)
    }
}

fn validate_selection(selected: &[usize], n_shots: usize) -> Result<()> {
    if selected.is_empty() {
        return Err(FwicError::param("shot selection is empty"));
    }
    let mut sorted = selected.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != selected.len() {
        return Err(FwicError::param(format!("duplicate shot indices in {selected:?}")));
    }
    if let Some(&bad) = sorted.iter().find(|&&s| s >= n_shots) {
        return Err(FwicError::param(format!("shot index {bad} out of range (n_shots={n_shots})")));
    }
    Ok(())
}

/// Misfit over a fixed shot selection against observed gathers.
pub struct FwiProblem<'a> {
    setup: &'a ForwardSetup,
    observed: &'a [ShotGather],
    selected: Vec<usize>,
    norm: f64,
    exec: Execution,
}

impl<'a> FwiProblem<'a> {
    pub fn new(setup: &'a ForwardSetup, observed: &'a [ShotGather], selected: &[usize], exec: Execution) -> Result<Self> {
        validate_selection(selected, setup.geometry.n_shots())?;
        for &s in selected {
            let g = observed.get(s).ok_or_else(|| {
                FwicError::param(format!("no observed gather for shot {s} ({} available)", observed.len()))
            })?;
            let expected = [setup.geometry.n_receivers(), setup.geometry.n_time_samples];
            if g.data.dim() != (expected[0], expected[1]) {
                return Err(FwicError::dims("observed gather", &expected, g.data.shape()));
            }
        }
        let norm: f64 = selected.iter().map(|&s| observed[s].energy()).sum();
        if !(norm > 0.0) {
            return Err(FwicError::param("observed data of the selected shots has zero energy"));
        }
        Ok(FwiProblem { setup, observed, selected: selected.to_vec(), norm, exec })
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    fn residual(&self, shot: usize, synthetic: &Array2<f64>) -> Array2<f64> {
        let obs = &self.observed[shot].data;
        synthetic - &obs.mapv(f64::from)
    }

    /// `J = sum ||F_i(m) - d_i||^2 / sum ||d_i||^2` over the selection.
    pub fn objective(&self, m: &VelocityModel) -> Result<f64> {
        let sim = self.setup.simulator(m)?;
        let parts = par::try_map(self.exec, &self.selected, |&s| {
            let r = self.residual(s, &sim.traces(s)?);
            Ok::<_, FwicError>(r.iter().map(|x| x * x).sum::<f64>())
        })?;
        Ok(parts.iter().sum::<f64>() / self.norm)
    }

    /// Objective and its gradient with respect to velocity (per km/s).
    pub fn objective_and_gradient(&self, m: &VelocityModel) -> Result<(f64, Array2<f64>)> {
        let e = self.evaluate(m, false)?;
        Ok((e.loss, e.gradient))
    }

    /// Objective, gradient and, on request, the diagonal illumination
    /// `sum_shots sum_t (d F / d v)^2` proxy used for preconditioning.
    pub fn evaluate(&self, m: &VelocityModel, with_illumination: bool) -> Result<Evaluation> {
        let sim: Simulator = self.setup.simulator(m)?;
        let parts = par::try_map(self.exec, &self.selected, |&s| {
            let (traces, ckpt) = sim.forward_checkpointed(s)?;
            let r = self.residual(s, &traces);
            let misfit: f64 = r.iter().map(|x| x * x).sum();
            let weights = r.mapv(|x| 2.0 * x / self.norm);
            let mut illum = with_illumination.then(|| vec![0.0; ckpt.padded_len()]);
            let grad = sim.adjoint_v2(s, &weights, &ckpt, illum.as_deref_mut())?;
            Ok::<_, FwicError>((misfit, grad, illum))
        })?;
        // shot-order reduction keeps the result independent of scheduling
        let n = parts[0].1.len();
        let mut total = vec![0.0; n];
        let mut illum_total = vec![0.0; n];
        let mut misfit = 0.0;
        for (mis, g, h) in &parts {
            misfit += mis;
            total.iter_mut().zip(g).for_each(|(t, x)| *t += x);
            if let Some(h) = h {
                illum_total.iter_mut().zip(h).for_each(|(t, x)| *t += x);
            }
        }
        let illumination = with_illumination.then(|| {
            let dv = m.values.mapv(|v| (2.0e6 * v).powi(2));
            sim.restrict(&illum_total) * dv
        });
        Ok(Evaluation { loss: misfit / self.norm, gradient: sim.v2_to_velocity_gradient(m, &total), illumination })
    }
}

pub struct Evaluation {
    pub loss: f64,
    pub gradient: Array2<f64>,
    pub illumination: Option<Array2<f64>>,
}

/// Diagonal scaling applied to the gradient before the line search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Preconditioner {
    /// plain steepest descent
    None,
    /// divide by illumination plus `stabilization` times its maximum
    Illumination { stabilization: f64 },
}

impl Preconditioner {
    fn direction(&self, e: &Evaluation) -> Array2<f64> {
        match (self, &e.illumination) {
            (Preconditioner::Illumination { stabilization }, Some(h)) => {
                let floor = stabilization * h.iter().fold(0.0f64, |a, &x| a.max(x));
                let mut d = e.gradient.clone();
                d.zip_mut_with(h, |g, &h| *g /= h + floor);
                d
            }
            _ => e.gradient.clone(),
        }
    }
}

pub fn objective(m: &VelocityModel, setup: &ForwardSetup, observed: &[ShotGather], selected: &[usize]) -> Result<f64> {
    FwiProblem::new(setup, observed, selected, Execution::available())?.objective(m)
}

pub fn gradient(m: &VelocityModel, setup: &ForwardSetup, observed: &[ShotGather], selected: &[usize]) -> Result<Array2<f64>> {
    Ok(FwiProblem::new(setup, observed, selected, Execution::available())?
        .objective_and_gradient(m)?
        .1)
}

/// Applies the three stopping conditions to a loss trace (one entry per iteration).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    pub max_iterations: usize,
    pub patience: usize,
    pub loss_threshold: f64,
}

impl StoppingRule {
    pub fn from_config(c: &FwiConfig) -> Self {
        StoppingRule { max_iterations: c.max_iterations, patience: c.patience, loss_threshold: c.loss_threshold }
    }

    /// Decide after the latest entry of `losses`. Conditions are checked in
    /// the order threshold, patience, iteration limit; the first that holds wins.
    pub fn check(&self, losses: &[f64]) -> Option<StopReason> {
        let last = *losses.last()?;
        if last <= self.loss_threshold {
            return Some(StopReason::Threshold);
        }
        let best_at = losses
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) })
            .0;
        if losses.len() - 1 - best_at >= self.patience {
            return Some(StopReason::Patience);
        }
        if losses.len() >= self.max_iterations {
            return Some(StopReason::MaxIterations);
        }
        None
    }

    /// Run the rule over a precomputed trace; returns iterations consumed and the reason.
    pub fn replay(&self, trace: &[f64]) -> Option<(usize, StopReason)> {
        (1..=trace.len()).find_map(|n| self.check(&trace[..n]).map(|r| (n, r)))
    }
}

#[derive(Debug, Clone)]
pub struct InversionReport {
    pub model: VelocityModel,
    /// normalized loss at the start of each iteration
    pub losses: Vec<f64>,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub total_seconds: f64,
    pub iteration_seconds: Vec<f64>,
    /// forward simulations spent in line searches
    pub line_search_evaluations: usize,
}

/// Serializable summary of an [`InversionReport`] (the model is written separately).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub selected: Vec<usize>,
    pub losses: Vec<f64>,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub total_seconds: f64,
    pub iteration_seconds: Vec<f64>,
}

impl InversionReport {
    pub fn record(&self, selected: &[usize]) -> ReportRecord {
        ReportRecord {
            selected: selected.to_vec(),
            losses: self.losses.clone(),
            iterations: self.iterations,
            stop_reason: self.stop_reason,
            total_seconds: self.total_seconds,
            iteration_seconds: self.iteration_seconds.clone(),
        }
    }
}

fn clamp_model(m: &mut VelocityModel) {
    m.values.mapv_inplace(|v| v.clamp(V_FLOOR, V_CEILING));
}

/// Steepest descent with Armijo backtracking, starting from `m0`.
pub fn invert(
    m0: &VelocityModel,
    setup: &ForwardSetup,
    observed: &[ShotGather],
    config: &FwiConfig,
    exec: Execution,
) -> Result<InversionReport> {
    invert_observed(m0, setup, observed, config, exec, |_, _, _| {})
}

/// [`invert`] calling `observe(iteration, model, loss)` at the start of every iteration.
pub fn invert_observed(
    m0: &VelocityModel,
    setup: &ForwardSetup,
    observed: &[ShotGather],
    config: &FwiConfig,
    exec: Execution,
    mut observe: impl FnMut(usize, &VelocityModel, f64),
) -> Result<InversionReport> {
    config.validate(setup.geometry.n_shots())?;
    let problem = FwiProblem::new(setup, observed, &config.selected, exec)?;
    let rule = StoppingRule::from_config(config);
    let start = Instant::now();

    let mut m = m0.clone();
    clamp_model(&mut m);
    let mut losses = Vec::new();
    let mut iteration_seconds = Vec::new();
    let mut step = config.initial_step_kms;
    let mut evaluations = 0;

    let stop_reason = loop {
        let t0 = Instant::now();
        let eval = problem.evaluate(&m, config.preconditioner != Preconditioner::None)?;
        let loss = eval.loss;
        let dir = config.preconditioner.direction(&eval);
        let grad = eval.gradient;
        losses.push(loss);
        observe(losses.len(), &m, loss);
        if let Some(reason) = rule.check(&losses) {
            iteration_seconds.push(t0.elapsed().as_secs_f64());
            break reason;
        }
        let gmax = dir.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if gmax == 0.0 || !gmax.is_finite() {
            iteration_seconds.push(t0.elapsed().as_secs_f64());
            break StopReason::Stalled;
        }
        let mut accepted = None;
        let mut trial_step = step;
        for _ in 0..=config.max_backtracks {
            let mut trial = m.clone();
            let scale = trial_step / gmax;
            trial.values.zip_mut_with(&dir, |v, g| *v -= scale * g);
            clamp_model(&mut trial);
            let decrease: f64 = grad.iter().zip(trial.values.iter().zip(m.values.iter())).map(|(g, (a, b))| g * (a - b)).sum();
            let j = problem.objective(&trial)?;
            evaluations += 1;
            if j <= loss + config.armijo_c * decrease {
                accepted = Some((trial, trial_step));
                break;
            }
            trial_step *= config.backtrack_factor;
        }
        iteration_seconds.push(t0.elapsed().as_secs_f64());
        match accepted {
            Some((trial, s)) => {
                m = trial;
                // allow the step to grow again after an easy acceptance
                step = if s == step { s * 1.5 } else { s };
            }
            None => break StopReason::Stalled,
        }
    };

    Ok(InversionReport {
        model: m,
        iterations: losses.len(),
        losses,
        stop_reason,
        total_seconds: start.elapsed().as_secs_f64(),
        iteration_seconds,
        line_search_evaluations: evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopping_rule_conditions() {
        let rule = StoppingRule { max_iterations: 500, patience: 10, loss_threshold: 0.05 };
        assert_eq!(rule.replay(&[0.04]), Some((1, StopReason::Threshold)));
        let mut flat = vec![1.0, 0.5];
        flat.extend(std::iter::repeat_n(0.6, 10));
        assert_eq!(rule.replay(&flat), Some((12, StopReason::Patience)));
        let slow: Vec<f64> = (0..600).map(|i| 1.0 - i as f64 * 1e-4).collect();
        assert_eq!(rule.replay(&slow), Some((500, StopReason::MaxIterations)));
    }

    #[test]
    fn selection_validation() {
        assert!(validate_selection(&[], 4).is_err());
        assert!(validate_selection(&[1, 1], 4).is_err());
        assert!(validate_selection(&[4], 4).is_err());
        assert!(validate_selection(&[3, 0], 4).is_ok());
    }

    #[test]
    fn zero_iterations_rejected() {
        let mut c = FwiConfig::new(vec![0]);
        c.max_iterations = 0;
        assert!(c.validate(4).is_err());
    }
}
