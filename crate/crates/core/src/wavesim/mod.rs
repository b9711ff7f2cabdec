//! 2D constant-density acoustic modeling, `u_tt - v^2 lap(u) = f`, on a
//! regular grid with a free surface on top and sponge layers elsewhere.
//!
//! The simulation runs at an internal step `dt` that divides the output
//! sampling interval exactly; receiver traces are taken every `substeps`
//! internal steps.

pub(crate) mod kernel;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{FwicError, Result};
use crate::geomodel::{GridSpec, VelocityModel};
use crate::par::{self, Execution};

pub use kernel::CFL_LIMIT;
use kernel::{Coefficients, Domain};

/// Absorbing-boundary configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub sponge_cells: usize,
    /// Damping at the outer sponge edge is `exp(-strength^2)` per step.
    pub sponge_strength: f64,
    pub free_surface: bool,
}

impl Boundary {
    pub const DEFAULT_STRENGTH: f64 = 0.3;

    pub fn free_surface(sponge_cells: usize) -> Self {
        Boundary { sponge_cells, sponge_strength: Self::DEFAULT_STRENGTH, free_surface: true }
    }

    /// Sponge on all four sides.
    pub fn absorbing(sponge_cells: usize) -> Self {
        Boundary { sponge_cells, sponge_strength: Self::DEFAULT_STRENGTH, free_surface: false }
    }
}

/// Ricker source wavelet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceWavelet {
    pub peak_hz: f64,
    pub amplitude: f64,
    pub time_shift_s: f64,
}

impl SourceWavelet {
    pub fn ricker(peak_hz: f64) -> Self {
        SourceWavelet { peak_hz, amplitude: 1.0, time_shift_s: 1.5 / peak_hz }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn value(&self, t: f64) -> f64 {
        let a = std::f64::consts::PI * self.peak_hz * (t - self.time_shift_s);
        let a2 = a * a;
        self.amplitude * (1.0 - 2.0 * a2) * (-a2).exp()
    }

    /// Wavelength at the peak frequency for velocity `v_kms`.
    pub fn min_wavelength_m(&self, v_kms: f64) -> f64 {
        v_kms * 1000.0 / self.peak_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPoint {
    pub iz: usize,
    pub ix: usize,
}

/// Sources and receivers on grid nodes plus the output time sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionGeometry {
    pub sources: Vec<GridPoint>,
    pub receivers: Vec<GridPoint>,
    pub record_length_s: f64,
    pub n_time_samples: usize,
}

impl AcquisitionGeometry {
    /// Shots spread uniformly (and mirror-symmetrically) across the width,
    /// receivers on every other column; both on the shallowest interior row.
    pub fn surface(spec: &GridSpec, n_shots: usize, record_length_s: f64, n_time_samples: usize) -> Result<Self> {
        spec.validate()?;
        if n_shots == 0 || n_shots > spec.nx {
            return Err(FwicError::param(format!("cannot place {n_shots} shots on {} columns", spec.nx)));
        }
        let last = (spec.nx - 1) as f64;
        let mut xs: Vec<usize> = (0..n_shots)
            .map(|k| ((2 * k + 1) as f64 * last / (2 * n_shots) as f64).round() as usize)
            .collect();
        for k in n_shots.div_ceil(2)..n_shots {
            xs[k] = spec.nx - 1 - xs[n_shots - 1 - k];
        }
        let sources = xs.into_iter().map(|ix| GridPoint { iz: 1, ix }).collect();
        let receivers = (0..spec.nx).step_by(2).map(|ix| GridPoint { iz: 1, ix }).collect();
        let g = AcquisitionGeometry { sources, receivers, record_length_s, n_time_samples };
        g.validate(spec)?;
        Ok(g)
    }

    pub fn validate(&self, spec: &GridSpec) -> Result<()> {
        if self.n_time_samples < 2 || !(self.record_length_s > 0.0) {
            return Err(FwicError::param("record needs at least 2 samples and a positive length"));
        }
        let inside = |p: &GridPoint| p.iz < spec.nz && p.ix < spec.nx;
        if !self.sources.iter().chain(&self.receivers).all(inside) {
            return Err(FwicError::param("source or receiver outside the grid"));
        }
        if self.receivers.is_empty() {
            return Err(FwicError::param("no receivers"));
        }
        Ok(())
    }

    pub fn n_shots(&self) -> usize {
        self.sources.len()
    }

    pub fn n_receivers(&self) -> usize {
        self.receivers.len()
    }

    pub fn output_dt(&self) -> f64 {
        self.record_length_s / self.n_time_samples as f64
    }

    /// Same layout with a single source, used for reciprocity checks and custom shots.
    pub fn with_sources(&self, sources: Vec<GridPoint>) -> Self {
        AcquisitionGeometry { sources, ..self.clone() }
    }
}

/// Largest timestep allowed by the classic 2nd-order 2D CFL bound,
/// `safety * dx / (v_max * sqrt(2))`, in seconds.
pub fn stable_dt(m: &VelocityModel, safety: f64) -> f64 {
    cfl_dt(m.spec.dx, m.max(), safety)
}

fn cfl_dt(dx: f64, v_max_kms: f64, safety: f64) -> f64 {
    safety * dx / (v_max_kms * 1000.0 * std::f64::consts::SQRT_2)
}

/// Internal time stepping tied to the output sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeAxis {
    pub dt: f64,
    /// internal steps per output sample
    pub substeps: usize,
    pub n_output: usize,
}

impl TimeAxis {
    /// Choose `dt = output_dt / k` with the smallest integer `k` that keeps
    /// `dt <= stable_dt` for velocities up to `v_bound_kms`.
    pub fn new(geometry: &AcquisitionGeometry, dx: f64, v_bound_kms: f64, safety: f64) -> Result<Self> {
        if !(safety > 0.0 && safety <= 1.0) {
            return Err(FwicError::param(format!("safety factor must be in (0,1], got {safety}")));
        }
        let out_dt = geometry.output_dt();
        let limit = cfl_dt(dx, v_bound_kms, safety);
        let substeps = (out_dt / limit).ceil().max(1.0) as usize;
        Ok(TimeAxis { dt: out_dt / substeps as f64, substeps, n_output: geometry.n_time_samples })
    }

    pub fn n_steps(&self) -> usize {
        (self.n_output - 1) * self.substeps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub boundary: Boundary,
    pub safety: f64,
    /// Velocity used to fix `dt`; defaults to the model maximum. Inversion
    /// pins this so the time axis does not move between iterates.
    pub v_bound_kms: Option<f64>,
    /// Forward states kept every this many steps for the adjoint recomputation.
    pub checkpoint_stride: usize,
    /// Keep every n-th internal step when a wavefield is requested.
    pub snapshot_stride: usize,
}

impl SolverOptions {
    /// `safety * sqrt(2)` must stay under [`CFL_LIMIT`] for the 4th-order stencil.
    pub const DEFAULT_SAFETY: f64 = 0.8;

    pub fn new(boundary: Boundary) -> Self {
        SolverOptions {
            boundary,
            safety: Self::DEFAULT_SAFETY,
            v_bound_kms: None,
            checkpoint_stride: 16,
            snapshot_stride: 1,
        }
    }

    pub fn with_v_bound(mut self, v_kms: f64) -> Self {
        self.v_bound_kms = Some(v_kms);
        self
    }
}

/// Receiver-by-time traces of one shot.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotGather {
    pub shot_index: usize,
    pub source_x_m: f64,
    pub dt_s: f64,
    /// n_receivers x n_samples
    pub data: Array2<f32>,
}

impl ShotGather {
    pub fn n_receivers(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|&x| (x as f64) * (x as f64)).sum()
    }

    /// Per-gather max-abs scaling onto [-1, 1].
    pub fn normalized(&self) -> Array2<f32> {
        let peak = self.data.iter().fold(0.0f32, |m, x| m.max(x.abs()));
        if peak > 0.0 {
            self.data.mapv(|x| x / peak)
        } else {
            self.data.clone()
        }
    }
}

/// Snapshots of the model-region wavefield, time-major.
#[derive(Debug, Clone)]
pub struct Wavefield {
    pub dt_s: f64,
    pub stride: usize,
    /// n_snapshots x nz x nx
    pub snapshots: Array3<f32>,
}

/// Forward states saved for recomputation during the adjoint sweep.
pub(crate) struct Checkpoints {
    stride: usize,
    /// (u^{n-1}, u^n) at n = j * stride
    states: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Checkpoints {
    pub(crate) fn padded_len(&self) -> usize {
        self.states[0].0.len()
    }
}

/// Precomputed propagator for one velocity model.
#[derive(Debug, Clone)]
pub struct Simulator {
    domain: Domain,
    coef: Coefficients,
    spec: GridSpec,
    geometry: AcquisitionGeometry,
    wavelet: SourceWavelet,
    time: TimeAxis,
    opts: SolverOptions,
    receiver_idx: Vec<usize>,
}

impl Simulator {
    pub fn new(
        model: &VelocityModel,
        geometry: &AcquisitionGeometry,
        wavelet: &SourceWavelet,
        opts: &SolverOptions,
    ) -> Result<Self> {
        geometry.validate(&model.spec)?;
        let v_bound = opts.v_bound_kms.unwrap_or_else(|| model.max());
        let time = TimeAxis::new(geometry, model.spec.dx, v_bound, opts.safety)?;
        Self::with_time_axis(model, geometry, wavelet, opts, time)
    }

    pub fn with_time_axis(
        model: &VelocityModel,
        geometry: &AcquisitionGeometry,
        wavelet: &SourceWavelet,
        opts: &SolverOptions,
        time: TimeAxis,
    ) -> Result<Self> {
        let courant = model.max() * 1000.0 * time.dt / model.spec.dx;
        if courant > CFL_LIMIT {
            return Err(FwicError::Stability(format!(
                "Courant number {courant:.4} exceeds {CFL_LIMIT:.4} (dt={:.3e} s, v_max={:.3} km/s)",
                time.dt,
                model.max()
            )));
        }
        if opts.checkpoint_stride == 0 || opts.snapshot_stride == 0 {
            return Err(FwicError::param("checkpoint and snapshot strides must be positive"));
        }
        let domain = Domain::new(model.spec.nz, model.spec.nx, model.spec.dx, &opts.boundary);
        let g = domain.damping(&opts.boundary);
        let coef = Coefficients::new(&domain, model, &g, time.dt);
        let receiver_idx = geometry.receivers.iter().map(|p| domain.model_idx(p.iz, p.ix)).collect();
        Ok(Simulator {
            domain,
            coef,
            spec: model.spec,
            geometry: geometry.clone(),
            wavelet: *wavelet,
            time,
            opts: *opts,
            receiver_idx,
        })
    }

    pub fn time_axis(&self) -> TimeAxis {
        self.time
    }

    pub fn geometry(&self) -> &AcquisitionGeometry {
        &self.geometry
    }

    fn check_shot(&self, shot: usize) -> Result<usize> {
        let src = self.geometry.sources.get(shot).ok_or_else(|| {
            FwicError::param(format!("shot index {shot} out of range (n_shots={})", self.geometry.n_shots()))
        })?;
        Ok(self.domain.model_idx(src.iz, src.ix))
    }

    fn source_term(&self, n: usize) -> f64 {
        self.wavelet.value(n as f64 * self.time.dt) * self.domain.inv_dx2
    }

    fn record(&self, u: &[f64], traces: &mut Array2<f64>, k: usize) {
        for (r, &i) in self.receiver_idx.iter().enumerate() {
            traces[[r, k]] = u[i];
        }
    }

    /// Run one shot. Traces are `n_receivers x n_time_samples` in f64.
    fn run(
        &self,
        shot: usize,
        mut on_state: impl FnMut(usize, &[f64], &[f64]),
    ) -> Result<Array2<f64>> {
        let src = self.check_shot(shot)?;
        let d = &self.domain;
        let n = d.len();
        let (mut prev, mut cur, mut next) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut traces = Array2::zeros((self.geometry.n_receivers(), self.time.n_output));
        let q = self.time.substeps;
        on_state(0, &prev, &cur);
        for step in 0..self.time.n_steps() {
            d.step(&self.coef, &prev, &cur, &mut next);
            next[src] += self.coef.gdt2[src] * self.source_term(step);
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
            let t = step + 1;
            if t % q == 0 {
                let k = t / q;
                self.record(&cur, &mut traces, k);
                if !traces.column(k).iter().all(|x| x.is_finite()) || !cur.iter().sum::<f64>().is_finite() {
                    return Err(FwicError::Divergence { step: t });
                }
            }
            on_state(t, &prev, &cur);
        }
        Ok(traces)
    }

    /// Synthetic gather for `shot` and, optionally, the wavefield snapshots.
    pub fn forward(&self, shot: usize, keep_wavefield: bool) -> Result<(ShotGather, Option<Wavefield>)> {
        let d = &self.domain;
        let stride = self.opts.snapshot_stride;
        let mut snaps: Vec<f32> = Vec::new();
        let (nz, nx) = (self.spec.nz, self.spec.nx);
        let traces = self.run(shot, |t, _prev, cur| {
            if keep_wavefield && t % stride == 0 {
                for iz in 0..nz {
                    for ix in 0..nx {
                        snaps.push(cur[d.model_idx(iz, ix)] as f32);
                    }
                }
            }
        })?;
        let wavefield = if keep_wavefield {
            let count = snaps.len() / (nz * nx);
            let snapshots = Array3::from_shape_vec((count, nz, nx), snaps)
                .expect("snapshot buffer matches its shape");
            Some(Wavefield { dt_s: self.time.dt, stride, snapshots })
        } else {
            None
        };
        Ok((self.gather(shot, &traces), wavefield))
    }

    pub(crate) fn gather(&self, shot: usize, traces: &Array2<f64>) -> ShotGather {
        ShotGather {
            shot_index: shot,
            source_x_m: self.geometry.sources[shot].ix as f64 * self.spec.dx,
            dt_s: self.geometry.output_dt(),
            data: traces.mapv(|x| x as f32),
        }
    }

    /// Traces in full precision (used by the misfit).
    pub(crate) fn traces(&self, shot: usize) -> Result<Array2<f64>> {
        self.run(shot, |_, _, _| {})
    }

    pub(crate) fn forward_checkpointed(&self, shot: usize) -> Result<(Array2<f64>, Checkpoints)> {
        let stride = self.opts.checkpoint_stride;
        let mut states = Vec::with_capacity(self.time.n_steps() / stride + 1);
        let traces = self.run(shot, |t, prev, cur| {
            if t % stride == 0 {
                states.push((prev.to_vec(), cur.to_vec()));
            }
        })?;
        Ok((traces, Checkpoints { stride, states }))
    }

    /// Exact discrete adjoint. `trace_weights[r, k]` is dJ/d(trace sample);
    /// returns dJ/d(v^2) on the padded grid (v in m/s). When `illumination`
    /// is given, the squared forward sensitivity `sum_t (dt^2 lap u)^2` is
    /// added to it.
    pub(crate) fn adjoint_v2(
        &self,
        shot: usize,
        trace_weights: &Array2<f64>,
        ckpt: &Checkpoints,
        mut illumination: Option<&mut [f64]>,
    ) -> Result<Vec<f64>> {
        let src = self.check_shot(shot)?;
        let d = &self.domain;
        let n = d.len();
        let q = self.time.substeps;
        let n_steps = self.time.n_steps();
        let stride = ckpt.stride;

        let mut grad = vec![0.0; n];
        let mut lam_next = vec![0.0; n]; // lambda^{m+2}
        let mut lam_cur = vec![0.0; n]; // lambda^{m+1}
        let mut lam_new = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        let mut lap_buf: Vec<Vec<f64>> = vec![vec![0.0; n]; stride];
        let (mut prev, mut cur, mut next) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);

        let n_segments = n_steps.div_ceil(stride);
        for seg in (0..n_segments).rev() {
            let start = seg * stride;
            let end = (start + stride).min(n_steps);
            let (p0, c0) = &ckpt.states[seg];
            prev.copy_from_slice(p0);
            cur.copy_from_slice(c0);
            for step in start..end {
                d.step_keep_laplacian(&self.coef, &prev, &cur, &mut next, &mut lap_buf[step - start]);
                next[src] += self.coef.gdt2[src] * self.source_term(step);
                std::mem::swap(&mut prev, &mut cur);
                std::mem::swap(&mut cur, &mut next);
            }
            for m in (start + 1..=end).rev() {
                if m == n_steps {
                    lam_new.iter_mut().for_each(|x| *x = 0.0);
                } else {
                    d.adjoint_step(&self.coef, &lam_next, &lam_cur, &mut lam_new, &mut scratch);
                }
                if m % q == 0 {
                    let k = m / q;
                    for (r, &i) in self.receiver_idx.iter().enumerate() {
                        lam_new[i] += trace_weights[[r, k]];
                    }
                }
                let lap = &lap_buf[m - 1 - start];
                match illumination.as_deref_mut() {
                    Some(h) => {
                        for (((g, h), (&l, &w)), &lm) in grad.iter_mut().zip(h.iter_mut()).zip(lap.iter().zip(&self.coef.gdt2)).zip(&lam_new) {
                            let sens = w * l;
                            *g += lm * sens;
                            *h += sens * sens;
                        }
                    }
                    None => {
                        for ((g, (&l, &w)), &lm) in grad.iter_mut().zip(lap.iter().zip(&self.coef.gdt2)).zip(&lam_new) {
                            *g += lm * w * l;
                        }
                    }
                }
                std::mem::swap(&mut lam_next, &mut lam_cur);
                std::mem::swap(&mut lam_cur, &mut lam_new);
                if m % (64 * q) == 0 && !lam_cur.iter().sum::<f64>().is_finite() {
                    return Err(FwicError::Divergence { step: m });
                }
            }
        }
        Ok(grad)
    }

    /// Fold a padded dJ/d(v^2) onto the model and convert to dJ/dv with v in km/s.
    pub(crate) fn v2_to_velocity_gradient(&self, model: &VelocityModel, padded: &[f64]) -> Array2<f64> {
        let folded = self.domain.fold(padded);
        // v2 = (1000 v)^2  =>  d(v2)/dv = 2e6 v
        &folded * &model.values.mapv(|v| 2.0e6 * v)
    }

    /// Padded-grid field restricted to the model cells.
    pub(crate) fn restrict(&self, padded: &[f64]) -> Array2<f64> {
        let d = &self.domain;
        Array2::from_shape_fn((self.spec.nz, self.spec.nx), |(iz, ix)| padded[d.model_idx(iz, ix)])
    }
}

/// Everything besides the velocity model that defines a synthetic survey.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSetup {
    pub geometry: AcquisitionGeometry,
    pub wavelet: SourceWavelet,
    pub solver: SolverOptions,
}

impl ForwardSetup {
    pub fn simulator(&self, m: &VelocityModel) -> Result<Simulator> {
        Simulator::new(m, &self.geometry, &self.wavelet, &self.solver)
    }

    pub fn simulate_survey(&self, m: &VelocityModel, exec: Execution) -> Result<Vec<ShotGather>> {
        simulate_survey(m, &self.geometry, &self.wavelet, &self.solver, exec)
    }
}

/// Simulate one shot.
pub fn forward(
    m: &VelocityModel,
    geometry: &AcquisitionGeometry,
    wavelet: &SourceWavelet,
    opts: &SolverOptions,
    shot: usize,
    keep_wavefield: bool,
) -> Result<(ShotGather, Option<Wavefield>)> {
    Simulator::new(m, geometry, wavelet, opts)?.forward(shot, keep_wavefield)
}

/// Simulate every shot of the survey; output is in shot order regardless of scheduling.
pub fn simulate_survey(
    m: &VelocityModel,
    geometry: &AcquisitionGeometry,
    wavelet: &SourceWavelet,
    opts: &SolverOptions,
    exec: Execution,
) -> Result<Vec<ShotGather>> {
    let sim = Simulator::new(m, geometry, wavelet, opts)?;
    let shots: Vec<usize> = (0..geometry.n_shots()).collect();
    par::try_map(exec, &shots, |&s| sim.forward(s, false).map(|(g, _)| g))
}
