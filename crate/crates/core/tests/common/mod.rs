#![allow(dead_code)]

pub mod gradcheck;
pub mod selection;

use fwic::geomodel::{GridSpec, VelocityModel};
use fwic::wavesim::{AcquisitionGeometry, Boundary, GridPoint, Simulator, SolverOptions, SourceWavelet};

/// Free-space 2D solution of `u_tt - v^2 lap(u) = delta(x) w(t)` at distance `r`.
///
/// Convolves the wavelet with the line-source Green's function
/// `H(vt - r) / (2 pi v sqrt(v^2 t^2 - r^2))`, substituting `tau = r/v + s^2`
/// to remove the integrable singularity at the wavefront.
pub fn analytic_line_source(r: f64, v: f64, wavelet: &SourceWavelet, t: f64) -> f64 {
    let t_arr = r / v;
    if t <= t_arr {
        return 0.0;
    }
    let s_max = (t - t_arr).sqrt();
    let n = 4000;
    let h = s_max / n as f64;
    let f = |s: f64| {
        let tau = t_arr + s * s;
        wavelet.value(t - tau) / (std::f64::consts::PI * v * (v * (v * tau + r)).sqrt())
    };
    // composite Simpson
    let mut acc = f(0.0) + f(s_max);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Central difference of `f` at `x` along a single coordinate.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Homogeneous free-space run: source at the grid center, receiver `offset_m`
/// to the right, traces sampled every `dt`.
pub fn homogeneous_trace(dx: f64, offset_m: f64, dt: f64, t_max: f64) -> (Vec<f64>, SourceWavelet, f64) {
    let v = 3.0;
    let half = (500.0 / dx).round() as usize;
    let n = 2 * half + 1;
    let spec = GridSpec::new(n, n, dx).unwrap();
    let m = VelocityModel::constant(spec, v).unwrap();
    let off = (offset_m / dx).round() as usize;
    let n_samples = (t_max / dt).round() as usize;
    let geometry = AcquisitionGeometry {
        sources: vec![GridPoint { iz: half, ix: half }],
        receivers: vec![GridPoint { iz: half, ix: half + off }],
        record_length_s: n_samples as f64 * dt,
        n_time_samples: n_samples,
    };
    let wavelet = SourceWavelet::ricker(15.0);
    let mut boundary = Boundary::absorbing((200.0 / dx).round() as usize);
    boundary.sponge_strength = 0.3;
    let sim = Simulator::new(&m, &geometry, &wavelet, &SolverOptions::new(boundary)).unwrap();
    assert_eq!(sim.time_axis().substeps, 1);
    let (g, _) = sim.forward(0, false).unwrap();
    (g.data.row(0).iter().map(|&x| x as f64).collect(), wavelet, off as f64 * dx)
}

/// Misfit over the window before the first boundary return (source 500 m
/// from the sponge, receiver 200 m from it, plus the wavelet delay).
pub fn misfit_against_analytic(dx: f64, dt: f64) -> f64 {
    let t_max = 0.25;
    let (trace, wavelet, r) = homogeneous_trace(dx, 300.0, dt, t_max);
    // compare on a common 2 ms grid
    let stride = (2e-3 / dt).round() as usize;
    let num: Vec<f64> = trace.iter().step_by(stride).copied().collect();
    let exact: Vec<f64> = (0..num.len())
        .map(|k| analytic_line_source(r, 3000.0, &wavelet, k as f64 * 2e-3))
        .collect();
    rel_l2(&num, &exact)
}
