//! Layered velocity models: generation, smoothing and normalization.

use std::ops::RangeInclusive;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FwicError, Result};

/// Lower end of the generated velocity range, km/s.
pub const V_MIN: f64 = 2.0;
/// Upper end of the generated velocity range, km/s.
pub const V_MAX: f64 = 4.5;

/// Regular 2D grid: `nz` depth rows by `nx` lateral columns, spacing `dx` meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
}

impl GridSpec {
    pub fn new(nx: usize, nz: usize, dx: f64) -> Result<Self> {
        let spec = GridSpec { nx, nz, dx };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 8 || self.nz < 8 {
            return Err(FwicError::param(format!(
                "grid must be at least 8x8, got nx={} nz={}",
                self.nx, self.nz
            )));
        }
        if !(self.dx > 0.0 && self.dx.is_finite()) {
            return Err(FwicError::param(format!("grid spacing must be positive, got {}", self.dx)));
        }
        Ok(())
    }

    pub fn width_m(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn depth_m(&self) -> f64 {
        self.nz as f64 * self.dx
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nz, self.nx)
    }
}

/// P-wave velocities in km/s on an `nz x nx` grid (row = depth).
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityModel {
    pub spec: GridSpec,
    pub values: Array2<f64>,
}

impl VelocityModel {
    pub fn new(spec: GridSpec, values: Array2<f64>) -> Result<Self> {
        spec.validate()?;
        if values.dim() != spec.shape() {
            return Err(FwicError::dims(
                "velocity model",
                &[spec.nz, spec.nx],
                values.shape(),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(FwicError::param("velocity model contains non-positive or non-finite values"));
        }
        Ok(VelocityModel { spec, values })
    }

    pub fn constant(spec: GridSpec, v: f64) -> Result<Self> {
        Self::new(spec, Array2::from_elem(spec.shape(), v))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.mean().unwrap_or(0.0)
    }

    /// Affine map of `[V_MIN, V_MAX]` onto `[0, 1]`.
    pub fn normalized(&self) -> Array2<f64> {
        normalize(&self.values)
    }

    /// Mirror left-right.
    pub fn mirrored(&self) -> Self {
        let mut values = self.values.clone();
        values.invert_axis(ndarray::Axis(1));
        VelocityModel { spec: self.spec, values }
    }
}

pub fn normalize(values: &Array2<f64>) -> Array2<f64> {
    values.mapv(|v| (v - V_MIN) / (V_MAX - V_MIN))
}

pub fn denormalize(normalized: &Array2<f64>) -> Array2<f64> {
    normalized.mapv(|n| V_MIN + n * (V_MAX - V_MIN))
}

/// How layer velocities are ordered with depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VelocityOrdering {
    /// Increasing with depth with the given probability, shuffled otherwise.
    MostlyIncreasing { p_increasing: f64 },
    Increasing,
    Random,
}

impl Default for VelocityOrdering {
    fn default() -> Self {
        VelocityOrdering::MostlyIncreasing { p_increasing: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredModelParams {
    pub n_layers: usize,
    pub seed: u64,
    /// Peak amplitude of the interface undulation, in grid cells. `None`
    /// picks a fraction of the mean layer thickness.
    pub roughness: Option<f64>,
    pub ordering: VelocityOrdering,
    /// Accepted layer counts. The generator contract is 5..=8; reduced test
    /// profiles widen this.
    pub allowed_layers: RangeInclusive<usize>,
}

impl LayeredModelParams {
    pub fn new(n_layers: usize, seed: u64) -> Self {
        LayeredModelParams {
            n_layers,
            seed,
            roughness: None,
            ordering: VelocityOrdering::default(),
            allowed_layers: 5..=8,
        }
    }

    pub fn with_allowed_layers(mut self, range: RangeInclusive<usize>) -> Self {
        self.allowed_layers = range;
        self
    }
}

const MIN_LAYER_GAP_KMS: f64 = 0.1;
const MIN_LAYER_CELLS: f64 = 2.0;

/// Generate a random layered model. Deterministic in `params.seed`.
pub fn generate_model(params: &LayeredModelParams, spec: GridSpec) -> Result<VelocityModel> {
    spec.validate()?;
    let n = params.n_layers;
    if !params.allowed_layers.contains(&n) {
        return Err(FwicError::param(format!(
            "n_layers must be in {:?}, got {n}",
            params.allowed_layers
        )));
    }
    if n < 2 {
        return Err(FwicError::param("a layered model needs at least 2 layers"));
    }
    if (spec.nz as f64) < MIN_LAYER_CELLS * n as f64 + 2.0 {
        return Err(FwicError::param(format!(
            "grid depth {} too shallow for {n} layers",
            spec.nz
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let velocities = draw_velocities(&mut rng, n, params.ordering);

    let nz = spec.nz as f64;
    let nx = spec.nx as f64;
    let thickness = (nz - 2.0) / n as f64;
    let roughness = params.roughness.unwrap_or(0.35 * thickness);

    // Interface k is the first row of layer k+1.
    let mut depths = vec![vec![0.0f64; spec.nx]; n - 1];
    for (k, row) in depths.iter_mut().enumerate() {
        let base = 2.0 + thickness * (k as f64 + 1.0) + rng.random_range(-0.25..0.25) * thickness;
        let terms: Vec<(f64, f64)> = (1..=3)
            .map(|j| {
                let amp = rng.random_range(-1.0..1.0) * roughness / j as f64;
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (amp, phase)
            })
            .collect();
        for (ix, d) in row.iter_mut().enumerate() {
            let x = ix as f64 / nx;
            let wiggle: f64 = terms
                .iter()
                .enumerate()
                .map(|(j, (amp, phase))| amp * (std::f64::consts::TAU * (j + 1) as f64 * x + phase).cos())
                .sum();
            *d = base + wiggle;
        }
    }
    // Keep interfaces strictly deepening with a minimum thickness per layer.
    #[allow(clippy::needless_range_loop)]
    for ix in 0..spec.nx {
        for k in 0..n - 1 {
            let lo = if k == 0 { 2.0 } else { depths[k - 1][ix] + MIN_LAYER_CELLS };
            let hi = nz - MIN_LAYER_CELLS * (n - 1 - k) as f64;
            depths[k][ix] = depths[k][ix].round().clamp(lo, hi);
        }
    }

    let values = Array2::from_shape_fn(spec.shape(), |(iz, ix)| {
        let z = iz as f64;
        let layer = depths.iter().filter(|d| d[ix] <= z).count();
        velocities[layer]
    });
    VelocityModel::new(spec, values)
}

fn draw_velocities(rng: &mut ChaCha8Rng, n: usize, ordering: VelocityOrdering) -> Vec<f64> {
    let increasing = match ordering {
        VelocityOrdering::Increasing => true,
        VelocityOrdering::Random => false,
        VelocityOrdering::MostlyIncreasing { p_increasing } => rng.random_bool(p_increasing),
    };
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(V_MIN..=V_MAX)).collect();
        if increasing {
            v.sort_by(f64::total_cmp);
        }
        if v.windows(2).all(|w| (w[1] - w[0]).abs() >= MIN_LAYER_GAP_KMS) {
            // round to 1 m/s so bands are exactly representable in f32 files
            return v.into_iter().map(|x| (x * 1000.0).round() / 1000.0).collect();
        }
    }
}

/// Index into `0..n` with symmetric (edge-including) reflection, valid for any offset.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let j = i.rem_euclid(period) as usize;
    if j >= n {
        2 * n - 1 - j
    } else {
        j
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (4.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Isotropic Gaussian blur with reflective boundaries; `sigma` in grid cells.
pub fn smooth_model(m: &VelocityModel, sigma: f64) -> Result<VelocityModel> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(FwicError::param(format!("smoothing sigma must be positive, got {sigma}")));
    }
    let kernel = gaussian_kernel(sigma);
    let half = (kernel.len() / 2) as isize;
    let (nz, nx) = m.values.dim();

    let mut tmp = Array2::<f64>::zeros((nz, nx));
    for iz in 0..nz {
        for ix in 0..nx {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                acc += w * m.values[[iz, reflect(ix as isize + k as isize - half, nx)]];
            }
            tmp[[iz, ix]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((nz, nx));
    for iz in 0..nz {
        for ix in 0..nx {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                acc += w * tmp[[reflect(iz as isize + k as isize - half, nz), ix]];
            }
            out[[iz, ix]] = acc;
        }
    }
    // convex combination: clamp away rounding excursions
    let (lo, hi) = (m.min(), m.max());
    out.mapv_inplace(|v| v.clamp(lo, hi));
    VelocityModel::new(m.spec, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full() -> GridSpec {
        GridSpec::new(288, 144, 6.99).unwrap()
    }

    fn max_vertical_jump(m: &VelocityModel) -> f64 {
        let (nz, nx) = m.values.dim();
        let mut best = 0.0f64;
        for iz in 1..nz {
            for ix in 0..nx {
                best = best.max((m.values[[iz, ix]] - m.values[[iz - 1, ix]]).abs());
            }
        }
        best
    }

    #[test]
    fn generated_model_has_bands_in_range() {
        let m = generate_model(&LayeredModelParams::new(5, 7), full()).unwrap();
        assert!(m.min() >= V_MIN && m.max() <= V_MAX);
        let mut distinct: Vec<f64> = m.values.iter().copied().collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        assert_eq!(distinct.len(), 5);
    }

    #[test]
    fn every_column_crosses_all_interfaces() {
        for seed in 0..20 {
            let n = 5 + (seed as usize % 4);
            let m = generate_model(&LayeredModelParams::new(n, seed), full()).unwrap();
            let (nz, nx) = m.values.dim();
            let good = (0..nx)
                .filter(|&ix| {
                    (1..nz).filter(|&iz| m.values[[iz, ix]] != m.values[[iz - 1, ix]]).count() >= n - 1
                })
                .count();
            assert!(good as f64 >= 0.9 * nx as f64, "seed {seed}: {good}/{nx}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let p = LayeredModelParams::new(6, 42);
        assert_eq!(generate_model(&p, full()).unwrap(), generate_model(&p, full()).unwrap());
    }

    #[test]
    fn layer_count_is_bounded() {
        let err = generate_model(&LayeredModelParams::new(3, 1), full()).unwrap_err();
        assert!(matches!(err, FwicError::Parameter(_)));
        assert!(generate_model(&LayeredModelParams::new(9, 1), full()).is_err());
        let desk = GridSpec::new(96, 48, 6.99).unwrap();
        let p = LayeredModelParams::new(3, 1).with_allowed_layers(3..=6);
        assert!(generate_model(&p, desk).is_ok());
    }

    #[test]
    fn smoothing_constant_is_identity() {
        let m = VelocityModel::constant(full(), 3.1).unwrap();
        let s = smooth_model(&m, 5.0).unwrap();
        assert!(s.values.iter().all(|v| (v - 3.1).abs() < 1e-12));
    }

    #[test]
    fn large_sigma_approaches_thickness_weighted_mean() {
        let spec = GridSpec::new(16, 40, 10.0).unwrap();
        // 10 rows at 2.0, 30 rows at 4.0
        let values = Array2::from_shape_fn(spec.shape(), |(iz, _)| if iz < 10 { 2.0 } else { 4.0 });
        let m = VelocityModel::new(spec, values).unwrap();
        let expected = (10.0 * 2.0 + 30.0 * 4.0) / 40.0;
        let s = smooth_model(&m, 500.0).unwrap();
        for v in s.values.iter() {
            assert!((v - expected).abs() < 1e-3, "{v} vs {expected}");
        }
    }

    #[test]
    fn smoothing_stays_in_range_and_keeps_mean() {
        let m = generate_model(&LayeredModelParams::new(7, 3), full()).unwrap();
        let s = smooth_model(&m, 8.0).unwrap();
        assert!(s.min() >= m.min() && s.max() <= m.max());
        assert!((s.mean() - m.mean()).abs() / m.mean() < 0.01);
        let s10 = smooth_model(&m, 10.0).unwrap();
        assert!(max_vertical_jump(&m) >= 2.0 * max_vertical_jump(&s10));
    }

    #[test]
    fn smoothing_rejects_bad_sigma() {
        let m = VelocityModel::constant(full(), 3.0).unwrap();
        assert!(smooth_model(&m, 0.0).is_err());
        assert!(smooth_model(&m, -1.0).is_err());
    }

    #[test]
    fn normalization_endpoints() {
        let v = ndarray::array![[2.0, 4.5, 3.25]];
        let n = normalize(&v);
        assert_eq!(n, ndarray::array![[0.0, 1.0, 0.5]]);
        let back = denormalize(&n);
        assert!((&back - &v).iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn reflect_handles_wide_offsets() {
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(9, 4), 1);
        assert_eq!(reflect(-9, 4), 0);
    }
}
