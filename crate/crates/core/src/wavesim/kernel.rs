//! Padded finite-difference domain and the 4th-order-in-space,
//! 2nd-order-in-time leapfrog kernel together with its exact discrete adjoint.

use ndarray::Array2;

use super::Boundary;
use crate::geomodel::VelocityModel;

pub(crate) const HALO: usize = 2;

const C0: f64 = -5.0 / 2.0;
const C1: f64 = 4.0 / 3.0;
const C2: f64 = -1.0 / 12.0;

/// Stability limit of `v dt / dx` for this stencil in 2D.
pub const CFL_LIMIT: f64 = 0.612_372_435_695_794_5; // sqrt(3/8)

/// Model grid embedded in a sponge-padded grid with a zero halo.
#[derive(Debug, Clone)]
pub(crate) struct Domain {
    pub nz: usize,
    pub nx: usize,
    pub top: usize,
    pub left: usize,
    /// padded interior rows/cols (model + sponge), halo excluded
    pub pz: usize,
    pub px: usize,
    pub stride: usize,
    pub free_surface: bool,
    pub inv_dx2: f64,
}

impl Domain {
    pub fn new(nz: usize, nx: usize, dx: f64, boundary: &Boundary) -> Self {
        let w = boundary.sponge_cells;
        let top = if boundary.free_surface { 0 } else { w };
        let pz = top + nz + w;
        let px = nx + 2 * w;
        Domain {
            nz,
            nx,
            top,
            left: w,
            pz,
            px,
            stride: px + 2 * HALO,
            free_surface: boundary.free_surface,
            inv_dx2: 1.0 / (dx * dx),
        }
    }

    pub fn len(&self) -> usize {
        self.stride * (self.pz + 2 * HALO)
    }

    /// Flat index of padded-interior cell (r, c).
    #[inline]
    pub fn idx(&self, r: usize, c: usize) -> usize {
        (r + HALO) * self.stride + c + HALO
    }

    /// Flat index of model cell (iz, ix).
    #[inline]
    pub fn model_idx(&self, iz: usize, ix: usize) -> usize {
        self.idx(iz + self.top, ix + self.left)
    }

    /// Model cell that a padded cell copies its velocity from.
    #[inline]
    pub fn source_cell(&self, r: usize, c: usize) -> (usize, usize) {
        let iz = r.saturating_sub(self.top).min(self.nz - 1);
        let ix = c.saturating_sub(self.left).min(self.nx - 1);
        (iz, ix)
    }

    /// Edge-replicated copy of `values` on the padded grid (halo zero).
    pub fn extend(&self, values: &Array2<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for r in 0..self.pz {
            for c in 0..self.px {
                out[self.idx(r, c)] = values[self.source_cell(r, c)];
            }
        }
        out
    }

    /// Adjoint of [`Domain::extend`]: sums padded contributions back onto the model.
    pub fn fold(&self, padded: &[f64]) -> Array2<f64> {
        let mut out = Array2::zeros((self.nz, self.nx));
        for r in 0..self.pz {
            for c in 0..self.px {
                out[self.source_cell(r, c)] += padded[self.idx(r, c)];
            }
        }
        out
    }

    /// Per-cell damping factor in (0, 1]; 1 outside the sponge.
    pub fn damping(&self, boundary: &Boundary) -> Vec<f64> {
        let w = boundary.sponge_cells as f64;
        let mut g = vec![1.0; self.len()];
        if boundary.sponge_cells == 0 {
            return g;
        }
        for r in 0..self.pz {
            for c in 0..self.px {
                let dz_top = if self.free_surface { 0.0 } else { (self.top as f64 - r as f64).max(0.0) };
                let dz_bot = (r as f64 - (self.top + self.nz - 1) as f64).max(0.0);
                let dx_l = (self.left as f64 - c as f64).max(0.0);
                let dx_r = (c as f64 - (self.left + self.nx - 1) as f64).max(0.0);
                let d = dz_top.max(dz_bot).max(dx_l).max(dx_r);
                if d > 0.0 {
                    g[self.idx(r, c)] = (-(boundary.sponge_strength * d / w).powi(2)).exp();
                }
            }
        }
        g
    }

    /// Enforce the free-surface condition: surface row zero, ghost rows odd-mirrored.
    #[inline]
    pub fn apply_surface(&self, u: &mut [f64]) {
        if !self.free_surface {
            return;
        }
        let s = self.stride;
        let r0 = HALO * s;
        for j in 0..s {
            u[r0 + j] = 0.0;
            u[r0 - s + j] = -u[r0 + s + j];
            u[r0 - 2 * s + j] = -u[r0 + 2 * s + j];
        }
    }

    /// Apply the stencil along padded row `r`, calling `f(column, L u)`.
    #[inline(always)]
    fn stencil_row(&self, u: &[f64], r: usize, mut f: impl FnMut(usize, f64)) {
        let s = self.stride;
        let n = self.px;
        let base = self.idx(r, 0);
        let row = |off: usize| &u[off..off + n];
        let (c, w1, e1, w2, e2) = (row(base), row(base - 1), row(base + 1), row(base - 2), row(base + 2));
        let (n1, s1, n2, s2) = (row(base - s), row(base + s), row(base - 2 * s), row(base + 2 * s));
        for k in 0..n {
            let lap = self.inv_dx2
                * (2.0 * C0 * c[k] + C1 * (w1[k] + e1[k] + n1[k] + s1[k]) + C2 * (w2[k] + e2[k] + n2[k] + s2[k]));
            f(k, lap);
        }
    }

    /// `out = L u` on the padded interior. `u` must already satisfy the surface condition.
    pub fn laplacian(&self, u: &[f64], out: &mut [f64]) {
        for r in 0..self.pz {
            let base = self.idx(r, 0);
            let o = &mut out[base..base + self.px];
            self.stencil_row(u, r, |k, lap| o[k] = lap);
        }
    }

    /// `next = a*cur - b*prev + cw * L(cur)` on the padded interior.
    pub fn step(&self, coef: &Coefficients, prev: &[f64], cur: &[f64], next: &mut [f64]) {
        let n = self.px;
        for r in 0..self.pz {
            let base = self.idx(r, 0);
            let (a, b, cw) = (&coef.a[base..base + n], &coef.b[base..base + n], &coef.cw[base..base + n]);
            let (p, c) = (&prev[base..base + n], &cur[base..base + n]);
            let o = &mut next[base..base + n];
            self.stencil_row(cur, r, |k, lap| o[k] = a[k] * c[k] - b[k] * p[k] + cw[k] * lap);
        }
        self.apply_surface(next);
    }

    /// `out = L(cur)` and `next = a*cur - b*prev + cw * out` in one sweep.
    pub fn step_keep_laplacian(
        &self,
        coef: &Coefficients,
        prev: &[f64],
        cur: &[f64],
        next: &mut [f64],
        lap_out: &mut [f64],
    ) {
        self.laplacian(cur, lap_out);
        for r in 0..self.pz {
            let base = self.idx(r, 0);
            for i in base..base + self.px {
                next[i] = coef.a[i] * cur[i] - coef.b[i] * prev[i] + coef.cw[i] * lap_out[i];
            }
        }
        self.apply_surface(next);
    }

    /// One reverse step of the adjoint recursion:
    /// `lam_prev = a*lam_cur - b*lam_next + L(cw*lam_cur)` (observation terms added by caller).
    pub fn adjoint_step(
        &self,
        coef: &Coefficients,
        lam_next: &[f64],
        lam_cur: &[f64],
        lam_prev: &mut [f64],
        scratch: &mut [f64],
    ) {
        for r in 0..self.pz {
            let base = self.idx(r, 0);
            for i in base..base + self.px {
                scratch[i] = coef.cw[i] * lam_cur[i];
            }
        }
        self.apply_surface(scratch);
        let n = self.px;
        for r in 0..self.pz {
            let base = self.idx(r, 0);
            let (a, b) = (&coef.a[base..base + n], &coef.b[base..base + n]);
            let (lc, ln) = (&lam_cur[base..base + n], &lam_next[base..base + n]);
            let o = &mut lam_prev[base..base + n];
            self.stencil_row(scratch, r, |k, lap| o[k] = a[k] * lc[k] - b[k] * ln[k] + lap);
        }
        self.zero_surface(lam_prev);
    }

    /// Zero the (constrained) surface row and the ghost rows.
    pub fn zero_surface(&self, u: &mut [f64]) {
        if !self.free_surface {
            return;
        }
        let s = self.stride;
        u[..(HALO + 1) * s].iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Per-cell update coefficients derived from damping `g`, `dt` and `v^2`.
#[derive(Debug, Clone)]
pub(crate) struct Coefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// g dt^2 v^2
    pub cw: Vec<f64>,
    /// g dt^2 (multiplies the source term and the model sensitivity)
    pub gdt2: Vec<f64>,
}

impl Coefficients {
    pub fn new(domain: &Domain, model: &VelocityModel, g: &[f64], dt: f64) -> Self {
        let w: Vec<f64> = domain
            .extend(&model.values)
            .into_iter()
            .map(|v| (v * 1000.0) * (v * 1000.0))
            .collect();
        let n = domain.len();
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        let mut cw = vec![0.0; n];
        let mut gdt2 = vec![0.0; n];
        for i in 0..n {
            a[i] = 2.0 * g[i];
            b[i] = g[i] * g[i];
            gdt2[i] = g[i] * dt * dt;
            cw[i] = gdt2[i] * w[i];
        }
        Coefficients { a, b, cw, gdt2 }
    }
}
