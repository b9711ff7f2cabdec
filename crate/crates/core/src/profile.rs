//! Scale profiles: the full survey layout and the reduced desk layout used
//! for tests and local experiments.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FwicError, Result};
use crate::fwi::{FwiConfig, V_CEILING};
use crate::geomodel::{GridSpec, LayeredModelParams};
use crate::wavesim::{AcquisitionGeometry, Boundary, ForwardSetup, SolverOptions, SourceWavelet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Full,
    Desk,
}

impl FromStr for ProfileKind {
    type Err = FwicError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ProfileKind::Full),
            "desk" => Ok(ProfileKind::Desk),
            other => Err(FwicError::param(format!("unknown profile {other:?} (expected full|desk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub kind: ProfileKind,
    pub grid: GridSpec,
    pub n_shots: usize,
    pub record_length_s: f64,
    pub n_time_samples: usize,
    pub peak_frequency_hz: f64,
    pub sponge_cells: usize,
    /// Gaussian sigma (cells) used to build FWI starting models.
    pub smoothing_sigma: f64,
    pub min_layers: usize,
    pub max_layers: usize,
    /// Channel widths of the compressed-learning network are divided by this.
    pub dcl_channel_divisor: usize,
    pub fwi_max_iterations: usize,
    pub fwi_loss_threshold: f64,
}

impl Profile {
    pub fn full() -> Self {
        Profile {
            kind: ProfileKind::Full,
            grid: GridSpec { nx: 288, nz: 144, dx: 6.99 },
            n_shots: 20,
            record_length_s: 1.0,
            n_time_samples: 864,
            peak_frequency_hz: 12.0,
            sponge_cells: 30,
            smoothing_sigma: 8.0,
            min_layers: 5,
            max_layers: 8,
            dcl_channel_divisor: 1,
            fwi_max_iterations: 500,
            fwi_loss_threshold: 0.05,
        }
    }

    pub fn desk() -> Self {
        Profile {
            kind: ProfileKind::Desk,
            grid: GridSpec { nx: 96, nz: 48, dx: 6.99 },
            n_shots: 8,
            record_length_s: 0.6,
            n_time_samples: 288,
            peak_frequency_hz: 10.0,
            sponge_cells: 20,
            smoothing_sigma: 8.0,
            min_layers: 3,
            max_layers: 6,
            dcl_channel_divisor: 8,
            fwi_max_iterations: 25,
            fwi_loss_threshold: 1e-4,
        }
    }

    pub fn from_kind(kind: ProfileKind) -> Self {
        match kind {
            ProfileKind::Full => Profile::full(),
            ProfileKind::Desk => Profile::desk(),
        }
    }

    pub fn geometry(&self) -> Result<AcquisitionGeometry> {
        AcquisitionGeometry::surface(&self.grid, self.n_shots, self.record_length_s, self.n_time_samples)
    }

    pub fn wavelet(&self) -> SourceWavelet {
        SourceWavelet::ricker(self.peak_frequency_hz)
    }

    pub fn boundary(&self) -> Boundary {
        Boundary::free_surface(self.sponge_cells)
    }

    /// Solver options with the time step pinned to the inversion velocity
    /// ceiling, so observed and synthetic data share one time axis.
    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions::new(self.boundary()).with_v_bound(V_CEILING)
    }

    pub fn setup(&self) -> Result<ForwardSetup> {
        Ok(ForwardSetup { geometry: self.geometry()?, wavelet: self.wavelet(), solver: self.solver_options() })
    }

    /// Inversion settings for this profile over the given shots.
    pub fn fwi_config(&self, selected: Vec<usize>) -> FwiConfig {
        let mut c = FwiConfig::new(selected);
        c.max_iterations = self.fwi_max_iterations;
        c.loss_threshold = self.fwi_loss_threshold;
        c.smoothing_sigma = self.smoothing_sigma;
        c
    }

    pub fn layer_params(&self, n_layers: usize, seed: u64) -> LayeredModelParams {
        LayeredModelParams::new(n_layers, seed).with_allowed_layers(self.min_layers..=self.max_layers)
    }
}
