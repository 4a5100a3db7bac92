//! Readout traces and their synthesis.
//!
//! A readout window is a uniformly sampled trace `Ψ(t)` scaled so that the
//! noiseless lower level is `-1` and the peak level is `+1`. An `UP` spin
//! produces one peak between the tunnel-out time `t_i` and the tunnel-in
//! time `t_f`; a `DOWN` spin produces a flat trace.

mod dataset;
pub(crate) use dataset::TraceSynth;
pub mod format;
mod mean_fit;
mod psd;
mod rng;
mod snr;
mod tunnel;

pub use dataset::{
    synthesize_dataset, DatasetMeta, LabeledDataset, NoiseModel, NoiseSpec, PerturbationSpec, Provenance,
    SynthConfig,
};
pub use mean_fit::{fit_mean_trace, mean_trace, sequential_mean, unoccupied_probability, MeanFit};
pub use psd::{load_psd, model_psd, parse_psd, synth_colored_noise, ColoredNoise, ModelPsd, PsdTable};
pub use rng::{derive_seed, stream_rng};
pub use snr::{gaussian_sigma_for_r, measure_r, r_from_autocovariance};
pub use tunnel::{render_ideal_trace, sample_tunnel_times, LatentEvent, OpenUnit, TunnelParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sampling grid shared by every trace of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceGrid {
    dt: f64,
    n: usize,
}

impl TraceGrid {
    pub fn new(dt: f64, n: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("grid.dt", format!("must be > 0, got {dt}")));
        }
        if n < 2 {
            return Err(Error::invalid("grid.n", format!("must be >= 2, got {n}")));
        }
        Ok(Self { dt, n })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Window length `n * dt`.
    pub fn t_total(&self) -> f64 {
        self.n as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|k| self.time(k))
    }
}

impl Default for TraceGrid {
    /// `dt = 0.01`, `n = 1000`: ten mean peak lengths at `Γ_f = 1`.
    fn default() -> Self {
        Self { dt: 0.01, n: 1000 }
    }
}

/// Spin outcome; the numeric value is the class index (`UP = 1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Down = 0,
    Up = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Down),
            1 => Some(Label::Up),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_up(self) -> bool {
        self == Label::Up
    }
}

/// One scaled readout trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace<T = f32> {
    samples: Vec<T>,
    grid: TraceGrid,
}

impl<T: Scalar> Trace<T> {
    pub fn new(samples: Vec<T>, grid: TraceGrid) -> Result<Self> {
        if samples.len() != grid.n() {
            return Err(Error::GridMismatch {
                have: samples.len(),
                want: grid.n(),
            });
        }
        if let Some(k) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("trace", format!("sample {k} is not finite")));
        }
        Ok(Self { samples, grid })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn grid(&self) -> TraceGrid {
        self.grid
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn cast<U: Scalar>(&self) -> Trace<U> {
        Trace {
            samples: self
                .samples
                .iter()
                .map(|&v| U::from(v).expect("finite sample"))
                .collect(),
            grid: self.grid,
        }
    }
}
