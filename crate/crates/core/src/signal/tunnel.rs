use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Trace, TraceGrid};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tunnel-out rate `Γ_i` and tunnel-in rate `Γ_f` (inverse time units).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunnelParams {
    gamma_i: f64,
    gamma_f: f64,
}

impl TunnelParams {
    pub fn new(gamma_i: f64, gamma_f: f64) -> Result<Self> {
        for (name, v) in [("tunnel.gamma_i", gamma_i), ("tunnel.gamma_f", gamma_f)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        Ok(Self { gamma_i, gamma_f })
    }

    /// `Γ_i` fixed, `Γ_f = ratio * Γ_i`.
    pub fn from_ratio(gamma_i: f64, ratio: f64) -> Result<Self> {
        Self::new(gamma_i, ratio * gamma_i)
    }

    pub fn gamma_i(&self) -> f64 {
        self.gamma_i
    }

    pub fn gamma_f(&self) -> f64 {
        self.gamma_f
    }

    /// `Γ = Γ_f / Γ_i`.
    pub fn ratio(&self) -> f64 {
        self.gamma_f / self.gamma_i
    }

    /// `⟨t_f - t_i⟩ = 1 / Γ_f`.
    pub fn mean_high_time(&self) -> f64 {
        1.0 / self.gamma_f
    }
}

impl Default for TunnelParams {
    fn default() -> Self {
        Self {
            gamma_i: 1.0,
            gamma_f: 1.0,
        }
    }
}

/// Hidden event behind one readout window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LatentEvent {
    Down,
    Up { t_i: f64, t_f: f64 },
}

impl LatentEvent {
    pub fn up(t_i: f64, t_f: f64) -> Result<Self> {
        if !(t_i.is_finite() && t_f.is_finite() && 0.0 <= t_i && t_i < t_f) {
            return Err(Error::invalid(
                "event",
                format!("need 0 <= t_i < t_f, got t_i={t_i}, t_f={t_f}"),
            ));
        }
        Ok(LatentEvent::Up { t_i, t_f })
    }

    pub fn label(&self) -> super::Label {
        match self {
            LatentEvent::Down => super::Label::Down,
            LatentEvent::Up { .. } => super::Label::Up,
        }
    }
}

/// A value strictly inside `(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct OpenUnit(f64);

impl OpenUnit {
    pub fn new(v: f64) -> Option<Self> {
        (v > 0.0 && v < 1.0).then_some(Self(v))
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let v: f64 = rng.random();
            if v > 0.0 {
                return Self(v);
            }
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Inverse-CDF exponential sampling of the tunnel-out and tunnel-in times.
pub fn sample_tunnel_times(params: &TunnelParams, u1: OpenUnit, u2: OpenUnit) -> LatentEvent {
    let t_i = -u1.get().ln() / params.gamma_i;
    let t_f = t_i - u2.get().ln() / params.gamma_f;
    LatentEvent::Up { t_i, t_f }
}

/// Noiseless trace: `+1` on samples with `k*dt` in `[t_i, t_f)`, `-1` elsewhere.
pub fn render_ideal_trace<T: Scalar>(event: &LatentEvent, grid: TraceGrid) -> Trace<T> {
    let low = -T::one();
    let mut samples = vec![low; grid.n()];
    if let LatentEvent::Up { t_i, t_f } = *event {
        for (k, s) in samples.iter_mut().enumerate() {
            let t = grid.time(k);
            if t >= t_i && t < t_f {
                *s = T::one();
            }
        }
    }
    Trace::new(samples, grid).expect("rendered trace matches grid")
}
