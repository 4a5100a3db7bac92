//! Integrated power signal-to-noise ratio `r`.
//!
//! `r^-1 = (1/τ²) ∫₀^τ ∫₀^τ ⟨δΨ(t) δΨ(t')⟩ dt dt'` with `τ = ⟨t_f - t_i⟩`.
//! The `1/τ²` factor makes `r` dimensionless; for white noise of per-sample
//! deviation `σ` it reduces to `r = τ / (σ² dt)`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) const MIN_REALIZATIONS: usize = 100;

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be > 0, got {v}")))
    }
}

/// Number of samples covering `[0, τ]`.
pub(crate) fn window_samples(tau: f64, dt: f64) -> usize {
    ((tau / dt).round() as usize).max(1)
}

/// Per-sample white-noise deviation that yields SNR `r`.
pub fn gaussian_sigma_for_r(r: f64, tau: f64, dt: f64) -> Result<f64> {
    check_positive("r", r)?;
    check_positive("tau", tau)?;
    check_positive("dt", dt)?;
    Ok((tau / (r * dt)).sqrt())
}

/// Estimate `r` from independent noise realizations `δΨ`.
///
/// Only the first `τ/dt` samples of each realization are used. The double
/// integral equals the variance of the windowed sum, which is estimated
/// across realizations. Returns `+inf` for noise-free input.
pub fn measure_r<S: Scalar, V: AsRef<[S]>>(realizations: &[V], tau: f64, dt: f64) -> Result<f64> {
    check_positive("tau", tau)?;
    check_positive("dt", dt)?;
    if realizations.len() < MIN_REALIZATIONS {
        return Err(Error::TooFewRealizations {
            have: realizations.len(),
            need: MIN_REALIZATIONS,
        });
    }
    let m = window_samples(tau, dt);
    let sums = realizations
        .iter()
        .map(|x| {
            let x = x.as_ref();
            if x.len() < m {
                return Err(Error::WindowTooShort {
                    have: x.len(),
                    need: m,
                });
            }
            Ok(x[..m].iter().map(|v| v.to_f64_lossy()).sum::<f64>() * dt)
        })
        .collect::<Result<Vec<f64>>>()?;
    let count = sums.len() as f64;
    let mean = sums.iter().sum::<f64>() / count;
    let var = sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (count - 1.0);
    Ok(if var > 0.0 { tau * tau / var } else { f64::INFINITY })
}

/// `r` of stationary noise with autocovariance `acov[lag]` (in Ψ² per sample pair).
///
/// Lags beyond the provided table are treated as uncorrelated.
pub fn r_from_autocovariance(acov: &[f64], tau: f64, dt: f64) -> Result<f64> {
    check_positive("tau", tau)?;
    check_positive("dt", dt)?;
    if acov.is_empty() {
        return Err(Error::Empty("autocovariance"));
    }
    let m = window_samples(tau, dt);
    let mut double_sum = m as f64 * acov[0];
    for lag in 1..m.min(acov.len()) {
        double_sum += 2.0 * (m - lag) as f64 * acov[lag];
    }
    let integral = double_sum * dt * dt;
    Ok(if integral > 0.0 {
        tau * tau / integral
    } else {
        f64::INFINITY
    })
}
