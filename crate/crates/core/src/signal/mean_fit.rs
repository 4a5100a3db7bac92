use serde::{Deserialize, Serialize};

use super::{TraceGrid, TunnelParams};
use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, LeastSquares, LmOptions};

/// `e^{-t Γ_f} (1 - e^{-t Γ_i})`, proportional to the mean readout current.
pub fn unoccupied_probability(t: f64, gamma_i: f64, gamma_f: f64) -> f64 {
    (-t * gamma_f).exp() * -(-t * gamma_i).exp_m1()
}

/// `P(t_i <= t < t_f)` for sequential exponential tunnelling.
///
/// This has the same shape as [`unoccupied_probability`] with the fast rate
/// `Γ_i` replaced by `Γ_i - Γ_f`: `Γ_i e^{-Γ_f t} (1 - e^{-(Γ_i-Γ_f) t}) / (Γ_i - Γ_f)`.
pub fn sequential_mean(t: f64, params: &TunnelParams) -> f64 {
    let (gi, gf) = (params.gamma_i(), params.gamma_f());
    gi * (-gf * t).exp() * h_kappa(gi - gf, t).0
}

/// `h = (1 - e^{-κt})/κ` and `∂h/∂κ`, with a series near `κt = 0`.
fn h_kappa(kappa: f64, t: f64) -> (f64, f64) {
    let x = kappa * t;
    if x.abs() < 1e-2 {
        // h = Σ (-κ)^j t^{j+1}/(j+1)!,  ∂h/∂κ = Σ_{j>=1} j (-1)^j κ^{j-1} t^{j+1}/(j+1)!
        let mut h = 0.0;
        let mut dh = 0.0;
        let mut term = t; // (-κ)^j t^{j+1}/(j+1)!
        let mut dterm = -t * t / 2.0; // j=1 term of ∂h/∂κ
        for j in 0..8 {
            h += term;
            term *= -kappa * t / (j as f64 + 2.0);
            if j >= 1 {
                dh += dterm;
                dterm *= -(j as f64 + 1.0) * kappa * t / (j as f64 * (j as f64 + 2.0));
            }
        }
        dh += dterm;
        (h, dh)
    } else {
        let h = -(-x).exp_m1() / kappa;
        let dh = (t * (-x).exp() - h) / kappa;
        (h, dh)
    }
}

/// Sample-wise mean of equally long traces.
pub fn mean_trace<'a, I>(traces: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut acc: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for tr in traces {
        if count == 0 {
            acc = vec![0.0; tr.len()];
        } else if tr.len() != acc.len() {
            return Err(Error::LengthMismatch {
                left: tr.len(),
                right: acc.len(),
            });
        }
        for (a, &v) in acc.iter_mut().zip(tr) {
            *a += v as f64;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Empty("mean trace input"));
    }
    acc.iter_mut().for_each(|a| *a /= count as f64);
    Ok(acc)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeanFit {
    pub gamma_i: f64,
    pub gamma_f: f64,
    pub gamma_i_se: f64,
    pub gamma_f_se: f64,
    /// Multiplier of `e^{-Γ_f t}(1 - e^{-(Γ_i-Γ_f) t}) / (Γ_i - Γ_f)`.
    pub amplitude: f64,
    pub baseline: f64,
    pub ssr: f64,
    pub points: usize,
}

impl MeanFit {
    pub fn eval(&self, t: f64) -> f64 {
        let kappa = self.gamma_i - self.gamma_f;
        self.amplitude * (-self.gamma_f * t).exp() * h_kappa(kappa, t).0 + self.baseline
    }
}

struct MeanProblem<'a> {
    t: &'a [f64],
    y: &'a [f64],
}

// params: [A, B, Γ_f, κ]
impl LeastSquares for MeanProblem<'_> {
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let t = self.t[i];
            *o = p[0] * (-p[2] * t).exp() * h_kappa(p[3], t).0 + p[1] - self.y[i];
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut [f64]) {
        for (i, &t) in self.t.iter().enumerate() {
            let e = (-p[2] * t).exp();
            let (h, dh) = h_kappa(p[3], t);
            let row = &mut out[4 * i..4 * i + 4];
            row[0] = e * h;
            row[1] = 1.0;
            row[2] = -t * p[0] * e * h;
            row[3] = p[0] * e * dh;
        }
    }

    fn len(&self) -> usize {
        self.t.len()
    }
}

fn linear_amp_offset(basis: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = y.len() as f64;
    let (sx, sy) = (basis.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx = basis.iter().map(|b| b * b).sum::<f64>();
    let sxy = basis.iter().zip(y).map(|(b, v)| b * v).sum::<f64>();
    let det = n * sxx - sx * sx;
    if det.abs() < 1e-300 {
        return (0.0, sy / n, f64::INFINITY);
    }
    let a = (n * sxy - sx * sy) / det;
    let b = (sy - a * sx) / n;
    let ssr = basis.iter().zip(y).map(|(x, v)| (a * x + b - v).powi(2)).sum();
    (a, b, ssr)
}

/// Fit the mean of UP traces and recover both tunnel rates.
///
/// The mean has the shape `A e^{-Γ_f t}(1 - e^{-κ t}) + B`; the slow decay is
/// reported as `Γ_f` and the fast rate as `Γ_i = Γ_f + κ`, with standard
/// errors propagated from the fit covariance.
pub fn fit_mean_trace<'a, I>(up_traces: I, grid: TraceGrid) -> Result<MeanFit>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let y = mean_trace(up_traces)?;
    if y.len() != grid.n() {
        return Err(Error::GridMismatch {
            have: y.len(),
            want: grid.n(),
        });
    }
    let t: Vec<f64> = grid.times().collect();
    let total = grid.t_total();

    // coarse scan for a starting point, amplitude and offset solved linearly
    let rates: Vec<f64> = (0..=40).map(|k| 0.3 / total * 1000f64.powf(k as f64 / 40.0)).collect();
    let mut best = (f64::INFINITY, [0.0; 4]);
    let mut basis = vec![0.0; t.len()];
    for &gf in &rates {
        for &kappa in std::iter::once(&0.0).chain(rates.iter()) {
            for (b, &tt) in basis.iter_mut().zip(&t) {
                *b = (-gf * tt).exp() * h_kappa(kappa, tt).0;
            }
            let (a, off, ssr) = linear_amp_offset(&basis, &y);
            if ssr < best.0 {
                best = (ssr, [a, off, gf, kappa]);
            }
        }
    }
    let fit = levenberg_marquardt(&MeanProblem { t: &t, y: &y }, &best.1, LmOptions::default())?;
    let p = &fit.params;
    let se = fit.std_errors();
    let (mut gamma_f, mut kappa) = (p[2], p[3]);
    let amplitude = p[0];
    let mut gi_var = fit.cov(2, 2) + fit.cov(3, 3) + 2.0 * fit.cov(2, 3);
    let mut gf_var = se[2] * se[2];
    if kappa < 0.0 {
        // the shape is symmetric in the two rates; keep the slower one as Γ_f
        let gi = gamma_f + kappa;
        std::mem::swap(&mut gi_var, &mut gf_var);
        kappa = -kappa;
        gamma_f = gi;
    }
    if gamma_f <= 0.0 || !gamma_f.is_finite() {
        return Err(Error::FitDiverged(format!("non-physical rate Γ_f = {gamma_f}")));
    }
    Ok(MeanFit {
        gamma_i: gamma_f + kappa,
        gamma_f,
        gamma_i_se: gi_var.max(0.0).sqrt(),
        gamma_f_se: gf_var.max(0.0).sqrt(),
        amplitude,
        baseline: p[1],
        ssr: fit.ssr,
        points: t.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{synthesize_dataset, NoiseModel, PerturbationSpec, SynthConfig};
    use approx::assert_relative_eq;

    fn up_set(tunnel: TunnelParams, count: usize, seed: u64) -> crate::signal::LabeledDataset {
        synthesize_dataset(&SynthConfig {
            count,
            up_fraction: 1.0,
            tunnel,
            noise: NoiseModel::noiseless(),
            perturb: PerturbationSpec::default(),
            grid: TraceGrid::default(),
            seed,
        })
        .unwrap()
    }

    #[test]
    fn printed_shape_peaks_at_ln2_for_equal_rates() {
        // d/dt [e^{-t} - e^{-2t}] = 0  =>  t = ln 2
        let ts: Vec<f64> = (0..200_000).map(|i| i as f64 * 1e-5).collect();
        let argmax = ts
            .iter()
            .copied()
            .max_by(|a, b| unoccupied_probability(*a, 1.0, 1.0).total_cmp(&unoccupied_probability(*b, 1.0, 1.0)))
            .unwrap();
        assert!((argmax - 2f64.ln()).abs() < 1e-4);
    }

    #[test]
    fn series_and_closed_form_agree() {
        for kappa in [-0.5, -1e-3, 1e-6, 1e-3, 0.5] {
            for t in [0.3, 1.0, 2.0] {
                let (h, dh) = h_kappa(kappa, t);
                let want_h = -(-kappa * t as f64).exp_m1() / kappa;
                assert_relative_eq!(h, want_h, max_relative = 1e-9);
                let eps = 1e-6;
                let fd = (h_kappa(kappa + eps, t).0 - h_kappa(kappa - eps, t).0) / (2.0 * eps);
                assert_relative_eq!(dh, fd, max_relative = 1e-5, epsilon = 1e-9);
            }
        }
        assert_relative_eq!(h_kappa(0.0, 1.5).0, 1.5);
    }

    #[test]
    fn mean_of_noiseless_up_traces_within_monte_carlo_bands() {
        let tunnel = TunnelParams::new(1.0 / 0.2, 1.0 / 2.2).unwrap();
        let count = 100_000;
        let ds = up_set(tunnel, count, 8);
        let mean = mean_trace(ds.traces()).unwrap();
        for (k, m) in mean.iter().enumerate() {
            let p = sequential_mean(ds.grid().time(k), &tunnel);
            let want = -1.0 + 2.0 * p;
            let band = 3.0 * 2.0 * (p * (1.0 - p) / count as f64).sqrt() + 1e-9;
            assert!((m - want).abs() <= band, "k={k}: {m} vs {want}");
        }
    }

    #[test]
    fn recovers_fig1c_rates() {
        let tunnel = TunnelParams::new(1.0 / 0.2, 1.0 / 2.2).unwrap();
        let ds = up_set(tunnel, 100_000, 2);
        let fit = fit_mean_trace(ds.traces(), ds.grid()).unwrap();
        assert!((fit.gamma_i / tunnel.gamma_i() - 1.0).abs() < 0.02, "{fit:?}");
        assert!((fit.gamma_f / tunnel.gamma_f() - 1.0).abs() < 0.02, "{fit:?}");
        assert!(fit.gamma_i_se > 0.0 && fit.gamma_f_se > 0.0);
    }

    #[test]
    fn equal_rates_fit_peaks_at_one() {
        let ds = up_set(TunnelParams::default(), 20_000, 5);
        let fit = fit_mean_trace(ds.traces(), ds.grid()).unwrap();
        // near Γ_i = Γ_f only the rate sum is determined to first order
        assert!(((fit.gamma_i + fit.gamma_f) / 2.0 - 1.0).abs() < 0.03, "{fit:?}");
        let peak = (0..1000)
            .map(|k| k as f64 * 0.01)
            .max_by(|a, b| fit.eval(*a).total_cmp(&fit.eval(*b)))
            .unwrap();
        assert!((peak - 1.0).abs() < 0.05, "peak at {peak}");
    }

    #[test]
    fn empty_input_is_an_error() {
        let none: Vec<&[f32]> = Vec::new();
        assert!(matches!(fit_mean_trace(none, TraceGrid::default()), Err(Error::Empty(_))));
    }
}
