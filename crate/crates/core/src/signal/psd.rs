use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::snr::{r_from_autocovariance, window_samples};
use super::TraceGrid;
use crate::error::{Error, Result};

pub const PSD_HEADER: &str = "freq_hz,psd";

/// One-sided power spectral density, `Ψ²/Hz` tabulated against `Hz`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdTable {
    rows: Vec<(f64, f64)>,
}

impl PsdTable {
    pub fn new(rows: Vec<(f64, f64)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("PSD table"));
        }
        for (i, &(f, s)) in rows.iter().enumerate() {
            if !f.is_finite() || (i == 0 && f < 0.0) {
                return Err(Error::invalid("psd.freq", format!("row {i}: bad frequency {f}")));
            }
            if i > 0 && f <= rows[i - 1].0 {
                return Err(Error::NonMonotoneFreq { line: i + 1 });
            }
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::invalid("psd.density", format!("row {i}: bad density {s}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[(f64, f64)] {
        &self.rows
    }

    pub fn max_freq(&self) -> f64 {
        self.rows[self.rows.len() - 1].0
    }

    /// Density at `f`; log-log interpolation between positive rows, linear otherwise.
    /// Below the first row the first density is held.
    pub fn eval(&self, f: f64) -> f64 {
        let rows = &self.rows;
        if f <= rows[0].0 {
            return rows[0].1;
        }
        let hi = rows.partition_point(|&(x, _)| x < f);
        if hi >= rows.len() {
            return rows[rows.len() - 1].1;
        }
        let (f0, s0) = rows[hi - 1];
        let (f1, s1) = rows[hi];
        if f == f1 {
            return s1;
        }
        if f0 > 0.0 && s0 > 0.0 && s1 > 0.0 {
            let w = (f / f0).ln() / (f1 / f0).ln();
            (s0.ln() + w * (s1 / s0).ln()).exp()
        } else {
            let w = (f - f0) / (f1 - f0);
            s0 + w * (s1 - s0)
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows.iter().map(|&(f, s)| (f, s * factor)).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(PSD_HEADER);
        out.push('\n');
        for (f, s) in &self.rows {
            let _ = writeln!(out, "{f},{s}");
        }
        out
    }
}

/// Parse the `freq_hz,psd` CSV format. Line numbers in errors are 1-based.
pub fn parse_psd(text: &str) -> Result<PsdTable> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == PSD_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `{PSD_HEADER}`, found `{}`", h.trim()),
            })
        }
        None => return Err(Error::Parse { line: 1, message: "empty file".into() }),
    }
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(Error::Parse {
                line: line_no,
                message: "expected two columns".into(),
            });
        };
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("`{}`: {e}", s.trim()),
            })
        };
        let (f, s) = (parse(a)?, parse(b)?);
        if let Some(&(prev, _)) = rows.last() {
            if f <= prev {
                return Err(Error::NonMonotoneFreq { line: line_no });
            }
        }
        if !f.is_finite() || f < 0.0 || !s.is_finite() || s < 0.0 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("values must be finite and non-negative, got ({f}, {s})"),
            });
        }
        rows.push((f, s));
    }
    PsdTable::new(rows)
}

pub fn load_psd(path: impl AsRef<Path>) -> Result<PsdTable> {
    parse_psd(&std::fs::read_to_string(path)?)
}

/// `S(f) = white + pink/f + amp / (1 + (f/f_c)²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPsd {
    pub white: f64,
    pub pink: f64,
    pub lorentz_amp: f64,
    pub lorentz_fc: f64,
}

impl ModelPsd {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("psd.white", self.white),
            ("psd.pink", self.pink),
            ("psd.lorentz_amp", self.lorentz_amp),
            ("psd.lorentz_fc", self.lorentz_fc),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, format!("must be >= 0, got {v}")));
            }
        }
        if self.lorentz_amp > 0.0 && self.lorentz_fc <= 0.0 {
            return Err(Error::invalid("psd.lorentz_fc", "must be > 0 when lorentz_amp > 0"));
        }
        Ok(())
    }

    pub fn density(&self, f: f64) -> f64 {
        let mut s = self.white;
        if self.pink > 0.0 {
            s += self.pink / f;
        }
        if self.lorentz_amp > 0.0 {
            s += self.lorentz_amp / (1.0 + (f / self.lorentz_fc).powi(2));
        }
        s
    }

    /// Tabulate on `10^(k/per_decade)` for `k` in `[lo_decade*per_decade, hi_decade*per_decade]`.
    pub fn tabulate(&self, lo_decade: i32, hi_decade: i32, per_decade: u32) -> Result<PsdTable> {
        self.validate()?;
        if hi_decade <= lo_decade || per_decade == 0 {
            return Err(Error::invalid("psd.grid", "empty frequency grid"));
        }
        let pd = per_decade as i32;
        let rows = (lo_decade * pd..=hi_decade * pd)
            .map(|k| {
                let f = 10f64.powf(k as f64 / pd as f64);
                (f, self.density(f))
            })
            .collect();
        PsdTable::new(rows)
    }
}

/// Model PSD tabulated from 1 mHz to 10 kHz, 40 points per decade.
pub fn model_psd(white: f64, pink: f64, lorentzian: (f64, f64)) -> Result<PsdTable> {
    ModelPsd {
        white,
        pink,
        lorentz_amp: lorentzian.0,
        lorentz_fc: lorentzian.1,
    }
    .tabulate(-3, 4, 40)
}

/// Spectral synthesizer for one grid: fixed bin amplitudes, random phases.
#[derive(Clone)]
pub struct ColoredNoise {
    amplitudes: Vec<f64>,
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ColoredNoise {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ColoredNoise")
            .field("n", &self.n)
            .field("bins", &self.amplitudes.len())
            .finish()
    }
}

impl ColoredNoise {
    /// Bin `k` (`1 <= k <= n/2`) gets amplitude `sqrt(S(k/(n dt)) * n / (2 dt))`.
    /// The DC bin covers `[0, df/2]` and is evaluated at `df/4`.
    pub fn new(psd: &PsdTable, grid: TraceGrid) -> Result<Self> {
        let n = grid.n();
        let dt = grid.dt();
        let nyquist = 0.5 / dt;
        if psd.max_freq() < nyquist * (1.0 - 1e-12) {
            return Err(Error::PsdRange {
                max_freq: psd.max_freq(),
                nyquist,
            });
        }
        let df = 1.0 / (n as f64 * dt);
        let amplitudes = (0..=n / 2)
            .map(|k| {
                let f = if k == 0 { 0.25 * df } else { k as f64 * df };
                (psd.eval(f) * n as f64 / (2.0 * dt)).sqrt()
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_inverse(n);
        Ok(Self { amplitudes, n, fft })
    }

    /// Number of random phases consumed per realization.
    pub fn phase_count(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.amplitudes {
            *a *= factor;
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.scale(factor);
        out
    }

    pub fn synthesize(&self, phases: &[f64]) -> Result<Vec<f64>> {
        if phases.len() != self.phase_count() {
            return Err(Error::LengthMismatch {
                left: phases.len(),
                right: self.phase_count(),
            });
        }
        let n = self.n;
        let mut spec = vec![Complex64::new(0.0, 0.0); n];
        for (k, (&a, &phi)) in self.amplitudes.iter().zip(phases).enumerate() {
            if k == 0 || 2 * k == n {
                // DC and Nyquist bins are real; sqrt(2)·cos keeps their expected power at a².
                spec[k] = Complex64::new(std::f64::consts::SQRT_2 * a * phi.cos(), 0.0);
            } else {
                let z = Complex64::from_polar(a, phi);
                spec[k] = z;
                spec[n - k] = z.conj();
            }
        }
        self.fft.process(&mut spec);
        let norm = 1.0 / n as f64;
        Ok(spec.into_iter().map(|z| z.re * norm).collect())
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let phases: Vec<f64> = (0..self.phase_count())
            .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
            .collect();
        self.synthesize(&phases).expect("phase count matches")
    }

    /// Circular autocovariance of the synthesized process for lags `0..=max_lag`.
    pub fn autocovariance(&self, max_lag: usize) -> Vec<f64> {
        let n = self.n as f64;
        (0..=max_lag)
            .map(|lag| {
                self.amplitudes
                    .iter()
                    .enumerate()
                    .map(|(k, &a)| {
                        if k == 0 {
                            a * a / (n * n)
                        } else if 2 * k == self.n {
                            a * a / (n * n) * if lag % 2 == 0 { 1.0 } else { -1.0 }
                        } else {
                            2.0 * a * a / (n * n)
                                * (std::f64::consts::TAU * (k * lag) as f64 / n).cos()
                        }
                    })
                    .sum()
            })
            .collect()
    }

    /// Per-sample variance of the synthesized noise.
    pub fn variance(&self) -> f64 {
        self.autocovariance(0)[0]
    }

    /// Integrated SNR of this noise over `[0, tau]` on a grid with step `dt`.
    pub fn snr(&self, tau: f64, dt: f64) -> Result<f64> {
        let m = window_samples(tau, dt);
        r_from_autocovariance(&self.autocovariance(m), tau, dt)
    }

    /// Rescale so that [`ColoredNoise::snr`] equals `target_r`.
    pub fn calibrated(&self, target_r: f64, tau: f64, dt: f64) -> Result<Self> {
        let current = self.snr(tau, dt)?;
        if !current.is_finite() {
            return Err(Error::invalid("noise.psd", "all-zero PSD cannot be calibrated"));
        }
        if !(target_r.is_finite() && target_r > 0.0) {
            return Err(Error::invalid("r", format!("must be > 0, got {target_r}")));
        }
        Ok(self.scaled((current / target_r).sqrt()))
    }
}

/// Single realization of colored noise from explicit per-bin phases.
pub fn synth_colored_noise(psd: &PsdTable, grid: TraceGrid, phases: &[f64]) -> Result<Vec<f64>> {
    ColoredNoise::new(psd, grid)?.synthesize(phases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{measure_r, stream_rng};
    use approx::assert_relative_eq;

    #[test]
    fn parses_two_rows() {
        let t = parse_psd("freq_hz,psd\n1,1.0\n10,0.1\n").unwrap();
        assert_eq!(t.rows(), &[(1.0, 1.0), (10.0, 0.1)]);
        assert_eq!(parse_psd(&t.to_csv()).unwrap(), t);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert!(matches!(parse_psd("freq,psd\n1,1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_psd("freq_hz,psd\n1,1\n2,abc\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_psd("freq_hz,psd\n1,1\n2,1\n2,1\n"),
            Err(Error::NonMonotoneFreq { line: 4 })
        ));
        assert!(matches!(parse_psd("freq_hz,psd\n1,1,3\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn model_tables() {
        let flat = model_psd(1.0, 0.0, (0.0, 0.0)).unwrap();
        assert!(flat.rows().iter().all(|&(_, s)| s == 1.0));
        let pink = model_psd(0.5, 1.0, (0.0, 0.0)).unwrap();
        assert_relative_eq!(pink.eval(10.0), 0.1 + 0.5, epsilon = 1e-12);
        assert!(model_psd(-1.0, 0.0, (0.0, 0.0)).is_err());
        assert!(model_psd(0.0, 0.0, (1.0, 0.0)).is_err());
    }

    #[test]
    fn interpolation_between_rows() {
        let t = PsdTable::new(vec![(1.0, 1.0), (100.0, 0.01)]).unwrap();
        assert_relative_eq!(t.eval(10.0), 0.1, epsilon = 1e-12);
        assert_relative_eq!(t.eval(0.5), 1.0);
        let lin = PsdTable::new(vec![(0.0, 0.0), (2.0, 2.0)]).unwrap();
        assert_relative_eq!(lin.eval(1.5), 1.5);
    }

    #[test]
    fn nyquist_coverage_required() {
        let grid = TraceGrid::default();
        let short = PsdTable::new(vec![(0.0, 1.0), (10.0, 1.0)]).unwrap();
        assert!(matches!(ColoredNoise::new(&short, grid), Err(Error::PsdRange { .. })));
    }

    #[test]
    fn zero_psd_gives_zero_noise() {
        let grid = TraceGrid::default();
        let zero = model_psd(0.0, 0.0, (0.0, 0.0)).unwrap();
        let noise = synth_colored_noise(&zero, grid, &vec![1.0; grid.n() / 2 + 1]).unwrap();
        assert!(noise.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flat_psd_per_sample_variance() {
        let grid = TraceGrid::default();
        let s0 = 0.02;
        let gen = ColoredNoise::new(&model_psd(s0, 0.0, (0.0, 0.0)).unwrap(), grid).unwrap();
        let want = s0 / (2.0 * grid.dt());
        let mut acc = 0.0;
        let reps = 1000;
        for i in 0..reps {
            let x = gen.generate(&mut stream_rng(5, i));
            acc += x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        }
        let var = acc / reps as f64;
        assert!((var / want - 1.0).abs() < 0.05, "var={var} want={want}");
        assert_relative_eq!(gen.variance(), want, max_relative = 1e-12);
    }

    #[test]
    fn flat_psd_snr_matches_white_noise_of_same_power() {
        // S0 = 2 dt σ² with σ = 1 behaves like white noise at r = 100.
        let grid = TraceGrid::default();
        let gen = ColoredNoise::new(&model_psd(0.02, 0.0, (0.0, 0.0)).unwrap(), grid).unwrap();
        let noise: Vec<Vec<f64>> = (0..4000).map(|i| gen.generate(&mut stream_rng(9, i))).collect();
        let r_hat = measure_r(&noise, 1.0, grid.dt()).unwrap();
        assert!((r_hat / 100.0 - 1.0).abs() < 0.10, "r_hat={r_hat}");
        let r_exact = gen.snr(1.0, grid.dt()).unwrap();
        assert!((r_exact / 100.0 - 1.0).abs() < 0.01, "r_exact={r_exact}");
    }

    #[test]
    fn calibration_hits_target_r() {
        let grid = TraceGrid::default();
        let gen = ColoredNoise::new(&model_psd(0.01, 0.05, (0.2, 0.5)).unwrap(), grid).unwrap();
        let cal = gen.calibrated(250.0, 1.0, grid.dt()).unwrap();
        assert_relative_eq!(cal.snr(1.0, grid.dt()).unwrap(), 250.0, max_relative = 1e-9);
        let noise: Vec<Vec<f64>> = (0..4000).map(|i| cal.generate(&mut stream_rng(3, i))).collect();
        let r_hat = measure_r(&noise, 1.0, grid.dt()).unwrap();
        assert!((r_hat / 250.0 - 1.0).abs() < 0.10, "r_hat={r_hat}");
    }

    /// Welch estimate: Hann-windowed half-overlapping segments, one-sided scaling.
    fn welch(x: &[f64], seg: usize, dt: f64) -> Vec<f64> {
        let win: Vec<f64> = (0..seg)
            .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / seg as f64).cos())
            .collect();
        let wss: f64 = win.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(seg);
        let mut acc = vec![0.0; seg / 2 + 1];
        let mut count = 0;
        let mut start = 0;
        while start + seg <= x.len() {
            let mut buf: Vec<Complex64> = x[start..start + seg]
                .iter()
                .zip(&win)
                .map(|(v, w)| Complex64::new(v * w, 0.0))
                .collect();
            fft.process(&mut buf);
            for (k, a) in acc.iter_mut().enumerate() {
                let one_sided = if k == 0 || 2 * k == seg { 1.0 } else { 2.0 };
                *a += one_sided * buf[k].norm_sqr() * dt / wss;
            }
            count += 1;
            start += seg / 2;
        }
        acc.iter().map(|a| a / count as f64).collect()
    }

    #[test]
    fn pink_noise_periodogram_matches_target_per_half_decade() {
        let grid = TraceGrid::new(0.01, 4096).unwrap();
        let model = ModelPsd {
            white: 1e-4,
            pink: 1e-3,
            lorentz_amp: 0.0,
            lorentz_fc: 1.0,
        };
        let table = model.tabulate(-3, 3, 40).unwrap();
        let gen = ColoredNoise::new(&table, grid).unwrap();
        let seg = 512;
        let mut avg = vec![0.0; seg / 2 + 1];
        let reps = 200;
        for i in 0..reps {
            let est = welch(&gen.generate(&mut stream_rng(21, i)), seg, grid.dt());
            for (a, e) in avg.iter_mut().zip(est) {
                *a += e / reps as f64;
            }
        }
        let df = 1.0 / (seg as f64 * grid.dt());
        // half-decade bands from 4 segment bins up to Nyquist
        let mut lo = 4.0 * df;
        let nyq = 0.5 / grid.dt();
        while lo * 10f64.sqrt() <= nyq {
            let hi = lo * 10f64.sqrt();
            let bins: Vec<usize> = (1..avg.len() - 1)
                .filter(|&k| (k as f64 * df) >= lo && (k as f64 * df) < hi)
                .collect();
            let est: f64 = bins.iter().map(|&k| avg[k]).sum::<f64>() / bins.len() as f64;
            let want: f64 =
                bins.iter().map(|&k| model.density(k as f64 * df)).sum::<f64>() / bins.len() as f64;
            assert!((est / want - 1.0).abs() < 0.10, "band [{lo:.3}, {hi:.3}): {est} vs {want}");
            lo = hi;
        }
    }
}
