use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::method::{Method, PointSpec};
use super::preprocess::rescale_trace;
use crate::bayes::{error_rate, ErrorRates};
use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, LeastSquares, LmOptions};
use crate::signal::{
    derive_seed, stream_rng, DatasetMeta, Label, LabeledDataset, NoiseModel, PerturbationSpec, Provenance,
    TraceGrid, TraceSynth, TunnelParams,
};

/// Damped Rabi oscillation `P(↑)(t) = V/2 · exp(-t/T_R) · cos(2πνt) + P_0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiParams {
    pub visibility: f64,
    pub frequency: f64,
    pub decay_time: f64,
    pub offset: f64,
    pub times: Vec<f64>,
}

impl Default for RabiParams {
    fn default() -> Self {
        Self {
            visibility: 0.8,
            frequency: 1.0,
            decay_time: 5.0,
            offset: 0.45,
            times: (0..50).map(|i| i as f64 * 0.08).collect(),
        }
    }
}

impl RabiParams {
    pub fn probability(&self, t: f64) -> f64 {
        0.5 * self.visibility * (-t / self.decay_time).exp() * (2.0 * PI * self.frequency * t).cos() + self.offset
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(Error::invalid("rabi.visibility", format!("must lie in [0, 1], got {}", self.visibility)));
        }
        if !(self.decay_time > 0.0) {
            return Err(Error::invalid("rabi.decay_time", "must be > 0"));
        }
        if self.times.is_empty() {
            return Err(Error::Empty("rabi drive times"));
        }
        for &t in &self.times {
            let p = self.probability(t);
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::ProbabilityRange { time: t, value: p });
            }
        }
        Ok(())
    }
}

/// How readout traces of a Rabi run are produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutConfig {
    #[serde(default)]
    pub grid: TraceGrid,
    #[serde(default)]
    pub tunnel: TunnelParams,
    pub noise: NoiseModel,
    #[serde(default)]
    pub perturb: PerturbationSpec,
    /// When set, traces go through a raw current with this peak height (pA)
    /// and are rescaled with the median low-level estimate.
    #[serde(default)]
    pub median_rescale_pa: Option<f64>,
}

impl ReadoutConfig {
    pub fn gaussian(r: f64) -> Self {
        Self {
            grid: TraceGrid::default(),
            tunnel: TunnelParams::default(),
            noise: NoiseModel::gaussian_r(r),
            perturb: PerturbationSpec::default(),
            median_rescale_pa: None,
        }
    }
}

/// Labeled readout traces at every drive time.
#[derive(Clone, Debug, PartialEq)]
pub struct RabiDataset {
    pub params: RabiParams,
    pub points: Vec<LabeledDataset>,
}

impl RabiDataset {
    pub fn times(&self) -> &[f64] {
        &self.params.times
    }

    pub fn true_fraction(&self) -> Vec<f64> {
        self.points.iter().map(|d| d.up_count() as f64 / d.len() as f64).collect()
    }
}

/// Each trace's state is `Bernoulli(P(↑)(t))`; its readout follows `readout`.
pub fn gen_rabi_dataset(
    rp: &RabiParams,
    traces_per_point: usize,
    readout: &ReadoutConfig,
    seed: u64,
) -> Result<RabiDataset> {
    rp.validate()?;
    if traces_per_point == 0 {
        return Err(Error::invalid("rabi.traces_per_point", "must be >= 1"));
    }
    let synth = TraceSynth::new(
        readout.grid,
        readout.tunnel,
        &readout.noise,
        readout.perturb,
        derive_seed(seed, "rabi-trace"),
    )?;
    let state_seed = derive_seed(seed, "rabi-state");
    let grid = readout.grid;
    let n = grid.n();
    let mut points = Vec::with_capacity(rp.times.len());
    for (p, &t) in rp.times.iter().enumerate() {
        let prob = rp.probability(t);
        let rows: Vec<(Vec<f32>, Label)> = (0..traces_per_point)
            .into_par_iter()
            .map(|j| {
                let g = (p * traces_per_point + j) as u64;
                let u: f64 = stream_rng(state_seed, g).random();
                let label = if u < prob { Label::Up } else { Label::Down };
                let (x, _, _) = synth.render(g, label);
                let x = match readout.median_rescale_pa {
                    Some(h) => {
                        let raw: Vec<f64> = x.iter().map(|v| 0.5 * (v + 1.0) * h).collect();
                        rescale_trace(&raw, h, grid)?.into_samples()
                    }
                    None => x,
                };
                Ok((x.into_iter().map(|v| v as f32).collect(), label))
            })
            .collect::<Result<_>>()?;
        let mut samples = Vec::with_capacity(traces_per_point * n);
        let mut labels = Vec::with_capacity(traces_per_point);
        for (x, l) in rows {
            samples.extend_from_slice(&x);
            labels.push(l);
        }
        let meta = DatasetMeta {
            tunnel: Some(readout.tunnel),
            noise: Some(readout.noise.clone()),
            perturb: readout.perturb,
            seed: Some(seed),
            note: Some(format!("rabi point {p}, drive time {t}")),
            ..DatasetMeta::default()
        };
        points.push(LabeledDataset::new(grid, samples, labels, Provenance::TrueLabels, meta)?);
    }
    Ok(RabiDataset {
        params: rp.clone(),
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RabiFit {
    pub visibility: f64,
    pub frequency: f64,
    /// `inf` when the fitted decay rate is not positive.
    pub decay_time: f64,
    pub offset: f64,
    pub visibility_se: f64,
    pub frequency_se: f64,
    pub decay_time_se: f64,
    pub offset_se: f64,
    pub ssr: f64,
    pub points: usize,
}

impl RabiFit {
    pub fn eval(&self, t: f64) -> f64 {
        0.5 * self.visibility * (-t / self.decay_time).exp() * (2.0 * PI * self.frequency * t).cos() + self.offset
    }
}

struct DampedCosine<'a> {
    t: &'a [f64],
    y: &'a [f64],
}

impl LeastSquares for DampedCosine<'_> {
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for ((o, &t), &y) in out.iter_mut().zip(self.t).zip(self.y) {
            *o = 0.5 * p[0] * (-p[2] * t).exp() * (2.0 * PI * p[1] * t).cos() + p[3] - y;
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut [f64]) {
        for (row, &t) in out.chunks_exact_mut(4).zip(self.t) {
            let e = (-p[2] * t).exp();
            let w = 2.0 * PI * p[1] * t;
            let (s, c) = w.sin_cos();
            row[0] = 0.5 * e * c;
            row[1] = -0.5 * p[0] * e * s * 2.0 * PI * t;
            row[2] = -0.5 * p[0] * t * e * c;
            row[3] = 1.0;
        }
    }

    fn len(&self) -> usize {
        self.t.len()
    }
}

/// Peak of the periodogram of `y - mean(y)` over `(0, Nyquist]` on an
/// eight-fold oversampled grid. Returns `(frequency, |S|, peak/median power)`.
fn periodogram_peak(t: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let span = t.iter().copied().fold(f64::NEG_INFINITY, f64::max) - t.iter().copied().fold(f64::INFINITY, f64::min);
    let mut gaps: Vec<f64> = t.windows(2).map(|w| (w[1] - w[0]).abs()).filter(|g| *g > 0.0).collect();
    gaps.sort_by(f64::total_cmp);
    let spacing = gaps.get(gaps.len() / 2).copied().unwrap_or(span);
    let df = 1.0 / (8.0 * span);
    let count = ((0.5 / spacing) / df).floor().max(1.0) as usize;
    let mut power = Vec::with_capacity(count);
    let mut best = (0.0, 0.0, -1.0);
    for j in 1..=count {
        let f = j as f64 * df;
        let (mut re, mut im) = (0.0, 0.0);
        for (&ti, &yi) in t.iter().zip(y) {
            let (s, c) = (2.0 * PI * f * ti).sin_cos();
            re += (yi - mean) * c;
            im -= (yi - mean) * s;
        }
        let pw = re * re + im * im;
        if pw > best.2 {
            best = (f, pw.sqrt(), pw);
        }
        power.push(pw);
    }
    power.sort_by(f64::total_cmp);
    let median = power[power.len() / 2];
    let scale = y.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    if best.1 <= 1e-12 * scale * y.len() as f64 {
        // flat input: at most rounding noise around the mean
        return (best.0, best.1, 0.0);
    }
    let ratio = if median > 0.0 { best.2 / median } else if best.2 > 0.0 { f64::INFINITY } else { 0.0 };
    (best.0, best.1, ratio)
}

/// Least-squares damped-cosine fit, seeded from the periodogram peak.
pub fn fit_rabi(times: &[f64], p_hat: &[f64]) -> Result<RabiFit> {
    if times.len() != p_hat.len() {
        return Err(Error::LengthMismatch {
            left: times.len(),
            right: p_hat.len(),
        });
    }
    if times.len() < 8 {
        return Err(Error::invalid("rabi.times", format!("need >= 8 points, got {}", times.len())));
    }
    if times.iter().chain(p_hat).any(|v| !v.is_finite()) {
        return Err(Error::invalid("rabi.p_hat", "non-finite value"));
    }
    let (nu0, mag, ratio) = periodogram_peak(times, p_hat);
    if !(ratio >= 2.0) {
        return Err(Error::AmbiguousFrequency { ratio });
    }
    let span = times.iter().copied().fold(f64::NEG_INFINITY, f64::max) - times.iter().copied().fold(f64::INFINITY, f64::min);
    if nu0 * span < 1.0 {
        return Err(Error::invalid(
            "rabi.times",
            format!("drive times span {span}, less than one period of the dominant frequency {nu0}"),
        ));
    }
    let n = times.len() as f64;
    let mean = p_hat.iter().sum::<f64>() / n;
    // |S| ≈ A·N/2 for amplitude A = V/2
    let v0 = 4.0 * mag / n;
    let problem = DampedCosine { t: times, y: p_hat };
    let lm = levenberg_marquardt(&problem, &[v0, nu0, 0.0, mean], LmOptions::default())?;
    let se = lm.std_errors();
    let (v, nu, k, p0) = (lm.params[0], lm.params[1], lm.params[2], lm.params[3]);
    let (decay_time, decay_time_se) = if k > 0.0 { (1.0 / k, se[2] / (k * k)) } else { (f64::INFINITY, f64::NAN) };
    Ok(RabiFit {
        visibility: v,
        frequency: nu,
        decay_time,
        offset: p0,
        visibility_se: se[0],
        frequency_se: se[1],
        decay_time_se,
        offset_se: se[3],
        ssr: lm.ssr,
        points: times.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRabi {
    pub method: String,
    pub p_hat: Vec<f64>,
    /// `p_hat` minus the baseline method's `p_hat`.
    pub delta: Vec<f64>,
    pub fit: RabiFit,
    /// Errors against the true states, pooled over all drive times.
    pub errors: ErrorRates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RabiComparison {
    pub times: Vec<f64>,
    pub baseline: String,
    pub methods: Vec<MethodRabi>,
}

impl RabiComparison {
    pub fn get(&self, method: &str) -> Option<&MethodRabi> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// `time,method,p_up,delta` per drive time and method.
    pub fn write_curves_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,method,p_up,delta")?;
        for m in &self.methods {
            for ((t, p), d) in self.times.iter().zip(&m.p_hat).zip(&m.delta) {
                writeln!(w, "{t},{},{p:.6},{d:.6}", m.method)?;
            }
        }
        Ok(())
    }

    pub fn write_fits_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "method,visibility,visibility_se,frequency,frequency_se,decay_time,offset,offset_se,eps_up,eps_down")?;
        for m in &self.methods {
            let f = &m.fit;
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                m.method,
                f.visibility,
                f.visibility_se,
                f.frequency,
                f.frequency_se,
                f.decay_time,
                f.offset,
                f.offset_se,
                m.errors.eps_up,
                m.errors.eps_down
            )?;
        }
        Ok(())
    }
}

/// Classify every point with every method and fit each `P(↑)` curve.
/// The baseline for `delta` is `bayes` when present, else the first method.
pub fn compare_rabi(methods: &[Method], data: &RabiDataset, point: &PointSpec) -> Result<RabiComparison> {
    if methods.is_empty() {
        return Err(Error::Empty("method list"));
    }
    let times = data.times().to_vec();
    let mut results = Vec::with_capacity(methods.len());
    for m in methods {
        let mut p_hat = Vec::with_capacity(times.len());
        let mut all_pred = Vec::new();
        let mut all_truth = Vec::new();
        for ds in &data.points {
            let pred = m.classify(ds, point)?;
            p_hat.push(pred.iter().filter(|l| l.is_up()).count() as f64 / pred.len() as f64);
            all_pred.extend(pred);
            all_truth.extend_from_slice(ds.labels());
        }
        let fit = fit_rabi(&times, &p_hat)?;
        let errors = error_rate(&all_pred, &all_truth)?;
        results.push((m.name(), p_hat, fit, errors));
    }
    let base_idx = results.iter().position(|r| r.0 == "bayes").unwrap_or(0);
    let base = results[base_idx].1.clone();
    let baseline = results[base_idx].0.clone();
    Ok(RabiComparison {
        times,
        baseline,
        methods: results
            .into_iter()
            .map(|(method, p_hat, fit, errors)| MethodRabi {
                delta: p_hat.iter().zip(&base).map(|(a, b)| a - b).collect(),
                method,
                p_hat,
                fit,
                errors,
            })
            .collect(),
    })
}
