use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::psd::{ColoredNoise, PsdTable};
use super::tunnel::{render_ideal_trace, sample_tunnel_times, LatentEvent, OpenUnit, TunnelParams};
use super::{gaussian_sigma_for_r, stream_rng, Label, Trace, TraceGrid};
use crate::error::{Error, Result};

/// Who assigned the labels of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    TrueLabels,
    BayesLabels,
}

/// Statistics of `δΨ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Gaussian { sigma: f64 },
    Colored { psd: PsdTable },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseSpec::Gaussian { sigma } if !(sigma.is_finite() && *sigma > 0.0) => Err(
                Error::invalid("noise.sigma", format!("must be > 0, got {sigma}")),
            ),
            _ => Ok(()),
        }
    }
}

/// How noise is attached to synthesized traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NoiseModel {
    /// Exactly the given statistics.
    Fixed { spec: NoiseSpec },
    /// The spectral shape of `spec`, rescaled to integrated SNR `r`.
    AtSnr { spec: NoiseSpec, r: f64 },
    /// Per-trace SNR drawn uniformly from `[r_min, r_max]`.
    SnrRange { spec: NoiseSpec, r_min: f64, r_max: f64 },
}

impl NoiseModel {
    pub fn gaussian_r(r: f64) -> Self {
        NoiseModel::AtSnr {
            spec: NoiseSpec::Gaussian { sigma: 1.0 },
            r,
        }
    }

    pub fn gaussian_r_range(r_min: f64, r_max: f64) -> Self {
        NoiseModel::SnrRange {
            spec: NoiseSpec::Gaussian { sigma: 1.0 },
            r_min,
            r_max,
        }
    }

    pub fn noiseless() -> Self {
        NoiseModel::Fixed {
            spec: NoiseSpec::Gaussian { sigma: 0.0 },
        }
    }

    fn validate(&self) -> Result<()> {
        let check_r = |name: &'static str, r: f64| {
            if r.is_finite() && r > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be > 0, got {r}")))
            }
        };
        match self {
            // sigma = 0 is accepted here as the noiseless limit
            NoiseModel::Fixed { spec: NoiseSpec::Gaussian { sigma } } => {
                if sigma.is_finite() && *sigma >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid("noise.sigma", format!("must be >= 0, got {sigma}")))
                }
            }
            NoiseModel::Fixed { .. } => Ok(()),
            NoiseModel::AtSnr { r, .. } => check_r("noise.r", *r),
            NoiseModel::SnrRange { r_min, r_max, .. } => {
                check_r("noise.r_min", *r_min)?;
                check_r("noise.r_max", *r_max)?;
                if r_min > r_max {
                    return Err(Error::invalid("noise.r_min", "must not exceed r_max"));
                }
                Ok(())
            }
        }
    }
}

/// Additive shift of the whole trace (both levels move, amplitude stays 2).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub offset: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(default)]
    pub tunnel: Option<TunnelParams>,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    #[serde(default)]
    pub perturb: PerturbationSpec,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Per-trace SNR when drawn from a range.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub r_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Traces on one grid with binary labels. Samples are stored row-major as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    grid: TraceGrid,
    samples: Vec<f32>,
    labels: Vec<Label>,
    provenance: Provenance,
    pub meta: DatasetMeta,
}

impl LabeledDataset {
    pub fn new(
        grid: TraceGrid,
        samples: Vec<f32>,
        labels: Vec<Label>,
        provenance: Provenance,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if samples.len() != labels.len() * grid.n() {
            return Err(Error::LengthMismatch {
                left: samples.len(),
                right: labels.len() * grid.n(),
            });
        }
        if let Some(k) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "dataset",
                format!("trace {} has a non-finite sample", k / grid.n()),
            ));
        }
        Ok(Self {
            grid,
            samples,
            labels,
            provenance,
            meta,
        })
    }

    pub fn from_traces(
        traces: &[Trace<f32>],
        labels: Vec<Label>,
        provenance: Provenance,
        meta: DatasetMeta,
    ) -> Result<Self> {
        let grid = traces.first().ok_or(Error::Empty("traces"))?.grid();
        if traces.iter().any(|t| t.grid() != grid) {
            return Err(Error::invalid("traces", "all traces must share one grid"));
        }
        let samples = traces.iter().flat_map(|t| t.samples().iter().copied()).collect();
        Self::new(grid, samples, labels, provenance, meta)
    }

    pub fn grid(&self) -> TraceGrid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn trace(&self, i: usize) -> &[f32] {
        let n = self.grid.n();
        &self.samples[i * n..(i + 1) * n]
    }

    pub fn traces(&self) -> std::slice::ChunksExact<'_, f32> {
        self.samples.chunks_exact(self.grid.n())
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Same traces, new labels (e.g. assigned by a classifier).
    pub fn relabeled(&self, labels: Vec<Label>, provenance: Provenance) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: self.len(),
            });
        }
        Ok(Self {
            labels,
            provenance,
            ..self.clone()
        })
    }

    pub fn up_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_up()).count()
    }

    /// Shift every sample by `offset`.
    pub fn shifted(&self, offset: f64) -> Self {
        let mut out = self.clone();
        let d = offset as f32;
        out.samples.iter_mut().for_each(|v| *v += d);
        out.meta.perturb.offset += offset;
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    pub up_fraction: f64,
    pub tunnel: TunnelParams,
    pub noise: NoiseModel,
    #[serde(default)]
    pub perturb: PerturbationSpec,
    pub grid: TraceGrid,
    pub seed: u64,
}

impl SynthConfig {
    /// Balanced Gaussian set at fixed SNR on the default grid with `Γ = 1`.
    pub fn gaussian(count: usize, r: f64, seed: u64) -> Self {
        Self {
            count,
            up_fraction: 0.5,
            tunnel: TunnelParams::default(),
            noise: NoiseModel::gaussian_r(r),
            perturb: PerturbationSpec::default(),
            grid: TraceGrid::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("count", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.up_fraction) {
            return Err(Error::invalid(
                "up_fraction",
                format!("must lie in [0, 1], got {}", self.up_fraction),
            ));
        }
        if !self.perturb.offset.is_finite() {
            return Err(Error::invalid("perturb.offset", "must be finite"));
        }
        self.noise.validate()
    }

    /// Evenly interleaved labels with exactly `floor(count * up_fraction)` UP entries.
    pub fn labels(&self) -> Vec<Label> {
        let f = self.up_fraction;
        (0..self.count)
            .map(|i| {
                let before = (i as f64 * f).floor();
                let after = ((i + 1) as f64 * f).floor();
                if after > before {
                    Label::Up
                } else {
                    Label::Down
                }
            })
            .collect()
    }
}

enum NoiseSource {
    None,
    White { sigma: f64 },
    WhiteRange { r_min: f64, r_max: f64, tau: f64, dt: f64 },
    Colored { gen: ColoredNoise },
    ColoredRange { unit: ColoredNoise, r_unit: f64, r_min: f64, r_max: f64 },
}

impl NoiseSource {
    fn build(model: &NoiseModel, tunnel: &TunnelParams, grid: TraceGrid) -> Result<Self> {
        let tau = tunnel.mean_high_time();
        let dt = grid.dt();
        Ok(match model {
            NoiseModel::Fixed { spec: NoiseSpec::Gaussian { sigma } } if *sigma == 0.0 => {
                NoiseSource::None
            }
            NoiseModel::Fixed { spec: NoiseSpec::Gaussian { sigma } } => {
                NoiseSource::White { sigma: *sigma }
            }
            NoiseModel::Fixed { spec: NoiseSpec::Colored { psd } } => NoiseSource::Colored {
                gen: ColoredNoise::new(psd, grid)?,
            },
            NoiseModel::AtSnr { spec: NoiseSpec::Gaussian { .. }, r } => NoiseSource::White {
                sigma: gaussian_sigma_for_r(*r, tau, dt)?,
            },
            NoiseModel::AtSnr { spec: NoiseSpec::Colored { psd }, r } => NoiseSource::Colored {
                gen: ColoredNoise::new(psd, grid)?.calibrated(*r, tau, dt)?,
            },
            NoiseModel::SnrRange { spec: NoiseSpec::Gaussian { .. }, r_min, r_max } => {
                NoiseSource::WhiteRange {
                    r_min: *r_min,
                    r_max: *r_max,
                    tau,
                    dt,
                }
            }
            NoiseModel::SnrRange { spec: NoiseSpec::Colored { psd }, r_min, r_max } => {
                let unit = ColoredNoise::new(psd, grid)?;
                let r_unit = unit.snr(tau, dt)?;
                if !r_unit.is_finite() {
                    return Err(Error::invalid("noise.psd", "all-zero PSD cannot be calibrated"));
                }
                NoiseSource::ColoredRange {
                    unit,
                    r_unit,
                    r_min: *r_min,
                    r_max: *r_max,
                }
            }
        })
    }

    fn fixed_r(model: &NoiseModel) -> Option<f64> {
        match model {
            NoiseModel::AtSnr { r, .. } => Some(*r),
            _ => None,
        }
    }

    /// Adds noise into `out`; returns the per-trace SNR when one was drawn.
    fn add<R: Rng>(&self, rng: &mut R, out: &mut [f64]) -> Option<f64> {
        let white = |rng: &mut R, out: &mut [f64], sigma: f64| {
            for v in out.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += sigma * z;
            }
        };
        match self {
            NoiseSource::None => None,
            NoiseSource::White { sigma } => {
                white(rng, out, *sigma);
                None
            }
            NoiseSource::WhiteRange { r_min, r_max, tau, dt } => {
                let r = uniform_in(rng, *r_min, *r_max);
                let sigma = (tau / (r * dt)).sqrt();
                white(rng, out, sigma);
                Some(r)
            }
            NoiseSource::Colored { gen } => {
                for (v, z) in out.iter_mut().zip(gen.generate(rng)) {
                    *v += z;
                }
                None
            }
            NoiseSource::ColoredRange { unit, r_unit, r_min, r_max } => {
                let r = uniform_in(rng, *r_min, *r_max);
                let scale = (r_unit / r).sqrt();
                for (v, z) in out.iter_mut().zip(unit.generate(rng)) {
                    *v += scale * z;
                }
                Some(r)
            }
        }
    }
}

fn uniform_in<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Deterministic per-trace generator shared by dataset and Rabi synthesis.
pub(crate) struct TraceSynth {
    grid: TraceGrid,
    tunnel: TunnelParams,
    noise: NoiseSource,
    offset: f64,
    seed: u64,
}

impl TraceSynth {
    pub(crate) fn new(
        grid: TraceGrid,
        tunnel: TunnelParams,
        noise: &NoiseModel,
        perturb: PerturbationSpec,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            grid,
            tunnel,
            noise: NoiseSource::build(noise, &tunnel, grid)?,
            offset: perturb.offset,
            seed,
        })
    }

    /// Trace `index` with the given label, in `f64`, plus the SNR drawn for it.
    pub(crate) fn render(&self, index: u64, label: Label) -> (Vec<f64>, LatentEvent, Option<f64>) {
        let mut rng = stream_rng(self.seed, index);
        let u1 = OpenUnit::sample(&mut rng);
        let u2 = OpenUnit::sample(&mut rng);
        let event = match label {
            Label::Up => sample_tunnel_times(&self.tunnel, u1, u2),
            Label::Down => LatentEvent::Down,
        };
        let mut x = render_ideal_trace::<f64>(&event, self.grid).into_samples();
        let r = self.noise.add(&mut rng, &mut x);
        if self.offset != 0.0 {
            x.iter_mut().for_each(|v| *v += self.offset);
        }
        (x, event, r)
    }
}

/// Labeled traces: ideal rendering, plus noise, plus offset.
///
/// Every trace draws from its own `(seed, index)` stream, so the output is
/// bit-identical for any thread count.
pub fn synthesize_dataset(cfg: &SynthConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let labels = cfg.labels();
    let synth = TraceSynth::new(cfg.grid, cfg.tunnel, &cfg.noise, cfg.perturb, cfg.seed)?;
    let n = cfg.grid.n();
    let mut samples = vec![0f32; cfg.count * n];
    let mut r_values = vec![f64::NAN; cfg.count];
    samples
        .par_chunks_mut(n)
        .zip(r_values.par_iter_mut())
        .enumerate()
        .for_each(|(i, (row, r_out))| {
            let (x, _, r) = synth.render(i as u64, labels[i]);
            for (dst, src) in row.iter_mut().zip(x) {
                *dst = src as f32;
            }
            if let Some(r) = r {
                *r_out = r;
            }
        });
    let drew_r = matches!(cfg.noise, NoiseModel::SnrRange { .. });
    let meta = DatasetMeta {
        tunnel: Some(cfg.tunnel),
        noise: Some(cfg.noise.clone()),
        perturb: cfg.perturb,
        seed: Some(cfg.seed),
        r_values: if drew_r { r_values } else { Vec::new() },
        note: NoiseSource::fixed_r(&cfg.noise).map(|r| format!("r={r}")),
    };
    LabeledDataset::new(cfg.grid, samples, labels, Provenance::TrueLabels, meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_balanced_and_interleaved() {
        let mut cfg = SynthConfig::gaussian(10, 100.0, 0);
        let labels = cfg.labels();
        assert_eq!(labels.iter().filter(|l| l.is_up()).count(), 5);
        assert_eq!(labels[0], Label::Down);
        assert_eq!(labels[1], Label::Up);
        cfg.up_fraction = 0.0;
        assert!(cfg.labels().iter().all(|l| *l == Label::Down));
        cfg.up_fraction = 1.0;
        assert!(cfg.labels().iter().all(|l| *l == Label::Up));
    }

    #[test]
    fn noiseless_offset_down_trace_is_constant() {
        let cfg = SynthConfig {
            count: 1,
            up_fraction: 0.0,
            tunnel: TunnelParams::default(),
            noise: NoiseModel::noiseless(),
            perturb: PerturbationSpec { offset: 0.3 },
            grid: TraceGrid::default(),
            seed: 1,
        };
        let ds = synthesize_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(ds.trace(0).iter().all(|&v| (v - -0.7).abs() < 1e-6));
    }

    #[test]
    fn r_range_records_per_trace_snr() {
        let cfg = SynthConfig {
            noise: NoiseModel::gaussian_r_range(1.0, 400.0),
            ..SynthConfig::gaussian(200, 1.0, 3)
        };
        let ds = synthesize_dataset(&cfg).unwrap();
        assert_eq!(ds.meta.r_values.len(), 200);
        assert!(ds.meta.r_values.iter().all(|r| (1.0..=400.0).contains(r)));
        let mean = ds.meta.r_values.iter().sum::<f64>() / 200.0;
        assert!((mean - 200.5).abs() < 30.0);
    }

    #[test]
    fn bad_config_rejected() {
        let mut cfg = SynthConfig::gaussian(0, 100.0, 0);
        assert!(synthesize_dataset(&cfg).is_err());
        cfg.count = 3;
        cfg.up_fraction = 1.5;
        assert!(synthesize_dataset(&cfg).is_err());
        cfg.up_fraction = 0.5;
        cfg.noise = NoiseModel::gaussian_r(-1.0);
        assert!(synthesize_dataset(&cfg).is_err());
    }

    #[test]
    fn same_seed_same_data_any_thread_count() {
        let cfg = SynthConfig::gaussian(64, 50.0, 77);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
        let a = one.install(|| synthesize_dataset(&cfg).unwrap());
        let b = many.install(|| synthesize_dataset(&cfg).unwrap());
        assert_eq!(a, b);
        let c = synthesize_dataset(&SynthConfig { seed: 78, ..cfg }).unwrap();
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn relabel_checks_length() {
        let ds = synthesize_dataset(&SynthConfig::gaussian(4, 100.0, 0)).unwrap();
        assert!(ds.relabeled(vec![Label::Up; 3], Provenance::BayesLabels).is_err());
        let re = ds.relabeled(vec![Label::Up; 4], Provenance::BayesLabels).unwrap();
        assert_eq!(re.provenance(), Provenance::BayesLabels);
        assert_eq!(re.up_count(), 4);
    }
}
