use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use ssrb::harness::{RabiParams, ReadoutConfig, SweepConfig};
use ssrb::nn::{NetConfig, TrainConfig};
use ssrb::signal::{load_psd, NoiseModel, NoiseSpec, PerturbationSpec};
use ssrb::{TraceGrid, TunnelParams};

use crate::error::{CliError, CliResult as Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub dt: f64,
    pub n: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { dt: 0.01, n: 1000 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TunnelSection {
    pub gamma_i: f64,
    pub gamma_f: f64,
}

impl Default for TunnelSection {
    fn default() -> Self {
        Self {
            gamma_i: 1.0,
            gamma_f: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    PsdFile,
    ModelPsd,
}

/// Noise statistics; exactly one of `r`, `r_min`/`r_max` or `sigma` picks the level.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub kind: NoiseKind,
    pub r: Option<f64>,
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    pub sigma: Option<f64>,
    pub psd_file: Option<PathBuf>,
    pub white: f64,
    pub pink: f64,
    pub lorentz_amp: f64,
    pub lorentz_fc: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            r: Some(100.0),
            r_min: None,
            r_max: None,
            sigma: None,
            psd_file: None,
            white: 1.0,
            pink: 0.0,
            lorentz_amp: 0.0,
            lorentz_fc: 1.0,
        }
    }
}

impl NoiseSection {
    pub fn resolve(&self) -> Result<NoiseModel> {
        let spec = match self.kind {
            NoiseKind::Gaussian => NoiseSpec::Gaussian {
                sigma: self.sigma.unwrap_or(1.0),
            },
            NoiseKind::PsdFile => {
                let path = self
                    .psd_file
                    .as_ref()
                    .ok_or_else(|| config_error("noise.psd_file", "required for kind psd_file"))?;
                NoiseSpec::Colored {
                    psd: load_psd(path).map_err(|e| config_error("noise.psd_file", format!("{}: {e}", path.display())))?,
                }
            }
            NoiseKind::ModelPsd => NoiseSpec::Colored {
                psd: ssrb::signal::model_psd(self.white, self.pink, (self.lorentz_amp, self.lorentz_fc))?,
            },
        };
        match (self.r, self.r_min, self.r_max, self.sigma) {
            (Some(r), None, None, None) => Ok(NoiseModel::AtSnr { spec, r }),
            (None, Some(r_min), Some(r_max), None) => Ok(NoiseModel::SnrRange { spec, r_min, r_max }),
            (None, None, None, Some(_)) if self.kind == NoiseKind::Gaussian => Ok(NoiseModel::Fixed { spec }),
            (None, None, None, None) if self.kind != NoiseKind::Gaussian => Ok(NoiseModel::Fixed { spec }),
            _ => Err(config_error(
                "noise.r",
                "set exactly one of `r`, both `r_min` and `r_max`, or (gaussian only) `sigma`",
            )),
        }
    }

    /// SNR a fixed-level Bayes filter should assume for this noise.
    pub fn nominal_r(&self) -> Option<f64> {
        self.r.or(match (self.r_min, self.r_max) {
            (Some(a), Some(b)) => Some(0.5 * (a + b)),
            _ => None,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationSection {
    pub offset: f64,
}

impl Default for PerturbationSection {
    fn default() -> Self {
        Self { offset: 0.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub count: usize,
    pub up_fraction: f64,
    /// Replace true labels by Bayes-filter verdicts assuming this SNR.
    pub bayes_label_r: Option<f64>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            count: 1000,
            up_fraction: 0.5,
            bayes_label_r: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub kernels: Vec<usize>,
    pub depths: Vec<usize>,
    pub pool: usize,
    pub dense: Vec<usize>,
    pub dropout: f64,
}

impl Default for NetSection {
    fn default() -> Self {
        let d = NetConfig::default();
        Self {
            kernels: d.kernels,
            depths: d.depths,
            pool: d.pool,
            dense: d.dense,
            dropout: d.dropout,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub methods: Vec<String>,
    pub test_size: usize,
    /// SNR of the offset and `Γ` sweeps.
    pub r: f64,
    pub r_values: Vec<f64>,
    pub offsets: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            methods: vec!["bayes".into()],
            test_size: 20_000,
            r: 100.0,
            r_values: vec![1.0, 10.0, 25.0, 100.0, 400.0],
            offsets: vec![-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75],
            gammas: vec![0.05, 0.25, 1.0, 2.0, 4.0],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RabiSection {
    pub methods: Vec<String>,
    pub visibility: f64,
    pub frequency: f64,
    pub decay_time: f64,
    pub offset: f64,
    pub points: usize,
    pub t_max: f64,
    pub traces_per_point: usize,
    pub median_rescale_pa: Option<f64>,
}

impl Default for RabiSection {
    fn default() -> Self {
        let d = RabiParams::default();
        Self {
            methods: vec!["bayes".into(), "truth".into()],
            visibility: d.visibility,
            frequency: d.frequency,
            decay_time: d.decay_time,
            offset: d.offset,
            points: 50,
            t_max: 3.92,
            traces_per_point: 250,
            median_rescale_pa: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingSection {
    pub methods: Vec<String>,
    pub batch: usize,
    pub warmup: usize,
    pub repetitions: usize,
}

impl Default for TimingSection {
    fn default() -> Self {
        Self {
            methods: vec!["bayes".into()],
            batch: 200,
            warmup: 1,
            repetitions: 5,
        }
    }
}

/// Everything a subcommand may read. Loaded from JSON, then overridden by
/// dotted `key=value` pairs; unknown keys are rejected.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub grid: GridSection,
    pub tunnel: TunnelSection,
    pub noise: NoiseSection,
    pub perturbation: PerturbationSection,
    pub dataset: DatasetSection,
    pub net: NetSection,
    pub training: TrainConfig,
    pub sweep: SweepSection,
    pub rabi: RabiSection,
    pub timing: TimingSection,
    /// Network files by name; method `netX` uses `models.X`.
    pub models: BTreeMap<String, PathBuf>,
}

pub fn config_error(key: &str, reason: impl Into<String>) -> CliError {
    CliError::usage(key, reason)
}

/// Set `key` (dotted path) in a JSON tree. `raw` is parsed as JSON when it
/// can be, else taken as a string.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_error(key, "empty path component"));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config_error(key, format!("`{}` is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_owned(), value);
            return Ok(());
        }
        node = obj.entry((*part).to_owned()).or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    unreachable!("loop returns on the last component")
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut tree = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| config_error("config", format!("{}: {e}", p.display())))?;
                let user: Value = serde_json::from_str(&text)
                    .map_err(|e| config_error("config", format!("{}: {e}", p.display())))?;
                // validate the file on its own first, so errors point at it
                serde_json::from_value::<RunConfig>(user.clone())
                    .map_err(|e| config_error("config", format!("{}: {e}", p.display())))?;
                user
            }
            None => Value::Object(Default::default()),
        };
        for (k, v) in overrides {
            apply_override(&mut tree, k, v)?;
        }
        let cfg: RunConfig = serde_json::from_value(tree).map_err(|e| {
            let key = overrides.last().map(|(k, _)| k.as_str()).unwrap_or("config");
            config_error(key, e.to_string())
        })?;
        cfg.validate().map_err(CliError::as_usage)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.tunnel()?;
        if !self.perturbation.offset.is_finite() {
            return Err(config_error("perturbation.offset", "must be finite"));
        }
        self.training.validate()?;
        if self.sweep.test_size < 2 {
            return Err(config_error("sweep.test_size", "must be >= 2"));
        }
        if self.rabi.points < 8 {
            return Err(config_error("rabi.points", "need >= 8 drive times"));
        }
        if self.rabi.traces_per_point == 0 {
            return Err(config_error("rabi.traces_per_point", "must be >= 1"));
        }
        self.rabi_params().validate()?;
        if !matches!(self.noise.kind, NoiseKind::PsdFile) {
            self.noise.resolve()?;
        }
        Ok(())
    }

    /// Seed from the config, else `SSRB_SEED`, else 0.
    pub fn seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var("SSRB_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| config_error("SSRB_SEED", format!("not an unsigned integer: `{v}`"))),
            Err(_) => Ok(0),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn grid(&self) -> Result<TraceGrid> {
        Ok(TraceGrid::new(self.grid.dt, self.grid.n)?)
    }

    pub fn tunnel(&self) -> Result<TunnelParams> {
        Ok(TunnelParams::new(self.tunnel.gamma_i, self.tunnel.gamma_f)?)
    }

    pub fn perturbation(&self) -> PerturbationSpec {
        PerturbationSpec {
            offset: self.perturbation.offset,
        }
    }

    pub fn net(&self) -> NetConfig {
        NetConfig {
            input_len: self.grid.n,
            kernels: self.net.kernels.clone(),
            depths: self.net.depths.clone(),
            pool: self.net.pool,
            dense: self.net.dense.clone(),
            dropout: self.net.dropout,
        }
    }

    pub fn sweep(&self) -> Result<SweepConfig> {
        Ok(SweepConfig {
            test_size: self.sweep.test_size,
            seed: self.seed()?,
            grid: self.grid()?,
            tunnel: self.tunnel()?,
            r: self.sweep.r,
        })
    }

    pub fn rabi_params(&self) -> RabiParams {
        let n = self.rabi.points.max(1);
        let step = if n > 1 { self.rabi.t_max / (n - 1) as f64 } else { 0.0 };
        RabiParams {
            visibility: self.rabi.visibility,
            frequency: self.rabi.frequency,
            decay_time: self.rabi.decay_time,
            offset: self.rabi.offset,
            times: (0..n).map(|i| i as f64 * step).collect(),
        }
    }

    pub fn readout(&self) -> Result<ReadoutConfig> {
        Ok(ReadoutConfig {
            grid: self.grid()?,
            tunnel: self.tunnel()?,
            noise: self.noise.resolve()?,
            perturb: self.perturbation(),
            median_rescale_pa: self.rabi.median_rescale_pa,
        })
    }
}
