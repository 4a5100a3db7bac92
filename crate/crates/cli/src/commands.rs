use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use serde_json::json;
use ssrb::bayes::{batch_verdicts, error_rate, relabel_with_bayes, write_verdicts_csv, BayesModel, Verdict};
use ssrb::harness::{
    compare_rabi, gen_rabi_dataset, sweep_error_vs_r, sweep_gamma, sweep_offset, time_classifiers, Method,
    PointSpec, RunManifest, SweepResult,
};
use ssrb::nn::{load_model, save_model, train_with_progress};
use ssrb::signal::format::{load_dataset, save_dataset};
use ssrb::signal::{fit_mean_trace, model_psd, synthesize_dataset, SynthConfig};
use ssrb::{Label, LabeledDataset, Net32, Regime};

use crate::config::{config_error, RunConfig};
use crate::error::{CliError, CliResult as Result};
use crate::Common;

/// A validated run: configuration, resolved seed, and the files it touched.
struct Session {
    command: &'static str,
    cfg: RunConfig,
    seed: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

fn json_arg<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain value")
}

/// Overrides shared by several flag sets.
#[derive(Default)]
struct Overrides(Vec<(String, String)>);

impl Overrides {
    fn set<T: serde::Serialize>(&mut self, key: &str, v: Option<T>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key.to_owned(), json_arg(&v)));
        }
        self
    }

    fn list<T: serde::Serialize>(&mut self, key: &str, v: &[T]) -> &mut Self {
        if !v.is_empty() {
            self.0.push((key.to_owned(), json_arg(&v)));
        }
        self
    }

    fn models(&mut self, pairs: &[String]) -> Result<&mut Self> {
        for p in pairs {
            let (name, path) = p
                .split_once('=')
                .ok_or_else(|| config_error("--model", format!("expected NAME=PATH, got `{p}`")))?;
            self.0.push((format!("models.{name}"), json_arg(&path)));
        }
        Ok(self)
    }
}

fn start(command: &'static str, common: &Common, flags: Overrides) -> Result<Option<Session>> {
    let mut overrides = Vec::new();
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| config_error("--set", format!("expected KEY=VALUE, got `{s}`")))?;
        overrides.push((k.trim().to_owned(), v.to_owned()));
    }
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(dir) = &common.out_dir {
        overrides.push(("out_dir".into(), json_arg(dir)));
    }
    overrides.extend(flags.0);
    let cfg = RunConfig::load(common.config.as_deref(), &overrides)?;
    let seed = cfg.seed()?;
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(config_error("--threads", "must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_error("--threads", e.to_string()))?;
    }
    if common.dry_run {
        let resolved = json!({ "command": command, "seed": seed, "config": cfg });
        // a closed pipe is not a failure of the run
        let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&resolved).expect("serializable config"));
        return Ok(None);
    }
    Ok(Some(Session {
        command,
        cfg,
        seed,
        inputs: Vec::new(),
        outputs: Vec::new(),
    }))
}

impl Session {
    fn out_path(&self, explicit: &Option<PathBuf>, default_name: &str) -> Result<PathBuf> {
        let path = explicit.clone().unwrap_or_else(|| self.cfg.out_dir().join(default_name));
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| runtime_key(e.into(), &parent.display().to_string()))?;
        }
        Ok(path)
    }

    fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_owned());
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_owned());
    }

    /// Write `<first output>.manifest.json`.
    fn finish(self) -> Result<()> {
        let Some(first) = self.outputs.first() else {
            return Ok(());
        };
        let mut manifest = RunManifest::new(
            self.command,
            self.seed,
            serde_json::to_value(&self.cfg).expect("serializable config"),
        );
        for p in &self.inputs {
            manifest.add_input(p).map_err(|e| runtime_key(e.into(), &p.display().to_string()))?;
        }
        for p in &self.outputs {
            manifest.add_output(p).map_err(|e| runtime_key(e.into(), &p.display().to_string()))?;
        }
        let mut name = first.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        manifest.write(&path).map_err(|e| runtime_key(e.into(), &path.display().to_string()))?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn point(&self) -> Result<PointSpec> {
        Ok(PointSpec {
            r: self.cfg.noise.nominal_r().unwrap_or(self.cfg.sweep.r),
            tunnel: self.cfg.tunnel()?,
            grid: self.cfg.grid()?,
        })
    }

    /// Resolve method names: `bayes`, `bayes_r<R>`, `truth`,
    /// `channel_<eps_up>_<eps_down>`, or `net<X>` with a file under `models.X`.
    fn methods(&mut self, names: &[String]) -> Result<Vec<Method>> {
        if names.is_empty() {
            return Err(config_error("methods", "empty method list"));
        }
        let mut out = Vec::with_capacity(names.len());
        for name in names {
            let bad = || config_error("methods", format!("unknown method `{name}`"));
            let m = if name == "bayes" {
                Method::BayesMatched
            } else if name == "truth" {
                Method::Truth
            } else if let Some(r) = name.strip_prefix("bayes_r") {
                let r: f64 = r.parse().map_err(|_| bad())?;
                if !(r.is_finite() && r > 0.0) {
                    return Err(bad());
                }
                Method::BayesFixed {
                    r,
                    tunnel: self.cfg.tunnel()?,
                }
            } else if let Some(rest) = name.strip_prefix("channel_") {
                let (a, b) = rest.split_once('_').ok_or_else(bad)?;
                let (eps_up, eps_down): (f64, f64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if !((0.0..=1.0).contains(&eps_up) && (0.0..=1.0).contains(&eps_down)) {
                    return Err(bad());
                }
                Method::Channel {
                    eps_up,
                    eps_down,
                    seed: self.seed,
                }
            } else if let Some(key) = name.strip_prefix("net") {
                let path = self.cfg.models.get(key).cloned().ok_or_else(|| {
                    config_error(&format!("models.{key}"), format!("no model file for method `{name}`"))
                })?;
                let model: Net32 = load_model(&path).map_err(|e| runtime_key(e.into(), &path.display().to_string()))?;
                self.input(&path);
                Method::Network {
                    name: name.clone(),
                    model: Arc::new(model),
                }
            } else {
                return Err(bad());
            };
            out.push(m);
        }
        Ok(out)
    }
}

fn runtime_key(e: CliError, key: &str) -> CliError {
    e.with_key(key)
}

fn load_data(s: &mut Session, path: &Path) -> Result<LabeledDataset> {
    let ds = load_dataset(path).map_err(|e| runtime_key(e.into(), &path.display().to_string()))?;
    s.input(path);
    Ok(ds)
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    count: Option<usize>,
    /// SNR of every trace.
    #[arg(long)]
    r: Option<f64>,
    /// Per-trace SNR drawn uniformly from `[r_min, r_max]`.
    #[arg(long, requires = "r_max")]
    r_min: Option<f64>,
    #[arg(long, requires = "r_min")]
    r_max: Option<f64>,
    /// Fixed Gaussian noise level.
    #[arg(long, conflicts_with_all = ["r", "r_min"])]
    sigma: Option<f64>,
    #[arg(long)]
    offset: Option<f64>,
    /// Colored noise from a `freq_hz,psd` file.
    #[arg(long)]
    psd: Option<PathBuf>,
    /// Colored noise from the model spectrum in the config.
    #[arg(long, conflicts_with = "psd")]
    model_psd: bool,
    #[arg(long)]
    gamma_i: Option<f64>,
    #[arg(long)]
    gamma_f: Option<f64>,
    #[arg(long)]
    up_fraction: Option<f64>,
    /// Replace the true labels by Bayes verdicts assuming this SNR.
    #[arg(long)]
    bayes_label_r: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn noise_flags(o: &mut Overrides, r: Option<f64>, r_min: Option<f64>, r_max: Option<f64>, sigma: Option<f64>) {
    if r.is_some() || r_min.is_some() || sigma.is_some() {
        o.0.push(("noise.r".into(), "null".into()));
    }
    o.set("noise.r", r).set("noise.r_min", r_min).set("noise.r_max", r_max).set("noise.sigma", sigma);
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut o = Overrides::default();
    noise_flags(&mut o, a.r, a.r_min, a.r_max, a.sigma);
    if let Some(p) = &a.psd {
        o.set("noise.kind", Some("psd_file")).set("noise.psd_file", Some(p));
    }
    if a.model_psd {
        o.set("noise.kind", Some("model_psd"));
    }
    o.set("dataset.count", a.count)
        .set("perturbation.offset", a.offset)
        .set("tunnel.gamma_i", a.gamma_i)
        .set("tunnel.gamma_f", a.gamma_f)
        .set("dataset.up_fraction", a.up_fraction)
        .set("dataset.bayes_label_r", a.bayes_label_r);
    let Some(mut s) = start("synth", &a.common, o)? else {
        return Ok(());
    };
    let cfg = &s.cfg;
    if let Some(p) = &cfg.noise.psd_file {
        s.inputs.push(p.clone());
    }
    let cfg = &s.cfg;
    let synth_cfg = SynthConfig {
        count: cfg.dataset.count,
        up_fraction: cfg.dataset.up_fraction,
        tunnel: cfg.tunnel()?,
        noise: cfg.noise.resolve()?,
        perturb: cfg.perturbation(),
        grid: cfg.grid()?,
        seed: s.seed,
    };
    println!("synthesizing {} traces", synth_cfg.count);
    let mut ds = synthesize_dataset(&synth_cfg).map_err(|e| CliError::from(e).with_key("dataset"))?;
    if let Some(r) = cfg.dataset.bayes_label_r {
        let model = BayesModel::<f64>::for_snr(synth_cfg.tunnel, r, synth_cfg.grid)?;
        let relabeled = relabel_with_bayes(&ds, &model)?;
        let e = error_rate(relabeled.labels(), ds.labels())?;
        println!(
            "relabeled with Bayes at r={r}: eps_up {:.4}, eps_down {:.4}",
            e.eps_up, e.eps_down
        );
        ds = relabeled;
    }
    let out = s.out_path(&a.out, "dataset.ssrd")?;
    save_dataset(&out, &ds).map_err(|e| runtime_key(e.into(), &out.display().to_string()))?;
    println!("wrote {} ({} traces, {} UP)", out.display(), ds.len(), ds.up_count());
    s.output(&out);
    s.finish()
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    regime: Regime,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.set("training.max_epochs", a.epochs);
    let Some(mut s) = start("train", &a.common, o)? else {
        return Ok(());
    };
    let ds = load_data(&mut s, &a.data)?;
    let mut net = s.cfg.net();
    net.input_len = ds.grid().n();
    let mut tc = s.cfg.training.clone();
    tc.seed = s.seed;
    println!("training network {} on {} traces", a.regime, ds.len());
    let model: Net32 = train_with_progress(&ds, &net, &tc, a.regime, |e| {
        println!(
            "epoch {:3}  train_loss {:.5}  val_loss {:.5}  val_acc {:.4}",
            e.epoch, e.train_loss, e.val_loss, e.val_accuracy
        );
    })?;
    println!("best epoch {}", model.meta.best_epoch);
    let out = s.out_path(&a.out, &format!("net{}.ssnn", a.regime))?;
    save_model(&out, &model).map_err(|e| runtime_key(e.into(), &out.display().to_string()))?;
    println!("wrote {}", out.display());
    s.output(&out);
    s.finish()
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[command(flatten)]
    common: Common,
    /// Network file; without it the Bayes filter is used.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// SNR assumed by the Bayes filter (default: `noise.r`).
    #[arg(long, conflicts_with = "model")]
    r: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn classify(a: ClassifyArgs) -> Result<()> {
    let Some(mut s) = start("classify", &a.common, Overrides::default())? else {
        return Ok(());
    };
    let ds = load_data(&mut s, &a.data)?;
    let verdicts: Vec<Verdict<f64>> = match &a.model {
        Some(path) => {
            let model: Net32 = load_model(path).map_err(|e| runtime_key(e.into(), &path.display().to_string()))?;
            s.input(path);
            if model.input_len() != ds.grid().n() {
                return Err(CliError::from(ssrb::Error::GridMismatch {
                    have: ds.grid().n(),
                    want: model.input_len(),
                })
                .with_key(path.display().to_string()));
            }
            model
                .forward(ds.samples())?
                .into_iter()
                .map(|p| {
                    let (down, up) = (f64::from(p[0]).max(f64::MIN_POSITIVE), f64::from(p[1]).max(f64::MIN_POSITIVE));
                    Verdict {
                        label: if p[1] > p[0] { Label::Up } else { Label::Down },
                        llr: up.ln() - down.ln(),
                        loglik_up: up.ln(),
                        loglik_down: down.ln(),
                    }
                })
                .collect()
        }
        None => {
            let r = a
                .r
                .or(s.cfg.noise.nominal_r())
                .ok_or_else(|| config_error("noise.r", "the Bayes filter needs an SNR"))?;
            let tunnel = ds.meta.tunnel.unwrap_or(s.cfg.tunnel()?);
            let model = BayesModel::<f64>::for_snr(tunnel, r, ds.grid())?;
            batch_verdicts(&ds, &model)?
        }
    };
    let labels: Vec<Label> = verdicts.iter().map(|v| v.label).collect();
    let e = error_rate(&labels, ds.labels())?;
    println!(
        "{} traces: eps_up {:.4}, eps_down {:.4}, mean {:.4} (against stored labels)",
        ds.len(),
        e.eps_up,
        e.eps_down,
        e.mean_error
    );
    let out = s.out_path(&a.out, "verdicts.csv")?;
    let file = fs::File::create(&out).map_err(|e| runtime_key(e.into(), &out.display().to_string()))?;
    write_verdicts_csv(BufWriter::new(file), &verdicts)?;
    println!("wrote {}", out.display());
    s.output(&out);
    s.finish()
}

#[derive(Args, Debug)]
pub struct SweepCommon {
    /// Comma-separated methods: bayes, bayes_r<R>, truth, net<X>, channel_<up>_<down>.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Network file for method `net<NAME>`. Repeatable.
    #[arg(long = "model", value_name = "NAME=PATH")]
    models: Vec<String>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SweepCommon {
    fn overrides(&self) -> Result<Overrides> {
        let mut o = Overrides::default();
        o.list("sweep.methods", &self.methods).set("sweep.test_size", self.test_size).models(&self.models)?;
        Ok(o)
    }
}

fn run_sweep(
    command: &'static str,
    common: &Common,
    sc: &SweepCommon,
    extra: impl FnOnce(&mut Overrides),
    sweep: impl FnOnce(&[Method], &RunConfig, &ssrb::harness::SweepConfig) -> ssrb::Result<SweepResult>,
) -> Result<()> {
    let mut o = sc.overrides()?;
    extra(&mut o);
    let Some(mut s) = start(command, common, o)? else {
        return Ok(());
    };
    let names = s.cfg.sweep.methods.clone();
    let methods = s.methods(&names)?;
    let sweep_cfg = s.cfg.sweep()?;
    println!("{command}: {} methods, {} traces per point", methods.len(), sweep_cfg.test_size);
    let res = sweep(&methods, &s.cfg, &sweep_cfg)?;
    for r in &res.rows {
        println!(
            "{} = {:<8} {:<12} mean_error {:.4}  [{:.4}, {:.4}]",
            res.axis_name, r.axis, r.method, r.mean_error, r.ci_low, r.ci_high
        );
    }
    let out = s.out_path(&sc.out, &format!("{command}.csv"))?;
    fs::write(&out, res.to_csv()).map_err(|e| runtime_key(e.into(), &out.display().to_string()))?;
    println!("wrote {}", out.display());
    s.output(&out);
    s.finish()
}

#[derive(Args, Debug)]
pub struct SweepRArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sweep: SweepCommon,
    /// Comma-separated SNR values.
    #[arg(long, value_delimiter = ',')]
    r: Vec<f64>,
}

pub fn sweep_r(a: SweepRArgs) -> Result<()> {
    run_sweep(
        "sweep-r",
        &a.common,
        &a.sweep,
        |o| {
            o.list("sweep.r_values", &a.r);
        },
        |m, cfg, sc| sweep_error_vs_r(m, &cfg.sweep.r_values, sc),
    )
}

#[derive(Args, Debug)]
pub struct SweepOffsetArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sweep: SweepCommon,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    offsets: Vec<f64>,
    /// SNR of the test set.
    #[arg(long)]
    r: Option<f64>,
}

pub fn sweep_offset_cmd(a: SweepOffsetArgs) -> Result<()> {
    run_sweep(
        "sweep-offset",
        &a.common,
        &a.sweep,
        |o| {
            o.list("sweep.offsets", &a.offsets).set("sweep.r", a.r);
        },
        |m, cfg, sc| sweep_offset(m, &cfg.sweep.offsets, sc),
    )
}

#[derive(Args, Debug)]
pub struct SweepGammaArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sweep: SweepCommon,
    /// Comma-separated ratios `Γ_f / Γ_i`.
    #[arg(long, value_delimiter = ',')]
    gammas: Vec<f64>,
    #[arg(long)]
    r: Option<f64>,
}

pub fn sweep_gamma_cmd(a: SweepGammaArgs) -> Result<()> {
    run_sweep(
        "sweep-gamma",
        &a.common,
        &a.sweep,
        |o| {
            o.list("sweep.gammas", &a.gammas).set("sweep.r", a.r);
        },
        |m, cfg, sc| sweep_gamma(m, &cfg.sweep.gammas, sc),
    )
}

#[derive(Args, Debug)]
pub struct RabiArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long = "model", value_name = "NAME=PATH")]
    models: Vec<String>,
    #[arg(long)]
    traces_per_point: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    r: Option<f64>,
    /// Curves CSV (`time,method,p_up,delta`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fit table CSV.
    #[arg(long)]
    fits: Option<PathBuf>,
}

pub fn rabi(a: RabiArgs) -> Result<()> {
    let mut o = Overrides::default();
    noise_flags(&mut o, a.r, None, None, None);
    o.list("rabi.methods", &a.methods)
        .set("rabi.traces_per_point", a.traces_per_point)
        .set("rabi.points", a.points)
        .models(&a.models)?;
    let Some(mut s) = start("rabi", &a.common, o)? else {
        return Ok(());
    };
    let names = s.cfg.rabi.methods.clone();
    let methods = s.methods(&names)?;
    let rp = s.cfg.rabi_params();
    let readout = s.cfg.readout()?;
    println!("rabi: {} drive times x {} traces", rp.times.len(), s.cfg.rabi.traces_per_point);
    let data = gen_rabi_dataset(&rp, s.cfg.rabi.traces_per_point, &readout, s.seed)?;
    let cmp = compare_rabi(&methods, &data, &s.point()?)?;
    for m in &cmp.methods {
        println!(
            "{:<12} V = {:.4} +- {:.4}  eps_up {:.4}  eps_down {:.4}",
            m.method, m.fit.visibility, m.fit.visibility_se, m.errors.eps_up, m.errors.eps_down
        );
    }
    let curves = s.out_path(&a.out, "rabi_curves.csv")?;
    let fits = s.out_path(&a.fits, "rabi_fits.csv")?;
    let file = fs::File::create(&curves).map_err(|e| runtime_key(e.into(), &curves.display().to_string()))?;
    cmp.write_curves_csv(BufWriter::new(file))?;
    let file = fs::File::create(&fits).map_err(|e| runtime_key(e.into(), &fits.display().to_string()))?;
    cmp.write_fits_csv(BufWriter::new(file))?;
    println!("wrote {} and {}", curves.display(), fits.display());
    s.output(&curves);
    s.output(&fits);
    s.finish()
}

#[derive(Args, Debug)]
pub struct TimeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long = "model", value_name = "NAME=PATH")]
    models: Vec<String>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Timing report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn time(a: TimeArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.list("timing.methods", &a.methods)
        .set("timing.batch", a.batch)
        .set("timing.warmup", a.warmup)
        .set("timing.repetitions", a.repetitions)
        .models(&a.models)?;
    let Some(mut s) = start("time", &a.common, o)? else {
        return Ok(());
    };
    let names = s.cfg.timing.methods.clone();
    let methods = s.methods(&names)?;
    let point = s.point()?;
    let batch = synthesize_dataset(&SynthConfig {
        count: s.cfg.timing.batch,
        up_fraction: 0.5,
        tunnel: point.tunnel,
        noise: s.cfg.noise.resolve()?,
        perturb: s.cfg.perturbation(),
        grid: point.grid,
        seed: s.seed,
    })
    .map_err(|e| CliError::from(e).with_key("timing.batch"))?;
    let report = time_classifiers(&methods, &batch, &point, s.cfg.timing.warmup, s.cfg.timing.repetitions)
        .map_err(|e| CliError::from(e).with_key("timing.repetitions"))?;
    for m in &report.methods {
        println!(
            "{:<12} median {:9.2} us/trace  p95 {:9.2}  ({} traces x {})",
            m.method, m.median_us, m.p95_us, m.traces, m.repetitions
        );
    }
    let out = s.out_path(&a.out, "timing.json")?;
    let mut text = serde_json::to_string_pretty(&report).expect("serializable report");
    text.push('\n');
    fs::write(&out, text).map_err(|e| runtime_key(e.into(), &out.display().to_string()))?;
    println!("wrote {}", out.display());
    s.output(&out);
    s.finish()
}

#[derive(Args, Debug)]
pub struct PsdModelArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    white: Option<f64>,
    #[arg(long)]
    pink: Option<f64>,
    #[arg(long)]
    lorentz_amp: Option<f64>,
    #[arg(long)]
    lorentz_fc: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn psd_model(a: PsdModelArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.set("noise.white", a.white)
        .set("noise.pink", a.pink)
        .set("noise.lorentz_amp", a.lorentz_amp)
        .set("noise.lorentz_fc", a.lorentz_fc);
    let Some(mut s) = start("psd-model", &a.common, o)? else {
        return Ok(());
    };
    let n = &s.cfg.noise;
    let table = model_psd(n.white, n.pink, (n.lorentz_amp, n.lorentz_fc)).map_err(|e| CliError::from(e).as_usage())?;
    let out = s.out_path(&a.out, "psd.csv")?;
    fs::write(&out, table.to_csv()).map_err(|e| runtime_key(e.into(), &out.display().to_string()))?;
    println!("wrote {} ({} rows)", out.display(), table.rows().len());
    s.output(&out);
    s.finish()
}

#[derive(Args, Debug)]
pub struct FitMeanArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    /// Fit result JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn fit_mean(a: FitMeanArgs) -> Result<()> {
    let Some(mut s) = start("fit-mean", &a.common, Overrides::default())? else {
        return Ok(());
    };
    let ds = load_data(&mut s, &a.data)?;
    let up = ds.traces().zip(ds.labels()).filter(|(_, l)| l.is_up()).map(|(t, _)| t);
    let fit = fit_mean_trace(up, ds.grid())?;
    println!(
        "gamma_i = {:.4} +- {:.4}, gamma_f = {:.4} +- {:.4}",
        fit.gamma_i, fit.gamma_i_se, fit.gamma_f, fit.gamma_f_se
    );
    let out = s.out_path(&a.out, "fit_mean.json")?;
    let mut text = serde_json::to_string_pretty(&fit).expect("serializable fit");
    text.push('\n');
    fs::write(&out, text).map_err(|e| runtime_key(e.into(), &out.display().to_string()))?;
    println!("wrote {}", out.display());
    s.output(&out);
    s.finish()
}
