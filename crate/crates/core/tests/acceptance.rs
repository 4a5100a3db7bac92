//! Acceptance run: one PASS/FAIL line per criterion on stdout, progress on
//! stderr. Trained networks are cached under the cargo target temp dir,
//! keyed by everything that determines them; `SSRB_RETRAIN=1` ignores the
//! cache. `SSRB_STRICT=1` makes any FAIL a non-zero exit.

use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::ThreadPoolBuilder;
use ssrb::bayes::{exact_marginal_loglik, hmm_forward, relabel_with_bayes, BayesModel};
use ssrb::harness::{
    compare_rabi, fit_rabi, gen_rabi_dataset, median_rescaled, sha256_hex, sweep_error_vs_r, sweep_gamma,
    sweep_offset, time_classifiers, Method, PointSpec, RabiParams, ReadoutConfig, SweepConfig, SweepResult,
    SweepRow,
};
use ssrb::nn::{load_model, save_model, train_with_progress, write_model};
use ssrb::signal::format::write_dataset;
use ssrb::signal::{
    gaussian_sigma_for_r, measure_r, model_psd, stream_rng, synthesize_dataset, LabeledDataset, NoiseModel,
    NoiseSpec, PerturbationSpec, SynthConfig,
};
use ssrb::{Label, Net32, Net64, NetConfig, Regime, TraceGrid, TrainConfig, TunnelParams};

const SEED: u64 = 20_240_611;
const TEST_SIZE: usize = 20_000;
const B_TRAIN: usize = 50_000;
const CD_TRAIN: usize = 100_000;
const EPOCHS: usize = 30;
const PATIENCE: usize = 6;
const DROPOUT: f64 = 0.2;

/// Colored-noise readout of the Rabi comparison.
const PSD_WHITE: f64 = 1.0;
const PSD_PINK: f64 = 1.0;
const PSD_LORENTZ: (f64, f64) = (10.0, 1.0);
const RABI_R: f64 = 30.0;
const RABI_TRACES: usize = 5_000;
const PEAK_PA: f64 = 200.0;

struct Verdicts(Vec<(usize, bool, String)>);

impl Verdicts {
    fn record(&mut self, n: usize, pass: bool, detail: String) {
        println!("criterion {n:2}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
        self.0.push((n, pass, detail));
    }
}

fn progress(msg: impl AsRef<str>) {
    eprintln!("[acceptance] {}", msg.as_ref());
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn row<'a>(res: &'a SweepResult, axis: f64, method: &str) -> &'a SweepRow {
    res.row(axis, method).unwrap_or_else(|| panic!("no row {method} at {axis}"))
}

fn overlap(a: &SweepRow, b: &SweepRow) -> bool {
    a.ci_low <= b.ci_high && b.ci_low <= a.ci_high
}

fn cache_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-models");
    std::fs::create_dir_all(&dir).expect("cache dir");
    dir
}

/// Train (or reload) a network; returns it with its training wall time.
fn trained(
    name: &str,
    key: &str,
    regime: Regime,
    tc: &TrainConfig,
    data: impl FnOnce() -> LabeledDataset,
) -> (Net32, f64) {
    let net = net_config();
    let digest = sha256_hex(format!("{name}|{key}|{net:?}|{tc:?}|{regime}").as_bytes());
    let path = cache_dir().join(format!("{name}-{}.ssnn", &digest[..16]));
    if std::env::var_os("SSRB_RETRAIN").is_none() {
        if let Ok(m) = load_model::<f32>(&path) {
            let secs = m
                .meta
                .note
                .as_deref()
                .and_then(|n| n.strip_prefix("train_seconds="))
                .and_then(|v| v.parse().ok())
                .unwrap_or(f64::NAN);
            progress(format!("{name}: reusing {} (trained in {secs:.0} s)", path.display()));
            return (m, secs);
        }
    }
    let ds = data();
    progress(format!("{name}: training on {} traces", ds.len()));
    let t0 = Instant::now();
    let mut model: Net32 = train_with_progress(&ds, &net, tc, regime, |e| {
        progress(format!(
            "{name} epoch {:2}: train {:.4} val {:.4} acc {:.4} ({:.0} s)",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.val_accuracy,
            t0.elapsed().as_secs_f64()
        ))
    })
    .expect("training");
    let secs = t0.elapsed().as_secs_f64();
    model.meta.note = Some(format!("train_seconds={secs:.1}"));
    save_model(&path, &model).expect("cache model");
    (model, secs)
}

fn net_config() -> NetConfig {
    NetConfig {
        dropout: DROPOUT,
        ..NetConfig::default()
    }
}

fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: EPOCHS,
        patience: PATIENCE,
        seed,
        ..TrainConfig::default()
    }
}

fn c1_oracle(v: &mut Verdicts) {
    let t0 = Instant::now();
    let tunnel = TunnelParams::default();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for r in [1.0, 25.0, 400.0] {
        for (j, n) in [20usize, 50, 100, 200].into_iter().enumerate() {
            let grid = TraceGrid::new(0.02, n).unwrap();
            let model = BayesModel::<f64>::for_snr(tunnel, r, grid).unwrap();
            let ds = synthesize_dataset(&SynthConfig {
                grid,
                ..SynthConfig::gaussian(25, r, SEED + j as u64)
            })
            .unwrap();
            for x in ds.traces() {
                let fast = hmm_forward(x, &model).unwrap();
                let slow = exact_marginal_loglik(x, &model).unwrap();
                for (a, b) in [(fast.loglik_up, slow.loglik_up), (fast.loglik_down, slow.loglik_down)] {
                    worst = worst.max((a - b).abs() / b.abs().max(1e-300));
                }
                count += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    v.record(
        1,
        worst <= 1e-3 && secs < 60.0,
        format!("{count} traces (n <= 200, r in 1/25/400): worst relative log-likelihood gap {worst:.2e}, {secs:.1} s"),
    );
}

fn c2_matched_bayes(v: &mut Verdicts) {
    let cfg = SweepConfig {
        test_size: TEST_SIZE,
        seed: SEED,
        ..SweepConfig::default()
    };
    let res = sweep_error_vs_r(&[Method::BayesMatched], &[400.0], &cfg).unwrap();
    let b = row(&res, 400.0, "bayes");
    v.record(
        2,
        b.ci_high < 0.01,
        format!("matched Bayes at r=400: {} [{}, {}] on {} traces", pct(b.mean_error), pct(b.ci_low), pct(b.ci_high), TEST_SIZE),
    );
}

fn train_b() -> (Net32, f64) {
    let sc = SynthConfig {
        noise: NoiseModel::gaussian_r_range(1.0, 400.0),
        ..SynthConfig::gaussian(B_TRAIN, 1.0, SEED + 100)
    };
    trained("netB", &format!("{sc:?}"), Regime::B, &train_config(SEED + 101), || {
        synthesize_dataset(&sc).unwrap()
    })
}

fn c3_c4_r_sweeps(v: &mut Verdicts, net_b: &Method, train_secs: f64) {
    let cfg = SweepConfig {
        test_size: TEST_SIZE,
        seed: SEED + 1,
        ..SweepConfig::default()
    };
    let fixed = Method::BayesFixed {
        r: 200.0,
        tunnel: TunnelParams::default(),
    };
    progress("r sweep");
    let res = sweep_error_vs_r(
        &[Method::BayesMatched, fixed, net_b.clone()],
        &[25.0, 100.0, 400.0, 1000.0, 4000.0],
        &cfg,
    )
    .unwrap();
    eprint!("{}", res.to_csv());

    let mut gaps = Vec::new();
    let mut ok = train_secs <= 3600.0;
    for r in [25.0, 100.0, 400.0] {
        let (b, n) = (row(&res, r, "bayes"), row(&res, r, "netB"));
        let gap = n.mean_error - b.mean_error;
        ok &= gap.abs() <= 0.02;
        gaps.push(format!("r={r}: netB {} vs Bayes {}", pct(n.mean_error), pct(b.mean_error)));
    }
    v.record(
        3,
        ok,
        format!("{}; trained on {B_TRAIN} traces in {:.0} s", gaps.join(", "), train_secs),
    );

    let (m400, f400) = (row(&res, 400.0, "bayes"), row(&res, 400.0, "bayes_r200"));
    let worse_at_400 = f400.ci_low > m400.ci_high;
    let saturated = [400.0, 1000.0, 4000.0].iter().all(|&r| row(&res, r, "bayes_r200").ci_low > 0.01);
    let excess = row(&res, 100.0, "bayes_r200").mean_error - row(&res, 100.0, "netB").mean_error;
    let excess_ok = (0.01..=0.03).contains(&excess);
    v.record(
        4,
        worse_at_400 && saturated && excess_ok,
        format!(
            "fixed r=200 Bayes at r=400 {} vs matched {} ({}); floor at r=400/1000/4000 {}/{}/{} ({}); excess over netB at r=100 {:+.2} pp (want 2 +- 1, {})",
            pct(f400.mean_error),
            pct(m400.mean_error),
            if worse_at_400 { "worse" } else { "not worse" },
            pct(f400.mean_error),
            pct(row(&res, 1000.0, "bayes_r200").mean_error),
            pct(row(&res, 4000.0, "bayes_r200").mean_error),
            if saturated { "above 1 %" } else { "not above 1 %" },
            100.0 * excess,
            if excess_ok { "ok" } else { "out of band" },
        ),
    );
}

fn c5_offsets(v: &mut Verdicts, net_b: &Method) {
    let cfg = SweepConfig {
        test_size: TEST_SIZE,
        seed: SEED + 2,
        ..SweepConfig::default()
    };
    progress(format!("offset sweep at r={}", cfg.r));
    let offsets = [-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75];
    let res = sweep_offset(&[Method::BayesMatched, net_b.clone()], &offsets, &cfg).unwrap();
    eprint!("{}", res.to_csv());
    let base = row(&res, 0.0, "netB").mean_error;
    let worst_nn = [-0.5, -0.25, 0.25, 0.5]
        .iter()
        .map(|&o| row(&res, o, "netB").mean_error - base)
        .fold(f64::NEG_INFINITY, f64::max);
    let bayes_0 = row(&res, 0.0, "bayes").mean_error;
    let (plus, minus) = (row(&res, 0.5, "bayes").mean_error - bayes_0, row(&res, -0.5, "bayes").mean_error - bayes_0);
    v.record(
        5,
        worst_nn <= 0.01 && plus.max(minus) >= 0.05,
        format!(
            "r={}: netB worst increase over |offset| <= 0.5 {:+.2} pp; Bayes at offset +0.5 {:+.2} pp, at -0.5 {:+.2} pp",
            cfg.r,
            100.0 * worst_nn,
            100.0 * plus,
            100.0 * minus
        ),
    );
}

fn c6_gamma(v: &mut Verdicts, net_b: &Method) {
    let cfg = SweepConfig {
        test_size: TEST_SIZE,
        seed: SEED + 3,
        ..SweepConfig::default()
    };
    progress(format!("gamma sweep at r={}", cfg.r));
    let res = sweep_gamma(&[Method::BayesMatched, net_b.clone()], &[0.05, 1.0, 2.0, 4.0], &cfg).unwrap();
    eprint!("{}", res.to_csv());
    let mut ok = true;
    let mut parts = Vec::new();
    for m in ["bayes", "netB"] {
        let rows: Vec<&SweepRow> = [1.0, 2.0, 4.0].iter().map(|&g| row(&res, g, m)).collect();
        let same = rows.iter().all(|a| rows.iter().all(|b| overlap(a, b)));
        let low = row(&res, 0.05, m);
        let rises = low.mean_error > rows[0].ci_high;
        ok &= same && rises;
        parts.push(format!(
            "{m}: G=1/2/4 {}/{}/{} ({}), G=0.05 {} ({})",
            pct(rows[0].mean_error),
            pct(rows[1].mean_error),
            pct(rows[2].mean_error),
            if same { "CIs overlap" } else { "CIs separate" },
            pct(low.mean_error),
            if rises { "rises" } else { "does not rise" }
        ));
    }
    v.record(6, ok, parts.join("; "));
}

fn c7_attenuation(v: &mut Verdicts) {
    let rp = RabiParams::default();
    let readout = ReadoutConfig::gaussian(100.0);
    let data = gen_rabi_dataset(&rp, 250, &readout, SEED + 4).unwrap();
    let (eu, ed) = (0.05, 0.03);
    let channel = Method::Channel {
        eps_up: eu,
        eps_down: ed,
        seed: SEED + 5,
    };
    let point = PointSpec {
        r: 100.0,
        tunnel: readout.tunnel,
        grid: readout.grid,
    };
    let cmp = compare_rabi(&[Method::Truth, channel], &data, &point).unwrap();
    let fit = &cmp.methods[1].fit;
    let want = rp.visibility * (1.0 - eu - ed);
    let within = (fit.visibility - want).abs() <= 2.0 * fit.visibility_se;

    // expectation over the four (true, reported) outcomes at every drive time
    let expected: Vec<f64> = rp
        .times
        .iter()
        .map(|&t| {
            let p = rp.probability(t);
            [(true, true, p * (1.0 - eu)), (true, false, p * eu), (false, true, (1.0 - p) * ed), (false, false, (1.0 - p) * (1.0 - ed))]
                .iter()
                .filter(|(_, reported_up, _)| *reported_up)
                .map(|(_, _, w)| w)
                .sum()
        })
        .collect();
    let exact = fit_rabi(&rp.times, &expected).unwrap();
    let exact_ok = (exact.visibility - want).abs() < 1e-6;
    v.record(
        7,
        within && exact_ok,
        format!(
            "channel (0.05, 0.03): fitted V {:.4} +- {:.4} vs V_true*0.92 = {want:.4} ({}); exhaustive expectation fit V {:.6}",
            fit.visibility,
            fit.visibility_se,
            if within { "within 2 sigma" } else { "outside 2 sigma" },
            exact.visibility
        ),
    );
}

fn colored_noise() -> NoiseModel {
    let psd = model_psd(PSD_WHITE, PSD_PINK, PSD_LORENTZ).unwrap();
    NoiseModel::AtSnr {
        spec: NoiseSpec::Colored { psd },
        r: RABI_R,
    }
}

fn c8_rabi_colored(v: &mut Verdicts, net_b: &Method) {
    let tunnel = TunnelParams::default();
    let grid = TraceGrid::default();
    // C and D see the same rescaled colored traces; only the labels differ
    let cfg = SynthConfig {
        noise: colored_noise(),
        ..SynthConfig::gaussian(CD_TRAIN, RABI_R, SEED + 200)
    };
    let key = format!("{cfg:?}|rescale {PEAK_PA}");
    let realistic = || median_rescaled(&synthesize_dataset(&cfg).unwrap(), PEAK_PA).unwrap();
    let (net_d, d_secs) = trained("netD", &key, Regime::D, &train_config(SEED + 201), realistic);
    let (net_c, c_secs) = trained(
        "netC",
        &format!("{key}|bayes r {RABI_R}"),
        Regime::C,
        &train_config(SEED + 301),
        || {
            let model = BayesModel::<f64>::for_snr(tunnel, RABI_R, grid).unwrap();
            relabel_with_bayes(&realistic(), &model).unwrap()
        },
    );
    progress("rabi comparison on colored noise");
    let readout = ReadoutConfig {
        grid,
        tunnel,
        noise: colored_noise(),
        perturb: PerturbationSpec::default(),
        median_rescale_pa: Some(PEAK_PA),
    };
    let rp = RabiParams::default();
    let data = gen_rabi_dataset(&rp, RABI_TRACES, &readout, SEED + 6).unwrap();
    let methods = [
        Method::BayesMatched,
        net_b.clone(),
        Method::network("netC", net_c),
        Method::network("netD", net_d),
        Method::Truth,
    ];
    let point = PointSpec { r: RABI_R, tunnel, grid };
    let cmp = compare_rabi(&methods, &data, &point).unwrap();
    let ci = |name: &str| {
        let f = &cmp.get(name).unwrap().fit;
        (f.visibility - 1.96 * f.visibility_se, f.visibility, f.visibility + 1.96 * f.visibility_se)
    };
    let above = |a: &str, b: &str| ci(a).0 > ci(b).2;
    let ok = above("netD", "bayes") && above("netD", "netB") && above("netB", "netC");
    let summary: Vec<String> = cmp
        .methods
        .iter()
        .map(|m| {
            format!(
                "{} V={:.4}+-{:.4} (eps {}/{})",
                m.method,
                m.fit.visibility,
                1.96 * m.fit.visibility_se,
                pct(m.errors.eps_up),
                pct(m.errors.eps_down)
            )
        })
        .collect();
    v.record(
        8,
        ok,
        format!(
            "{}; order D>Bayes {}, D>B {}, B>C {}; {}x{} traces at r={RABI_R}; C/D trained in {:.0}/{:.0} s",
            summary.join(", "),
            above("netD", "bayes"),
            above("netD", "netB"),
            above("netB", "netC"),
            rp.times.len(),
            RABI_TRACES,
            c_secs,
            d_secs
        ),
    );
}

fn c9_gradients(v: &mut Verdicts) {
    let mut m = Net64::new(NetConfig::tiny(), SEED).unwrap();
    for (i, p) in m.params_mut().iter_mut().enumerate() {
        *p += 0.05 * ((i as f64) * 0.7).sin();
    }
    let mut rng = stream_rng(SEED, 9);
    let x: Vec<f64> = (0..4 * 64).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let y = vec![Label::Up, Label::Down, Label::Up, Label::Down];
    let (_, grad) = m.loss_and_grad(&x, &y).unwrap();
    let h = 1e-6;
    let names: Vec<String> = m.layer_shapes().into_iter().map(|(n, _, _)| n).collect();
    let mut per_layer = Vec::new();
    for (w, b) in m.layer_ranges() {
        let mut worst: f64 = 0.0;
        for i in w.start..b.end {
            let orig = m.params()[i];
            m.params_mut()[i] = orig + h;
            let lp = m.loss(&x, &y).unwrap();
            m.params_mut()[i] = orig - h;
            let lm = m.loss(&x, &y).unwrap();
            m.params_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            worst = worst.max((grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6));
        }
        per_layer.push(worst);
    }
    let ok = per_layer.iter().all(|&e| e < 1e-4);
    let text: Vec<String> = names.iter().zip(&per_layer).map(|(n, e)| format!("{n} {e:.1e}")).collect();
    v.record(9, ok, format!("worst relative error per layer: {}", text.join(", ")));
}

fn c10_snr_round_trip(v: &mut Verdicts) {
    const REALIZATIONS: usize = 20_000;
    let (tau, dt) = (1.0, 0.01);
    let mut parts = Vec::new();
    let mut ok = true;
    for r in [1.0, 10.0, 100.0, 400.0] {
        let sigma = gaussian_sigma_for_r(r, tau, dt).unwrap();
        let mut rng = stream_rng(SEED, r as u64);
        let realizations: Vec<Vec<f64>> = (0..REALIZATIONS)
            .map(|_| (0..1000).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let got = measure_r(&realizations, tau, dt).unwrap();
        ok &= (got / r - 1.0).abs() <= 0.05;
        parts.push(format!("{r} -> {got:.2}"));
    }
    v.record(10, ok, format!("measured r from {REALIZATIONS} realizations: {}", parts.join(", ")));
}

/// Dataset bytes, weight bytes and sweep CSV from one pool.
fn determinism_artifacts(threads: usize) -> (Vec<u8>, Vec<u8>, String) {
    let pool = ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let ds = synthesize_dataset(&SynthConfig {
            noise: NoiseModel::gaussian_r_range(1.0, 400.0),
            ..SynthConfig::gaussian(600, 1.0, SEED + 11)
        })
        .unwrap();
        let mut ds_bytes = Vec::new();
        write_dataset(&mut ds_bytes, &ds).unwrap();
        let tc = TrainConfig {
            max_epochs: 2,
            batch_size: 64,
            seed: SEED + 12,
            ..TrainConfig::default()
        };
        let model: Net32 = train_with_progress(&ds, &net_config(), &tc, Regime::B, |_| {}).unwrap();
        let mut w_bytes = Vec::new();
        write_model(&mut w_bytes, &model).unwrap();
        let cfg = SweepConfig {
            test_size: 1000,
            seed: SEED + 13,
            ..SweepConfig::default()
        };
        let methods = [Method::BayesMatched, Method::network("net", model), Method::Channel { eps_up: 0.1, eps_down: 0.2, seed: 1 }];
        let csv = sweep_error_vs_r(&methods, &[25.0, 400.0], &cfg).unwrap().to_csv();
        (ds_bytes, w_bytes, csv)
    })
}

fn c11_determinism(v: &mut Verdicts) {
    let one = determinism_artifacts(1);
    let eight = determinism_artifacts(8);
    let same = [one.0 == eight.0, one.1 == eight.1, one.2 == eight.2];
    v.record(
        11,
        same.iter().all(|&s| s),
        format!(
            "1 vs 8 threads: dataset {} ({} B), weights {} ({} B), sweep csv {}",
            if same[0] { "identical" } else { "differ" },
            one.0.len(),
            if same[1] { "identical" } else { "differ" },
            one.1.len(),
            if same[2] { "identical" } else { "differ" }
        ),
    );
}

fn c12_timing(v: &mut Verdicts, net_b: &Method) {
    let batch = synthesize_dataset(&SynthConfig::gaussian(200, 100.0, SEED + 7)).unwrap();
    let point = PointSpec {
        r: 100.0,
        tunnel: TunnelParams::default(),
        grid: TraceGrid::default(),
    };
    let report = time_classifiers(&[Method::BayesMatched, net_b.clone()], &batch, &point, 1, 5).unwrap();
    let ok = report.methods.len() == 2
        && report
            .methods
            .iter()
            .all(|m| m.samples_us.len() == 1000 && m.median_us.is_finite() && m.median_us > 0.0);
    let text: Vec<String> = report
        .methods
        .iter()
        .map(|m| format!("{} median {:.1} us p95 {:.1} us", m.method, m.median_us, m.p95_us))
        .collect();
    let ratio = report.methods[0].median_us / report.methods[1].median_us;
    v.record(
        12,
        ok,
        format!(
            "{}; Bayes/NN median ratio {ratio:.2} (reference latencies about 200 us Bayes, 50 us NN; not asserted; {} build)",
            text.join(", "),
            if report.env.debug_build { "debug" } else { "optimized" }
        ),
    );
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; none apply here
    if std::env::args().skip(1).any(|a| a == "--list") {
        return;
    }
    let t0 = Instant::now();
    let mut v = Verdicts(Vec::new());
    c1_oracle(&mut v);
    c2_matched_bayes(&mut v);
    let (b, b_secs) = train_b();
    let net_b = Method::network("netB", b);
    c3_c4_r_sweeps(&mut v, &net_b, b_secs);
    c5_offsets(&mut v, &net_b);
    c6_gamma(&mut v, &net_b);
    c7_attenuation(&mut v);
    c8_rabi_colored(&mut v, &net_b);
    c9_gradients(&mut v);
    c10_snr_round_trip(&mut v);
    c11_determinism(&mut v);
    c12_timing(&mut v, &net_b);

    v.0.sort_by_key(|c| c.0);
    let passed = v.0.iter().filter(|c| c.1).count();
    println!("acceptance: {passed}/{} criteria passed in {:.0} s", v.0.len(), t0.elapsed().as_secs_f64());
    if passed < v.0.len() && std::env::var_os("SSRB_STRICT").is_some() {
        std::process::exit(1);
    }
}
