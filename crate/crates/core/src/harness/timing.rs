use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::method::{Method, PointSpec};
use super::stats::percentile;
use crate::error::{Error, Result};
use crate::signal::LabeledDataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub method: String,
    pub traces: usize,
    pub repetitions: usize,
    pub median_us: f64,
    pub p95_us: f64,
    pub mean_us: f64,
    pub min_us: f64,
    /// Per-trace latencies in microseconds, in measurement order.
    pub samples_us: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingEnv {
    pub os: String,
    pub arch: String,
    pub available_parallelism: usize,
    pub worker_threads: usize,
    pub debug_build: bool,
}

impl TimingEnv {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            available_parallelism: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            worker_threads: 1,
            debug_build: cfg!(debug_assertions),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub env: TimingEnv,
    pub warmup: usize,
    pub methods: Vec<TimingStats>,
}

/// Wall-clock latency of classifying one trace at a time, on a single worker.
///
/// `warmup` passes over the batch run first and are discarded.
pub fn time_classifiers(
    methods: &[Method],
    batch: &LabeledDataset,
    point: &PointSpec,
    warmup: usize,
    repetitions: usize,
) -> Result<TimingReport> {
    if repetitions == 0 {
        return Err(Error::Empty("timing repetitions (nothing left after warm-up)"));
    }
    if batch.is_empty() {
        return Err(Error::Empty("timing batch"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::invalid("threads", e.to_string()))?;
    let singles: Vec<LabeledDataset> = (0..batch.len())
        .map(|i| {
            LabeledDataset::new(
                batch.grid(),
                batch.trace(i).to_vec(),
                vec![batch.labels()[i]],
                batch.provenance(),
                Default::default(),
            )
        })
        .collect::<Result<_>>()?;
    let mut stats = Vec::with_capacity(methods.len());
    for m in methods {
        let samples = pool.install(|| -> Result<Vec<f64>> {
            for _ in 0..warmup {
                for s in &singles {
                    m.classify(s, point)?;
                }
            }
            let mut out = Vec::with_capacity(repetitions * singles.len());
            for _ in 0..repetitions {
                for s in &singles {
                    let t0 = Instant::now();
                    std::hint::black_box(m.classify(std::hint::black_box(s), point)?);
                    out.push(t0.elapsed().as_secs_f64() * 1e6);
                }
            }
            Ok(out)
        })?;
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        stats.push(TimingStats {
            method: m.name(),
            traces: singles.len(),
            repetitions,
            median_us: percentile(&sorted, 0.5),
            p95_us: percentile(&sorted, 0.95),
            mean_us: sorted.iter().sum::<f64>() / sorted.len() as f64,
            min_us: sorted[0],
            samples_us: samples,
        });
    }
    Ok(TimingReport {
        env: TimingEnv::current(),
        warmup,
        methods: stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{synthesize_dataset, SynthConfig, TraceGrid, TunnelParams};

    fn setup() -> (LabeledDataset, PointSpec) {
        let grid = TraceGrid::new(0.02, 200).unwrap();
        let ds = synthesize_dataset(&SynthConfig {
            grid,
            ..SynthConfig::gaussian(6, 100.0, 1)
        })
        .unwrap();
        let point = PointSpec {
            r: 100.0,
            tunnel: TunnelParams::default(),
            grid,
        };
        (ds, point)
    }

    #[test]
    fn zero_repetitions_is_an_error() {
        let (ds, point) = setup();
        assert!(matches!(
            time_classifiers(&[Method::BayesMatched], &ds, &point, 2, 0),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn produces_one_sample_per_trace_and_repetition() {
        let (ds, point) = setup();
        let rep = time_classifiers(&[Method::BayesMatched, Method::Truth], &ds, &point, 1, 3).unwrap();
        assert_eq!(rep.methods.len(), 2);
        for s in &rep.methods {
            assert_eq!(s.samples_us.len(), 18);
            assert!(s.median_us >= s.min_us && s.p95_us >= s.median_us);
        }
    }
}
