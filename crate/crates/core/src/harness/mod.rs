//! Benchmarks: error sweeps, Rabi visibility comparison and latency timing.

mod manifest;
mod method;
mod preprocess;
mod rabi;
mod stats;
mod sweep;
mod timing;

pub use manifest::{sha256_hex, FileDigest, RunManifest};
pub use method::{apply_channel, Method, PointSpec};
pub use preprocess::{median, median_rescaled, rescale_trace};
pub use rabi::{
    compare_rabi, fit_rabi, gen_rabi_dataset, MethodRabi, RabiComparison, RabiDataset, RabiFit, RabiParams,
    ReadoutConfig,
};
pub use stats::{percentile, wilson_interval, Z95};
pub use sweep::{
    evaluate_method, sweep_error_vs_r, sweep_gamma, sweep_offset, SweepConfig, SweepResult, SweepRow,
    SWEEP_CSV_HEADER,
};
pub use timing::{time_classifiers, TimingEnv, TimingReport, TimingStats};
