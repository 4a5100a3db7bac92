//! Synthesis, Bayesian filtering and neural-network classification of
//! single-shot spin readout traces, plus the benchmark harness comparing them.

pub mod bayes;
pub mod error;
pub mod fit;
pub mod harness;
pub mod nn;
pub mod scalar;
pub mod signal;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use nn::{NetConfig, NetModel, Regime, TrainConfig};
pub use signal::{Label, LabeledDataset, Trace, TraceGrid, TunnelParams};

/// Single-precision trace, the storage format of datasets.
pub type Trace32 = Trace<f32>;
/// Double-precision trace.
pub type Trace64 = Trace<f64>;

/// Network in single precision, the training and file format.
pub type Net32 = NetModel<f32>;
/// Network in double precision, used for gradient checks.
pub type Net64 = NetModel<f64>;
