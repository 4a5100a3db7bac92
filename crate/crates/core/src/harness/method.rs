use std::sync::Arc;

use rand::Rng;

use crate::bayes::{batch_classify, BayesModel};
use crate::error::{Error, Result};
use crate::nn::NetModel;
use crate::signal::{derive_seed, stream_rng, Label, LabeledDataset, TraceGrid, TunnelParams};

/// Generating parameters of one benchmark point, as seen by matched methods.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointSpec {
    pub r: f64,
    pub tunnel: TunnelParams,
    pub grid: TraceGrid,
}

/// A classifier under benchmark.
#[derive(Clone, Debug)]
pub enum Method {
    /// Bayes filter using the rates and SNR of each test point.
    BayesMatched,
    /// Bayes filter with a fixed assumed SNR and rates.
    BayesFixed { r: f64, tunnel: TunnelParams },
    Network { name: String, model: Arc<NetModel<f32>> },
    /// Returns the true labels.
    Truth,
    /// True labels passed through a binary asymmetric channel.
    Channel { eps_up: f64, eps_down: f64, seed: u64 },
}

impl Method {
    pub fn network(name: impl Into<String>, model: NetModel<f32>) -> Self {
        Method::Network {
            name: name.into(),
            model: Arc::new(model),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Method::BayesMatched => "bayes".into(),
            Method::BayesFixed { r, .. } => format!("bayes_r{r}"),
            Method::Network { name, .. } => name.clone(),
            Method::Truth => "truth".into(),
            Method::Channel { eps_up, eps_down, .. } => format!("channel_{eps_up}_{eps_down}"),
        }
    }

    pub fn classify(&self, ds: &LabeledDataset, point: &PointSpec) -> Result<Vec<Label>> {
        match self {
            Method::BayesMatched => {
                let model = BayesModel::<f64>::for_snr(point.tunnel, point.r, ds.grid())?;
                batch_classify(ds, &model)
            }
            Method::BayesFixed { r, tunnel } => {
                let model = BayesModel::<f64>::for_snr(*tunnel, *r, ds.grid())?;
                batch_classify(ds, &model)
            }
            Method::Network { name, model } => {
                if model.input_len() != ds.grid().n() {
                    return Err(Error::ShapeMismatch(format!(
                        "network `{name}` takes {} samples, traces have {}",
                        model.input_len(),
                        ds.grid().n()
                    )));
                }
                model.classify(ds.samples())
            }
            Method::Truth => Ok(ds.labels().to_vec()),
            Method::Channel { eps_up, eps_down, seed } => Ok(apply_channel(ds.labels(), *eps_up, *eps_down, *seed)),
        }
    }
}

/// Flip `Up -> Down` with probability `eps_up` and `Down -> Up` with `eps_down`.
pub fn apply_channel(labels: &[Label], eps_up: f64, eps_down: f64, seed: u64) -> Vec<Label> {
    let seed = derive_seed(seed, "channel");
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let u: f64 = stream_rng(seed, i as u64).random();
            match l {
                Label::Up if u < eps_up => Label::Down,
                Label::Down if u < eps_down => Label::Up,
                _ => l,
            }
        })
        .collect()
}
