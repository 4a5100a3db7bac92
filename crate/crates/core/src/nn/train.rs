use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::config::{NetConfig, TrainConfig};
use super::net::NetModel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::{derive_seed, stream_rng, Label, LabeledDataset, Provenance};

/// Which training data a network was fitted on.
///
/// `B`: Gaussian-noise synthetic traces with true labels. `C`: realistic
/// traces labeled by the Bayes filter. `D`: synthetic traces with colored
/// noise and true labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    B,
    C,
    D,
}

impl Regime {
    pub fn required_provenance(self) -> Provenance {
        match self {
            Regime::C => Provenance::BayesLabels,
            Regime::B | Regime::D => Provenance::TrueLabels,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::B => "B",
            Regime::C => "C",
            Regime::D => "D",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "B" => Ok(Regime::B),
            "C" => Ok(Regime::C),
            "D" => Ok(Regime::D),
            _ => Err(Error::invalid("regime", format!("expected B, C or D, got `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Deterministic split into `(train, validation)` indices.
pub fn split_indices(count: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut stream_rng(derive_seed(seed, "split"), 0));
    let n_val = if count < 2 {
        0
    } else {
        ((count as f64 * fraction).round() as usize).clamp(1, count - 1)
    };
    let train = idx.split_off(n_val);
    (train, idx)
}

fn evaluate<T: Scalar>(model: &NetModel<T>, ds: &LabeledDataset, idx: &[usize]) -> Result<(f64, f64)> {
    let n = ds.grid().n();
    let mut x = Vec::with_capacity(idx.len() * n);
    for &i in idx {
        x.extend_from_slice(ds.trace(i));
    }
    let probs = model.forward(&x)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (p, &i) in probs.iter().zip(idx) {
        let label = ds.labels()[i];
        loss -= p[label.index()].to_f64_lossy().max(f64::MIN_POSITIVE).ln();
        let guess = if p[1] > p[0] { Label::Up } else { Label::Down };
        correct += (guess == label) as usize;
    }
    let m = idx.len().max(1) as f64;
    Ok((loss / m, correct as f64 / m))
}

pub fn train<T: Scalar>(ds: &LabeledDataset, net: &NetConfig, tc: &TrainConfig, regime: Regime) -> Result<NetModel<T>> {
    train_with_progress(ds, net, tc, regime, |_| {})
}

/// Adam on mini-batch cross-entropy with early stopping on validation loss.
///
/// Returns the parameters of the best validation epoch, with the full
/// per-epoch curve in the model metadata.
pub fn train_with_progress<T: Scalar>(
    ds: &LabeledDataset,
    net: &NetConfig,
    tc: &TrainConfig,
    regime: Regime,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<NetModel<T>> {
    tc.validate()?;
    net.validate()?;
    if ds.provenance() != regime.required_provenance() {
        return Err(Error::ProvenanceMismatch {
            regime: regime.to_string(),
            found: ds.provenance(),
            required: regime.required_provenance(),
        });
    }
    if ds.grid().n() != net.input_len {
        return Err(Error::ShapeMismatch(format!(
            "dataset traces have {} samples, network expects {}",
            ds.grid().n(),
            net.input_len
        )));
    }
    if ds.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    if let Some(i) = ds.samples().iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid("dataset", format!("trace {} has a non-finite sample", i / net.input_len)));
    }

    let mut model = NetModel::<T>::new(net.clone(), tc.seed)?;
    let (mut train_idx, val_idx) = split_indices(ds.len(), tc.validation_fraction, tc.seed);
    let mut adam = AdamState::new(model.param_count());
    let shuffle_seed = derive_seed(tc.seed, "shuffle");
    let dropout_seed = derive_seed(tc.seed, "dropout");
    let get = |i: usize| (ds.trace(i), ds.labels()[i]);

    let mut best: Option<(f64, usize, Vec<T>)> = None;
    let mut history = Vec::new();
    let mut step = 0u64;
    for epoch in 1..=tc.max_epochs {
        train_idx.shuffle(&mut stream_rng(shuffle_seed, epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in train_idx.chunks(tc.batch_size) {
            step += 1;
            let dropout = (net.dropout > 0.0).then(|| dropout_seed.wrapping_add(step));
            let (loss, grad) = model.batch_grad(batch, get, dropout);
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let max_w = model.params().iter().fold(0.0f64, |a, p| a.max(p.to_f64_lossy().abs()));
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: step as usize,
                    detail: format!("batch loss {loss}, largest |weight| {max_w:.3e}, batch of {}", batch.len()),
                });
            }
            adam_step(model.params_mut(), &grad, &mut adam, tc);
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches.max(1) as f64;
        let (val_loss, val_accuracy) = if val_idx.is_empty() {
            evaluate(&model, ds, &train_idx)?
        } else {
            evaluate(&model, ds, &val_idx)?
        };
        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "regime {regime} epoch {epoch}: train loss {train_loss:.5}, val loss {val_loss:.5}, val acc {val_accuracy:.4}"
        );
        on_epoch(&stats);
        history.push(stats);
        let improved = best.as_ref().is_none_or(|(l, _, _)| val_loss < *l);
        if improved {
            best = Some((val_loss, epoch, model.params().to_vec()));
        } else if best.as_ref().is_some_and(|(_, e, _)| epoch - e >= tc.patience) {
            break;
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    model.params_mut().copy_from_slice(&params);
    model.meta.regime = Some(regime);
    model.meta.seed = tc.seed;
    model.meta.epochs = history.len();
    model.meta.best_epoch = best_epoch;
    model.meta.train_size = train_idx.len();
    model.meta.history = history;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{synthesize_dataset, DatasetMeta, SynthConfig, TraceGrid};

    fn tiny_dataset(count: usize, seed: u64) -> LabeledDataset {
        synthesize_dataset(&SynthConfig {
            grid: TraceGrid::new(0.1, 64).unwrap(),
            ..SynthConfig::gaussian(count, 400.0, seed)
        })
        .unwrap()
    }

    #[test]
    fn regime_parsing_and_provenance() {
        assert_eq!("c".parse::<Regime>().unwrap(), Regime::C);
        assert!("E".parse::<Regime>().is_err());
        assert_eq!(Regime::C.required_provenance(), Provenance::BayesLabels);
        assert_eq!(Regime::D.required_provenance(), Provenance::TrueLabels);
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let (tr, va) = split_indices(50, 0.1, 3);
        assert_eq!(va.len(), 5);
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(split_indices(50, 0.1, 3), (tr, va));
    }

    #[test]
    fn smoke_ten_traces_one_epoch() {
        let ds = tiny_dataset(10, 1);
        let tc = TrainConfig {
            max_epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let m: NetModel<f32> = train(&ds, &NetConfig::tiny(), &tc, Regime::B).unwrap();
        assert_eq!(m.meta.history.len(), 1);
        assert!(m.meta.history[0].train_loss.is_finite());
        assert_eq!(m.meta.regime, Some(Regime::B));
    }

    #[test]
    fn provenance_is_enforced() {
        let ds = tiny_dataset(10, 1);
        let err = train::<f32>(&ds, &NetConfig::tiny(), &TrainConfig::default(), Regime::C).unwrap_err();
        assert!(matches!(err, Error::ProvenanceMismatch { .. }));
        let relabeled = ds.relabeled(ds.labels().to_vec(), Provenance::BayesLabels).unwrap();
        let err = train::<f32>(&relabeled, &NetConfig::tiny(), &TrainConfig::default(), Regime::D).unwrap_err();
        assert!(matches!(err, Error::ProvenanceMismatch { .. }));
    }

    #[test]
    fn wrong_trace_length_rejected() {
        let ds = tiny_dataset(10, 1);
        let err = train::<f32>(&ds, &NetConfig::default(), &TrainConfig::default(), Regime::B).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)));
    }

    #[test]
    fn same_seed_same_weights() {
        let ds = tiny_dataset(40, 2);
        let tc = TrainConfig {
            max_epochs: 2,
            batch_size: 8,
            seed: 9,
            ..TrainConfig::default()
        };
        let a: NetModel<f32> = train(&ds, &NetConfig::tiny(), &tc, Regime::B).unwrap();
        let b: NetModel<f32> = train(&ds, &NetConfig::tiny(), &tc, Regime::B).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn loss_falls_on_separable_toy_data() {
        // class decided by the sign of the trace mean
        let grid = TraceGrid::new(0.1, 64).unwrap();
        let mut rng = stream_rng(5, 0);
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for i in 0..32 {
            let up = i % 2 == 0;
            for _ in 0..64 {
                let noise: f32 = rand::Rng::random_range(&mut rng, -0.3..0.3);
                samples.push(if up { 1.0 } else { -1.0 } + noise);
            }
            labels.push(if up { Label::Up } else { Label::Down });
        }
        let ds = LabeledDataset::new(grid, samples, labels, Provenance::TrueLabels, DatasetMeta::default()).unwrap();
        let cfg = NetConfig {
            depths: vec![6, 6, 6, 6],
            dense: vec![16, 8, 2],
            ..NetConfig::tiny()
        };
        let mut model = NetModel::<f64>::new(cfg, 1).unwrap();
        let tc = TrainConfig {
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let mut adam = AdamState::new(model.param_count());
        let idx: Vec<usize> = (0..32).collect();
        let mut losses = Vec::new();
        for _ in 0..10 {
            let (loss, grad) = model.batch_grad(&idx, |i| (ds.trace(i), ds.labels()[i]), None);
            losses.push(loss);
            adam_step(model.params_mut(), &grad, &mut adam, &tc);
        }
        let (last, _) = model.batch_grad(&idx, |i| (ds.trace(i), ds.labels()[i]), None);
        assert!(last < losses[0], "{losses:?} -> {last}");
    }
}
