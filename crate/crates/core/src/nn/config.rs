use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network architecture: valid 1D convolutions, each followed by ReLU and a
/// max-pool, then a ReLU dense head ending in a softmax over the two classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub input_len: usize,
    pub kernels: Vec<usize>,
    pub depths: Vec<usize>,
    pub pool: usize,
    /// Dense widths; the last one is the class count and must be 2.
    pub dense: Vec<usize>,
    /// Dropout rate after each hidden dense layer.
    #[serde(default)]
    pub dropout: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::for_length(1000)
    }
}

impl NetConfig {
    pub fn for_length(input_len: usize) -> Self {
        Self {
            input_len,
            kernels: vec![101, 51, 25, 10],
            depths: vec![32, 16, 16, 8],
            pool: 3,
            dense: vec![64, 32, 2],
            dropout: 0.0,
        }
    }

    /// Small network for gradient checks (`n = 64`, depth 2 everywhere).
    pub fn tiny() -> Self {
        Self {
            input_len: 64,
            kernels: vec![5, 4, 3, 2],
            depths: vec![2, 2, 2, 2],
            pool: 2,
            dense: vec![6, 4, 2],
            dropout: 0.0,
        }
    }

    /// Lengths after every convolution and every pool, in order.
    pub fn stage_lengths(&self) -> Result<Vec<usize>> {
        let mut len = self.input_len;
        let mut out = Vec::with_capacity(2 * self.kernels.len());
        for (i, &k) in self.kernels.iter().enumerate() {
            if k > len {
                return Err(Error::ShapeMismatch(format!(
                    "conv {i}: kernel {k} longer than its input ({len})"
                )));
            }
            len = len - k + 1;
            out.push(len);
            len /= self.pool;
            if len == 0 {
                return Err(Error::ShapeMismatch(format!("pool after conv {i} leaves no samples")));
            }
            out.push(len);
        }
        Ok(out)
    }

    /// Features entering the dense head.
    pub fn flatten_len(&self) -> Result<usize> {
        let last = *self.stage_lengths()?.last().unwrap_or(&self.input_len);
        Ok(last * self.depths.last().copied().unwrap_or(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 {
            return Err(Error::invalid("net.input_len", "must be >= 1"));
        }
        if self.kernels.is_empty() || self.kernels.len() != self.depths.len() {
            return Err(Error::invalid(
                "net.kernels",
                format!("{} kernels for {} depths", self.kernels.len(), self.depths.len()),
            ));
        }
        if self.kernels.iter().chain(&self.depths).any(|&v| v == 0) {
            return Err(Error::invalid("net.kernels", "kernel sizes and depths must be positive"));
        }
        if self.pool == 0 {
            return Err(Error::invalid("net.pool", "must be >= 1"));
        }
        if self.dense.last() != Some(&2) || self.dense.contains(&0) {
            return Err(Error::invalid("net.dense", "widths must be positive and end in 2"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("net.dropout", format!("must lie in [0, 1), got {}", self.dropout)));
        }
        self.flatten_len().map(|_| ())
    }
}

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 128,
            max_epochs: 30,
            patience: 4,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be > 0, got {v}")))
            }
        };
        positive("training.learning_rate", self.learning_rate)?;
        positive("training.epsilon", self.epsilon)?;
        for (name, b) in [("training.beta1", self.beta1), ("training.beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::invalid(name, format!("must lie in (0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("training.batch_size", "must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("training.max_epochs", "must be >= 1"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("training.patience", "must be >= 1"));
        }
        let f = self.validation_fraction;
        if !(f > 0.0 && f <= 0.5) {
            return Err(Error::invalid(
                "training.validation_fraction",
                format!("must lie in (0, 0.5], got {f}"),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_algebra() {
        let cfg = NetConfig::default();
        assert_eq!(cfg.stage_lengths().unwrap(), vec![900, 300, 250, 83, 59, 19, 10, 3]);
        assert_eq!(cfg.flatten_len().unwrap(), 24);
        cfg.validate().unwrap();
    }

    #[test]
    fn tiny_config_is_valid() {
        let cfg = NetConfig::tiny();
        cfg.validate().unwrap();
        assert_eq!(cfg.stage_lengths().unwrap(), vec![60, 30, 27, 13, 11, 5, 4, 2]);
    }

    #[test]
    fn too_short_input_rejected() {
        let cfg = NetConfig::for_length(300);
        assert!(matches!(cfg.validate(), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn train_config_ranges() {
        TrainConfig::default().validate().unwrap();
        for f in [0.0, 0.6] {
            let tc = TrainConfig {
                validation_fraction: f,
                ..TrainConfig::default()
            };
            assert!(tc.validate().is_err());
        }
        let tc = TrainConfig {
            validation_fraction: 0.5,
            ..TrainConfig::default()
        };
        tc.validate().unwrap();
    }
}
