use std::io::Write;

use serde::{Deserialize, Serialize};

use super::method::{Method, PointSpec};
use super::stats::{wilson_interval, Z95};
use crate::bayes::error_rate;
use crate::error::{Error, Result};
use crate::signal::{synthesize_dataset, LabeledDataset, SynthConfig, TraceGrid, TunnelParams};

pub const SWEEP_CSV_HEADER: &str = "axis,method,eps_up,eps_down,mean_error,ci_low,ci_high";

/// Test-set settings shared by all sweeps. Every point of every sweep draws
/// its traces from the same seed, so points differ only in the swept value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub test_size: usize,
    pub seed: u64,
    pub grid: TraceGrid,
    /// Rates of the `r` and offset sweeps; `gamma_i` anchors the `Γ` sweep.
    pub tunnel: TunnelParams,
    /// SNR of the offset and `Γ` sweeps.
    pub r: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            test_size: 20_000,
            seed: 0,
            grid: TraceGrid::default(),
            tunnel: TunnelParams::default(),
            r: 100.0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.test_size < 2 {
            return Err(Error::invalid("sweep.test_size", "must be >= 2"));
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(Error::invalid("sweep.r", format!("must be > 0, got {}", self.r)));
        }
        Ok(())
    }

    fn test_set(&self, r: f64, tunnel: TunnelParams) -> Result<LabeledDataset> {
        synthesize_dataset(&SynthConfig {
            tunnel,
            grid: self.grid,
            ..SynthConfig::gaussian(self.test_size, r, self.seed)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: f64,
    pub method: String,
    pub eps_up: f64,
    pub eps_down: f64,
    pub mean_error: f64,
    /// Wilson 95 % interval of the pooled error count.
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_up: usize,
    pub n_down: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis_name: String,
    pub rows: Vec<SweepRow>,
    pub config: SweepConfig,
}

impl SweepResult {
    pub fn row(&self, axis: f64, method: &str) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && (r.axis - axis).abs() <= 1e-12 * axis.abs().max(1.0))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{SWEEP_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.axis, r.method, r.eps_up, r.eps_down, r.mean_error, r.ci_low, r.ci_high
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii csv")
    }
}

/// Error rates of one method on one labeled set.
pub fn evaluate_method(method: &Method, ds: &LabeledDataset, point: &PointSpec, axis: f64) -> Result<SweepRow> {
    let predicted = method.classify(ds, point)?;
    let e = error_rate(&predicted, ds.labels())?;
    let (ci_low, ci_high) = wilson_interval(e.up_errors + e.down_errors, e.n_up + e.n_down, Z95);
    Ok(SweepRow {
        axis,
        method: method.name(),
        eps_up: e.eps_up,
        eps_down: e.eps_down,
        mean_error: e.mean_error,
        ci_low,
        ci_high,
        n_up: e.n_up,
        n_down: e.n_down,
    })
}

fn check_methods(methods: &[Method]) -> Result<()> {
    if methods.is_empty() {
        return Err(Error::Empty("method list"));
    }
    Ok(())
}

/// Balanced Gaussian test set per SNR value; `BayesMatched` follows `r`.
pub fn sweep_error_vs_r(methods: &[Method], r_values: &[f64], cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    check_methods(methods)?;
    let mut rows = Vec::new();
    for &r in r_values {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::invalid("sweep.r_values", format!("must be > 0, got {r}")));
        }
        let ds = cfg.test_set(r, cfg.tunnel)?;
        let point = PointSpec {
            r,
            tunnel: cfg.tunnel,
            grid: cfg.grid,
        };
        for m in methods {
            rows.push(evaluate_method(m, &ds, &point, r)?);
        }
    }
    Ok(SweepResult {
        axis_name: "r".into(),
        rows,
        config: cfg.clone(),
    })
}

/// One test set at `cfg.r`, shifted by each offset. Bayes keeps levels `±1`.
pub fn sweep_offset(methods: &[Method], offsets: &[f64], cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    check_methods(methods)?;
    if let Some(o) = offsets.iter().find(|o| !(o.abs() < 2.0)) {
        return Err(Error::invalid("sweep.offsets", format!("must lie in (-2, 2), got {o}")));
    }
    let base = cfg.test_set(cfg.r, cfg.tunnel)?;
    let point = PointSpec {
        r: cfg.r,
        tunnel: cfg.tunnel,
        grid: cfg.grid,
    };
    let mut rows = Vec::new();
    for &o in offsets {
        let ds = base.shifted(o);
        for m in methods {
            rows.push(evaluate_method(m, &ds, &point, o)?);
        }
    }
    Ok(SweepResult {
        axis_name: "offset".into(),
        rows,
        config: cfg.clone(),
    })
}

/// Test sets with `Γ_f = Γ · Γ_i` at fixed `cfg.r` and `Γ_i = cfg.tunnel.gamma_i`.
pub fn sweep_gamma(methods: &[Method], gammas: &[f64], cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    check_methods(methods)?;
    let mut rows = Vec::new();
    for &g in gammas {
        if !(g.is_finite() && g > 0.0) {
            return Err(Error::invalid("sweep.gammas", format!("must be > 0, got {g}")));
        }
        let tunnel = TunnelParams::from_ratio(cfg.tunnel.gamma_i(), g)?;
        let ds = cfg.test_set(cfg.r, tunnel)?;
        let point = PointSpec {
            r: cfg.r,
            tunnel,
            grid: cfg.grid,
        };
        for m in methods {
            rows.push(evaluate_method(m, &ds, &point, g)?);
        }
    }
    Ok(SweepResult {
        axis_name: "gamma".into(),
        rows,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SweepConfig {
        SweepConfig {
            test_size: 200,
            seed: 5,
            grid: TraceGrid::new(0.02, 500).unwrap(),
            ..SweepConfig::default()
        }
    }

    #[test]
    fn row_count_and_csv_shape() {
        let methods = [Method::BayesMatched, Method::Truth];
        let res = sweep_error_vs_r(&methods, &[1.0, 10.0, 100.0, 400.0], &small_cfg()).unwrap();
        assert_eq!(res.rows.len(), 8);
        let csv = res.to_csv();
        assert_eq!(csv.lines().count(), 9);
        assert_eq!(csv.lines().next().unwrap(), SWEEP_CSV_HEADER);
        let truth = res.row(100.0, "truth").unwrap();
        assert_eq!(truth.mean_error, 0.0);
        assert!(truth.ci_high > 0.0);
    }

    #[test]
    fn sweeps_agree_at_the_shared_point() {
        let cfg = small_cfg();
        let m = [Method::BayesMatched];
        let a = sweep_error_vs_r(&m, &[cfg.r], &cfg).unwrap();
        let b = sweep_offset(&m, &[0.0], &cfg).unwrap();
        let c = sweep_gamma(&m, &[1.0], &cfg).unwrap();
        assert_eq!(a.rows[0].mean_error, b.rows[0].mean_error);
        assert_eq!(a.rows[0].mean_error, c.rows[0].mean_error);
    }

    #[test]
    fn invalid_axes_rejected() {
        let cfg = small_cfg();
        let m = [Method::Truth];
        assert!(sweep_error_vs_r(&m, &[0.0], &cfg).is_err());
        assert!(sweep_offset(&m, &[2.5], &cfg).is_err());
        assert!(sweep_gamma(&m, &[-1.0], &cfg).is_err());
        assert!(sweep_error_vs_r(&[], &[1.0], &cfg).is_err());
    }
}
