//! Sequential Bayesian classification of readout traces.
//!
//! The UP hypothesis is a three-stage hidden Markov chain
//! `PRE (low) -> HIGH (high) -> POST (low)` with per-sample hazards
//! `p_i = 1 - e^{-Γ_i dt}` and `p_f = 1 - e^{-Γ_f dt}`; POST is absorbing.
//! Stage at sample 0 is HIGH with probability `p_i`. The DOWN hypothesis
//! stays at the low level. Emissions are Gaussian with a common `σ`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::{gaussian_sigma_for_r, Label, LabeledDataset, Provenance, TraceGrid, TunnelParams};

/// Generative parameters assumed by the filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesModel<T = f64> {
    pub params: TunnelParams,
    pub low_level: T,
    pub high_level: T,
    pub sigma: T,
    pub prior_up: T,
    pub grid: TraceGrid,
}

impl<T: Scalar> BayesModel<T> {
    pub fn new(params: TunnelParams, sigma: T, grid: TraceGrid) -> Result<Self> {
        let m = Self {
            params,
            low_level: -T::one(),
            high_level: T::one(),
            sigma,
            prior_up: T::lit(0.5),
            grid,
        };
        m.validate()?;
        Ok(m)
    }

    /// Noise level derived from an assumed SNR `r` with `τ = 1/Γ_f`.
    pub fn for_snr(params: TunnelParams, r: f64, grid: TraceGrid) -> Result<Self> {
        let sigma = gaussian_sigma_for_r(r, params.mean_high_time(), grid.dt())?;
        Self::new(params, T::lit(sigma), grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > T::zero()) {
            return Err(Error::invalid("bayes.sigma", format!("must be > 0, got {}", self.sigma)));
        }
        if !(self.prior_up > T::zero() && self.prior_up < T::one()) {
            return Err(Error::invalid(
                "bayes.prior_up",
                format!("must lie in (0, 1), got {}", self.prior_up),
            ));
        }
        if !(self.low_level < self.high_level) {
            return Err(Error::invalid("bayes.levels", "low_level must be below high_level"));
        }
        Ok(())
    }

    pub fn log_prior_odds(&self) -> T {
        (self.prior_up / (T::one() - self.prior_up)).ln()
    }

    fn hazards(&self) -> (T, T) {
        let dt = self.grid.dt();
        let p_i = -(-self.params.gamma_i() * dt).exp_m1();
        let p_f = -(-self.params.gamma_f() * dt).exp_m1();
        (T::lit(p_i), T::lit(p_f))
    }

    fn check_grid(&self, len: usize) -> Result<()> {
        if len != self.grid.n() {
            return Err(Error::GridMismatch {
                have: len,
                want: self.grid.n(),
            });
        }
        Ok(())
    }
}

struct Emission<T> {
    low: T,
    high: T,
    norm: T,
    inv_two_var: T,
}

impl<T: Scalar> Emission<T> {
    fn new(m: &BayesModel<T>) -> Self {
        let half_ln_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        Self {
            low: m.low_level,
            high: m.high_level,
            norm: -half_ln_2pi - m.sigma.ln(),
            inv_two_var: T::one() / (T::lit(2.0) * m.sigma * m.sigma),
        }
    }

    #[inline]
    fn log_pdf(&self, x: T, mu: T) -> T {
        let d = x - mu;
        self.norm - d * d * self.inv_two_var
    }

    #[inline]
    fn pair(&self, x: T) -> (T, T) {
        (self.log_pdf(x, self.low), self.log_pdf(x, self.high))
    }
}

/// Log-likelihoods of one trace under both hypotheses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLik<T = f64> {
    pub loglik_up: T,
    pub loglik_down: T,
}

impl<T: Scalar> LogLik<T> {
    pub fn llr(&self) -> T {
        self.loglik_up - self.loglik_down
    }
}

/// Scaled forward recursion over `{PRE, HIGH, POST}`.
pub fn hmm_forward<T: Scalar, S: Scalar>(samples: &[S], model: &BayesModel<T>) -> Result<LogLik<T>> {
    model.check_grid(samples.len())?;
    let em = Emission::new(model);
    let (p_i, p_f) = model.hazards();
    let (stay_i, stay_f) = (T::one() - p_i, T::one() - p_f);

    let mut down = T::zero();
    let mut up = T::zero();
    let (mut pre, mut high, mut post) = (stay_i, p_i, T::zero());
    for (k, &s) in samples.iter().enumerate() {
        let x = T::from(s).expect("finite sample");
        if k > 0 {
            let next_high = pre * p_i + high * stay_f;
            post = post + high * p_f;
            pre = pre * stay_i;
            high = next_high;
        }
        let (l_low, l_high) = em.pair(x);
        down += l_low;
        let m = l_low.max(l_high);
        let (e_low, e_high) = ((l_low - m).exp(), (l_high - m).exp());
        pre = pre * e_low;
        high = high * e_high;
        post = post * e_low;
        let c = pre + high + post;
        up += c.ln() + m;
        let inv = T::one() / c;
        pre = pre * inv;
        high = high * inv;
        post = post * inv;
    }
    Ok(LogLik {
        loglik_up: up,
        loglik_down: down,
    })
}

pub const EXACT_MAX_LEN: usize = 2000;

/// Brute-force marginalization over every grid-aligned `(t_i, t_f)` pair.
///
/// An UP configuration is the first HIGH sample `a` and the first POST sample
/// `b > a` (or `b = n`, HIGH through the end); "no peak in the window" has
/// mass `(1-p_i)^n`. Cost is `O(n²)`.
pub fn exact_marginal_loglik<T: Scalar, S: Scalar>(
    samples: &[S],
    model: &BayesModel<T>,
) -> Result<LogLik<T>> {
    model.check_grid(samples.len())?;
    let n = samples.len();
    if n > EXACT_MAX_LEN {
        return Err(Error::TraceTooLong {
            have: n,
            max: EXACT_MAX_LEN,
        });
    }
    let em = Emission::new(model);
    let (p_i, p_f) = model.hazards();
    let (ln_stay_i, ln_stay_f) = ((T::one() - p_i).ln(), (T::one() - p_f).ln());
    let (ln_p_i, ln_p_f) = (p_i.ln(), p_f.ln());

    // prefix[k] = Σ_{j<k} (log N_high - log N_low)
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(T::zero());
    let mut down = T::zero();
    for &s in samples {
        let (l_low, l_high) = em.pair(T::from(s).expect("finite sample"));
        down += l_low;
        let last = *prefix.last().expect("non-empty");
        prefix.push(last + l_high - l_low);
    }

    let mut acc = LogSumExp::default();
    acc.push(T::lit(n as f64) * ln_stay_i);
    for a in 0..n {
        let ln_start = T::lit(a as f64) * ln_stay_i + ln_p_i;
        for b in a + 1..n {
            let ln_dur = T::lit((b - a - 1) as f64) * ln_stay_f + ln_p_f;
            acc.push(ln_start + ln_dur + prefix[b] - prefix[a]);
        }
        let ln_tail = T::lit((n - 1 - a) as f64) * ln_stay_f;
        acc.push(ln_start + ln_tail + prefix[n] - prefix[a]);
    }
    Ok(LogLik {
        loglik_up: down + acc.value(),
        loglik_down: down,
    })
}

struct LogSumExp<T> {
    max: T,
    sum: T,
}

impl<T: Scalar> Default for LogSumExp<T> {
    fn default() -> Self {
        Self {
            max: T::neg_infinity(),
            sum: T::zero(),
        }
    }
}

impl<T: Scalar> LogSumExp<T> {
    fn push(&mut self, v: T) {
        if v <= self.max {
            self.sum += (v - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - v).exp() + T::one();
            self.max = v;
        }
    }

    fn value(&self) -> T {
        self.max + self.sum.ln()
    }
}

/// Decision for one trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict<T = f64> {
    pub label: Label,
    pub llr: T,
    pub loglik_up: T,
    pub loglik_down: T,
}

/// UP iff `llr + log(prior_up / (1 - prior_up)) >= 0`.
pub fn classify_bayes<T: Scalar, S: Scalar>(samples: &[S], model: &BayesModel<T>) -> Result<Verdict<T>> {
    let ll = hmm_forward(samples, model)?;
    let llr = ll.llr();
    Ok(Verdict {
        label: if llr + model.log_prior_odds() >= T::zero() {
            Label::Up
        } else {
            Label::Down
        },
        llr,
        loglik_up: ll.loglik_up,
        loglik_down: ll.loglik_down,
    })
}

pub fn batch_verdicts<T: Scalar>(ds: &LabeledDataset, model: &BayesModel<T>) -> Result<Vec<Verdict<T>>> {
    if ds.grid() != model.grid {
        return Err(Error::GridMismatch {
            have: ds.grid().n(),
            want: model.grid.n(),
        });
    }
    ds.traces()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|tr| classify_bayes(tr, model))
        .collect()
}

pub fn batch_classify<T: Scalar>(ds: &LabeledDataset, model: &BayesModel<T>) -> Result<Vec<Label>> {
    Ok(batch_verdicts(ds, model)?.into_iter().map(|v| v.label).collect())
}

/// The same traces labeled by the filter instead of the generator, as a
/// training set for regime C. Filter mistakes become label noise.
pub fn relabel_with_bayes<T: Scalar>(ds: &LabeledDataset, model: &BayesModel<T>) -> Result<LabeledDataset> {
    ds.relabeled(batch_classify(ds, model)?, Provenance::BayesLabels)
}

/// `index,label,llr,loglik_up,loglik_down`, label as `1` (UP) / `0` (DOWN).
pub fn write_verdicts_csv<T: Scalar, W: Write>(mut w: W, verdicts: &[Verdict<T>]) -> Result<()> {
    writeln!(w, "index,label,llr,loglik_up,loglik_down")?;
    for (i, v) in verdicts.iter().enumerate() {
        writeln!(
            w,
            "{i},{},{},{},{}",
            v.label.as_u8(),
            v.llr,
            v.loglik_up,
            v.loglik_down
        )?;
    }
    Ok(())
}

/// Per-class and mean classification error against true labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    /// UP traces labeled DOWN, as a fraction of UP traces.
    pub eps_up: f64,
    /// DOWN traces labeled UP, as a fraction of DOWN traces.
    pub eps_down: f64,
    /// `(eps_up + eps_down) / 2`.
    pub mean_error: f64,
    pub n_up: usize,
    pub n_down: usize,
    pub up_errors: usize,
    pub down_errors: usize,
}

pub fn error_rate(predicted: &[Label], truth: &[Label]) -> Result<ErrorRates> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    let (mut n_up, mut n_down, mut up_errors, mut down_errors) = (0, 0, 0, 0);
    for (p, t) in predicted.iter().zip(truth) {
        match t {
            Label::Up => {
                n_up += 1;
                up_errors += usize::from(*p == Label::Down);
            }
            Label::Down => {
                n_down += 1;
                down_errors += usize::from(*p == Label::Up);
            }
        }
    }
    let frac = |e: usize, n: usize| if n == 0 { 0.0 } else { e as f64 / n as f64 };
    let (eps_up, eps_down) = (frac(up_errors, n_up), frac(down_errors, n_down));
    Ok(ErrorRates {
        eps_up,
        eps_down,
        mean_error: 0.5 * (eps_up + eps_down),
        n_up,
        n_down,
        up_errors,
        down_errors,
    })
}
