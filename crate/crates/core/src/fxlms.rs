//! Filtered-x LMS feedforward controller.
//!
//! Error convention: the anti-noise adds at the error microphone,
//!
//! ```text
//! y(n)  = w^T x(n)              control output
//! a(n)  = (s * y)(n)            through the true secondary path
//! e(n)  = d(n) + a(n)
//! x'(n) = (s_hat * x)(n)        reference filtered by the path estimate
//! w    <- w - mu e(n) x'(n)
//! ```
//!
//! Since `de/dw = x'` when `s_hat = s`, the minus sign is plain gradient
//! descent on `e^2`.

use alloc::vec;
use alloc::vec::Vec;

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::metrics;

pub const DEFAULT_FILTER_LEN: usize = 512;
pub const DEFAULT_MU: f64 = 0.001;
pub const DEFAULT_BURN_IN: usize = 4000;
pub const DEFAULT_SEED: u64 = 42;
/// `|e|` beyond this counts as divergence even while still finite.
pub const DEFAULT_DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FxlmsConfig {
    pub filter_len: usize,
    pub mu: f64,
    pub burn_in: usize,
    pub seed: u64,
    pub divergence_limit: f64,
}

impl Default for FxlmsConfig {
    fn default() -> Self {
        Self {
            filter_len: DEFAULT_FILTER_LEN,
            mu: DEFAULT_MU,
            burn_in: DEFAULT_BURN_IN,
            seed: DEFAULT_SEED,
            divergence_limit: DEFAULT_DIVERGENCE_LIMIT,
        }
    }
}

impl FxlmsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filter_len == 0 {
            return Err(Error::InvalidArgument("filter length must be at least 1".into()));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidArgument(
                "step size must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Newest-first delay line backed by a doubled buffer so the history is
/// always one contiguous slice.
#[derive(Debug, Clone)]
struct DelayLine {
    buf: Vec<f64>,
    head: usize,
    len: usize,
}

impl DelayLine {
    fn new(len: usize) -> Self {
        Self {
            buf: vec![0.0; 2 * len],
            head: 0,
            len,
        }
    }

    fn push(&mut self, v: f64) {
        self.head = if self.head == 0 { self.len - 1 } else { self.head - 1 };
        self.buf[self.head] = v;
        self.buf[self.head + self.len] = v;
    }

    /// `[v(n), v(n-1), ..., v(n-len+1)]`.
    fn history(&self) -> &[f64] {
        &self.buf[self.head..self.head + self.len]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Controller state: weights plus the reference, filtered-reference and
/// control-output delay lines.
#[derive(Debug, Clone)]
pub struct FxlmsState {
    config: FxlmsConfig,
    w: Vec<f64>,
    s_hat: Vec<f64>,
    x_hist: DelayLine,
    xprime_hist: DelayLine,
    y_hist: DelayLine,
    steps: usize,
}

/// Output of one controller step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub e: f64,
    pub y: f64,
    pub a: f64,
}

impl FxlmsState {
    /// Zero-initialized weights. `s_true_len` sizes the control-output
    /// history used to apply the physical secondary path.
    pub fn new(config: FxlmsConfig, s_hat: &[f64], s_true_len: usize) -> Result<Self> {
        let w = vec![0.0; config.filter_len];
        Self::with_weights(config, s_hat, s_true_len, w)
    }

    pub fn with_weights(config: FxlmsConfig, s_hat: &[f64], s_true_len: usize, w: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if s_hat.is_empty() || s_true_len == 0 {
            return Err(Error::EmptyKernel);
        }
        if w.len() != config.filter_len {
            return Err(Error::LengthMismatch(w.len(), config.filter_len));
        }
        let x_len = config.filter_len.max(s_hat.len());
        Ok(Self {
            w,
            s_hat: s_hat.to_vec(),
            x_hist: DelayLine::new(x_len),
            xprime_hist: DelayLine::new(config.filter_len),
            y_hist: DelayLine::new(s_true_len),
            steps: 0,
            config,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Advances one sample.
    pub fn step(&mut self, x_n: f64, d_n: f64, s_true: &[f64]) -> Result<StepOutput> {
        if s_true.len() != self.y_hist.len {
            return Err(Error::LengthMismatch(s_true.len(), self.y_hist.len));
        }
        let step = self.steps;
        self.steps += 1;

        self.x_hist.push(x_n);
        let x_hist = self.x_hist.history();
        let y = dot(&self.w, &x_hist[..self.config.filter_len]);
        self.y_hist.push(y);
        let a = dot(s_true, self.y_hist.history());
        let e = d_n + a;

        let xp = dot(&self.s_hat, &x_hist[..self.s_hat.len()]);
        self.xprime_hist.push(xp);
        let gain = self.config.mu * e;
        for (w, &v) in self.w.iter_mut().zip(self.xprime_hist.history()) {
            *w -= gain * v;
        }

        if !e.is_finite() || e.abs() > self.config.divergence_limit || self.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step });
        }
        Ok(StepOutput { e, y, a })
    }
}

/// Result of running the controller over a whole signal.
#[derive(Debug, Clone, PartialEq)]
pub struct FxlmsRun {
    pub e: Waveform,
    pub w_final: Vec<f64>,
    /// Noise reduction after the burn-in, treating `e` as pure residual
    /// noise.
    pub nr_db: f64,
    pub steps: usize,
}

/// Runs the controller sample by sample from zero weights.
pub fn fxlms_run(x: &Waveform, d: &Waveform, config: &FxlmsConfig, s_hat: &[f64], s_true: &[f64]) -> Result<FxlmsRun> {
    x.check_compatible(d)?;
    if x.len() <= config.burn_in {
        return Err(Error::InsufficientSamples {
            needed: config.burn_in + 1,
            got: x.len(),
        });
    }
    if d.samples()[config.burn_in..].iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let mut state = FxlmsState::new(config.clone(), s_hat, s_true.len())?;
    let mut e = Vec::with_capacity(x.len());
    for (&xn, &dn) in x.samples().iter().zip(d.samples()) {
        e.push(state.step(xn, dn, s_true)?.e);
    }
    let nr_db = metrics::noise_reduction(d.samples(), &e, None, config.burn_in)?;
    Ok(FxlmsRun {
        e: Waveform::new(e, x.sample_rate())?,
        w_final: state.w,
        nr_db,
        steps: x.len(),
    })
}
