//! Learning-speed-aware sampling.
//!
//! [`SpeedTracker`] smooths each example's two-view similarity with an
//! exponential moving average. At scheduled epochs the smoothed speeds are
//! turned into sampling weights by the clamped linear map
//! `h(s) = max(s* − γ(s − s*), 0)`, pivoted at the `r`-percentile `s*`, and
//! normalized into the categorical distribution `π` that batches are drawn
//! from. Slow learners (low similarity) get the largest weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-example EMA of two-view similarity.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedTracker {
    ema: Vec<f64>,
    seen: Vec<bool>,
    eta: f64,
}

impl SpeedTracker {
    pub fn new(n: usize, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::Config(format!("EMA weight {eta} outside (0, 1]")));
        }
        Ok(Self { ema: vec![f64::NAN; n], seen: vec![false; n], eta })
    }

    pub(crate) fn from_parts(ema: Vec<f64>, seen: Vec<bool>, eta: f64) -> Result<Self> {
        let mut t = Self::new(ema.len(), eta)?;
        if seen.len() != ema.len() {
            return Err(Error::Consistency("tracker columns differ in length".into()));
        }
        for (i, (&e, &s)) in ema.iter().zip(&seen).enumerate() {
            if s && !e.is_finite() {
                return Err(Error::Consistency(format!("observed speed {i} is not finite")));
            }
            if s {
                t.ema[i] = e;
                t.seen[i] = true;
            }
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.ema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ema.is_empty()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Smoothed speed of example `i`; `None` until first observed.
    pub fn speed(&self, i: usize) -> Option<f64> {
        self.seen.get(i).copied().filter(|&s| s).map(|_| self.ema[i])
    }

    /// Smoothed speeds; unobserved entries are NaN.
    pub fn speeds(&self) -> &[f64] {
        &self.ema
    }

    pub fn seen(&self) -> &[bool] {
        &self.seen
    }

    pub fn all_seen(&self) -> bool {
        self.seen.iter().all(|&s| s)
    }

    /// First observation initializes; later ones mix in with weight `η`.
    pub fn record(&mut self, i: usize, s_raw: f64) -> Result<()> {
        if i >= self.ema.len() {
            return Err(Error::Range { index: i, len: self.ema.len() });
        }
        if !s_raw.is_finite() {
            return Err(Error::Contract(format!("non-finite similarity for example {i}")));
        }
        if self.seen[i] {
            self.ema[i] = (1.0 - self.eta) * self.ema[i] + self.eta * s_raw;
        } else {
            self.ema[i] = s_raw;
            self.seen[i] = true;
        }
        Ok(())
    }

    /// Records a full sweep, one similarity per example.
    pub fn record_all(&mut self, similarities: &[f64]) -> Result<()> {
        if similarities.len() != self.ema.len() {
            return Err(Error::dim(
                "record_all",
                format!("{} similarities for {} examples", similarities.len(), self.ema.len()),
            ));
        }
        for (i, &s) in similarities.iter().enumerate() {
            self.record(i, s)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    /// Margin multiplier `γ`.
    pub gamma: f64,
    /// Percentile `r` that picks the pivot `s*`.
    pub percentile: f64,
    /// Uniform mixing floor `ε`.
    pub floor: f64,
}

impl Default for ScalingParams {
    fn default() -> Self {
        Self { gamma: 10.0, percentile: 0.01, floor: 0.0 }
    }
}

impl ScalingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config("gamma must be a non-negative number".into()));
        }
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return Err(Error::Config("percentile r must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.floor) {
            return Err(Error::Config("floor must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateSchedule {
    pub warmup_epochs: usize,
    pub update_every: usize,
}

impl Default for UpdateSchedule {
    fn default() -> Self {
        Self { warmup_epochs: 50, update_every: 20 }
    }
}

impl UpdateSchedule {
    /// Whether `π` is recomputed at `epoch` (1-based).
    pub fn is_update_epoch(&self, epoch: usize) -> bool {
        epoch > self.warmup_epochs && (epoch - self.warmup_epochs) % self.update_every.max(1) == 0
    }
}

/// The sampling distribution and its update bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingState {
    pi: Vec<f64>,
    pub schedule: UpdateSchedule,
    pub last_update_epoch: usize,
}

/// Tolerance on `Σπ = 1`.
pub const PI_SUM_TOLERANCE: f64 = 1e-9;

impl SamplingState {
    pub fn uniform(n: usize, schedule: UpdateSchedule) -> Self {
        Self { pi: vec![1.0 / n as f64; n], schedule, last_update_epoch: 0 }
    }

    pub fn from_probabilities(pi: Vec<f64>, schedule: UpdateSchedule, last_update_epoch: usize) -> Result<Self> {
        validate_distribution(&pi)?;
        Ok(Self { pi, schedule, last_update_epoch })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.pi.len() as f64;
        self.pi.iter().all(|&p| p == u)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.pi.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    }

    pub fn min(&self) -> f64 {
        self.pi.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.pi.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Recomputes `π` from the tracker if `epoch` is an update epoch.
    /// Returns whether an update happened.
    pub fn update(&mut self, tracker: &SpeedTracker, params: &ScalingParams, epoch: usize) -> Result<bool> {
        if !self.schedule.is_update_epoch(epoch) {
            return Ok(false);
        }
        if tracker.len() != self.pi.len() {
            return Err(Error::Consistency(format!(
                "tracker has {} examples, sampler {}",
                tracker.len(),
                self.pi.len()
            )));
        }
        if !tracker.all_seen() {
            let unseen = tracker.seen().iter().filter(|&&s| !s).count();
            return Err(Error::State(format!("{unseen} examples have no similarity yet")));
        }
        self.pi = probabilities_from_speeds(tracker.speeds(), params)?;
        self.last_update_epoch = epoch;
        Ok(true)
    }

    /// `b` i.i.d. draws from `π`.
    pub fn sample_batch<R: Rng + ?Sized>(&self, b: usize, rng: &mut R) -> Vec<usize> {
        AliasTable::new(&self.pi).sample_n(b, rng)
    }
}

/// `update_probabilities` as a free function over a state value.
pub fn update_probabilities(
    mut state: SamplingState,
    tracker: &SpeedTracker,
    params: &ScalingParams,
    epoch: usize,
) -> Result<SamplingState> {
    state.update(tracker, params, epoch)?;
    Ok(state)
}

/// `π_i = (1−ε)·h(s_i)/Σh + ε/n`, uniform when every weight is zero.
pub fn probabilities_from_speeds(speeds: &[f64], params: &ScalingParams) -> Result<Vec<f64>> {
    let pivot = percentile(speeds, params.percentile)?;
    let weights: Vec<f64> = speeds.iter().map(|&s| scale(s, pivot, params.gamma)).collect();
    Ok(normalize_weights(&weights, params.floor))
}

pub fn normalize_weights(weights: &[f64], floor: f64) -> Vec<f64> {
    let n = weights.len() as f64;
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return vec![1.0 / n; weights.len()];
    }
    weights.iter().map(|&w| (1.0 - floor) * w / total + floor / n).collect()
}

/// Lower nearest-rank percentile: the value at sorted position `ceil(r·len) − 1`.
/// Ties are ordered by value, then index.
pub fn percentile(values: &[f64], r: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile"));
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Contract(format!("percentile rank {r} outside (0, 1)")));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let rank = ((r * values.len() as f64).ceil() as usize).clamp(1, values.len());
    Ok(values[order[rank - 1]])
}

/// `h(s) = max(s* − γ·(s − s*), 0)`.
pub fn scale(s: f64, pivot: f64, gamma: f64) -> f64 {
    (pivot - gamma * (s - pivot)).max(0.0)
}

fn validate_distribution(pi: &[f64]) -> Result<()> {
    if pi.is_empty() {
        return Err(Error::Empty("sampling distribution"));
    }
    if pi.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::Contract("probabilities must be finite and non-negative".into()));
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > PI_SUM_TOLERANCE {
        return Err(Error::Contract(format!("probabilities sum to {total}")));
    }
    Ok(())
}

/// Walker/Vose alias table for O(1) categorical draws.
#[derive(Clone, Debug)]
pub struct AliasTable {
    cutoff: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    /// Builds the table from non-negative weights (need not be normalized).
    pub fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        assert!(n > 0, "alias table over an empty support");
        let total: f64 = weights.iter().sum();
        let mut scaled: Vec<f64> = weights.iter().map(|&w| w * n as f64 / total).collect();
        let mut cutoff = vec![1.0; n];
        let mut alias: Vec<usize> = (0..n).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            cutoff[s] = scaled[s];
            alias[s] = l;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers are 1 up to rounding; exact zeros must never be kept.
        for i in small.into_iter().chain(large) {
            cutoff[i] = if weights[i] > 0.0 { 1.0 } else { 0.0 };
            if weights[i] == 0.0 {
                alias[i] = weights.iter().position(|&w| w > 0.0).unwrap_or(i);
            }
        }
        Self { cutoff, alias }
    }

    pub fn len(&self) -> usize {
        self.cutoff.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cutoff.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let k = rng.random_range(0..self.cutoff.len());
        if rng.random::<f64>() < self.cutoff[k] {
            k
        } else {
            self.alias[k]
        }
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, b: usize, rng: &mut R) -> Vec<usize> {
        (0..b).map(|_| self.sample(rng)).collect()
    }
}
