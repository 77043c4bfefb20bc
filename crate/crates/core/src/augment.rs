//! Two-view stochastic augmentation for feature vectors.
//!
//! Each view is `scale · (x + jitter)` with a random subset of coordinates
//! zeroed. Randomness comes from a stream keyed by the global seed, the
//! stream kind, the epoch, the slot being augmented, and the view slot.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{self, domain};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub jitter_sigma: f64,
    /// Fraction of coordinates zeroed in each view.
    pub mask_fraction: f64,
    pub scale_low: f64,
    pub scale_high: f64,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self { jitter_sigma: 0.5, mask_fraction: 0.2, scale_low: 0.8, scale_high: 1.25, seed: 0 }
    }
}

/// Which family of draws a view belongs to. Similarity sweeps key views by
/// example index; training keys them by the slot in the epoch's draw
/// sequence so repeated draws of one example see fresh views.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewStream {
    Sweep,
    Train,
}

impl AugmentPolicy {
    /// The no-op policy.
    pub fn identity() -> Self {
        Self { jitter_sigma: 0.0, mask_fraction: 0.0, scale_low: 1.0, scale_high: 1.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_sigma >= 0.0) {
            return Err(Error::Config("jitter_sigma must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(Error::Config("mask_fraction must lie in [0, 1)".into()));
        }
        if !(self.scale_low > 0.0 && self.scale_low <= self.scale_high && self.scale_high.is_finite()) {
            return Err(Error::Config("scale range must satisfy 0 < low <= high".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.jitter_sigma == 0.0 && self.mask_fraction == 0.0 && self.scale_low == 1.0 && self.scale_high == 1.0
    }

    /// Writes one view of `x` into `out`.
    pub fn view_into(&self, x: &[f64], stream: ViewStream, epoch: u64, slot: u64, view: u64, out: &mut [f64]) {
        debug_assert_eq!(x.len(), out.len());
        if self.is_identity() {
            out.copy_from_slice(x);
            return;
        }
        let tag = match stream {
            ViewStream::Sweep => domain::SWEEP_VIEWS,
            ViewStream::Train => domain::TRAIN_VIEWS,
        };
        let mut rng = seeds::rng(&[self.seed, tag, epoch, slot, view]);
        let scale = if self.scale_high > self.scale_low {
            rng.random_range(self.scale_low..self.scale_high)
        } else {
            self.scale_low
        };
        for (o, &xi) in out.iter_mut().zip(x) {
            let noise: f64 = if self.jitter_sigma > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            *o = scale * (xi + self.jitter_sigma * noise);
        }
        let masked = self.masked_count(x.len());
        if masked > 0 {
            for i in index::sample(&mut rng, x.len(), masked) {
                out[i] = 0.0;
            }
        }
    }

    /// Number of coordinates zeroed per view, `round(mask_fraction · m)`.
    pub fn masked_count(&self, m: usize) -> usize {
        ((self.mask_fraction * m as f64).round() as usize).min(m.saturating_sub(1))
    }
}

/// Two independent views of `x` for example `index` at `epoch`.
pub fn two_views(x: &[f64], policy: &AugmentPolicy, epoch: u64, index: u64) -> (Vec<f64>, Vec<f64>) {
    two_views_in(x, policy, ViewStream::Sweep, epoch, index)
}

pub fn two_views_in(
    x: &[f64],
    policy: &AugmentPolicy,
    stream: ViewStream,
    epoch: u64,
    slot: u64,
) -> (Vec<f64>, Vec<f64>) {
    let mut a = vec![0.0; x.len()];
    let mut b = vec![0.0; x.len()];
    policy.view_into(x, stream, epoch, slot, 0, &mut a);
    policy.view_into(x, stream, epoch, slot, 1, &mut b);
    (a, b)
}
