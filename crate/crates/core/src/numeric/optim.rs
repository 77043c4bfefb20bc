//! Plain SGD with L2 weight decay under a linear-warmup, cosine-annealed
//! learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::network::{GradientRecord, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub weight_decay: f64,
    /// Epochs of linear warmup.
    pub warmup_epochs: f64,
    /// Total epochs `T`; the rate reaches zero here.
    pub total_epochs: f64,
}

impl LrSchedule {
    /// Learning rate at a (possibly fractional) epoch position.
    ///
    /// Linear from 0 to `lr_max` over the warmup, then half-cosine down to
    /// zero at `total_epochs`.
    pub fn lr(&self, epoch: f64) -> f64 {
        if self.warmup_epochs > 0.0 && epoch < self.warmup_epochs {
            return self.lr_max * epoch / self.warmup_epochs;
        }
        let span = self.total_epochs - self.warmup_epochs;
        if span <= 0.0 {
            return self.lr_max;
        }
        let progress = ((epoch - self.warmup_epochs) / span).clamp(0.0, 1.0);
        self.lr_max * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// `θ ← θ − lr(epoch)·(g + λθ)` for every parameter.
pub fn sgd_step(
    params: &mut ParamSet,
    grads: &GradientRecord,
    epoch: f64,
    schedule: &LrSchedule,
) -> Result<f64> {
    if grads.layers.len() != params.layers().len() {
        return Err(Error::dim(
            "sgd_step",
            format!("{} gradient layers for {} parameter layers", grads.layers.len(), params.layers().len()),
        ));
    }
    let lr = schedule.lr(epoch);
    let decay = schedule.weight_decay;
    for (layer, grad) in params.layers_mut().iter_mut().zip(&grads.layers) {
        for (p, g) in [(&mut layer.weight, &grad.weight), (&mut layer.bias, &grad.bias)] {
            if p.shape() != g.shape() {
                return Err(Error::dim("sgd_step", format!("{:?} vs {:?}", p.shape(), g.shape())));
            }
            for (pv, &gv) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *pv -= lr * (gv + decay * *pv);
            }
        }
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::network::{Architecture, Layer};
    use crate::numeric::Matrix;

    fn schedule() -> LrSchedule {
        LrSchedule { lr_max: 0.5, weight_decay: 0.0, warmup_epochs: 10.0, total_epochs: 100.0 }
    }

    #[test]
    fn schedule_boundaries() {
        let s = schedule();
        assert_eq!(s.lr(0.0), 0.0);
        assert_eq!(s.lr(5.0), 0.25);
        assert_eq!(s.lr(10.0), 0.5);
        assert!(s.lr(100.0).abs() < 1e-15);
        assert!((s.lr(55.0) - 0.25).abs() < 1e-12);
        // monotone decay after warmup
        let mut prev = s.lr(10.0);
        for e in 11..=100 {
            let cur = s.lr(e as f64);
            assert!(cur <= prev);
            prev = cur;
        }
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let arch = Architecture::new(vec![3, 2], vec![2, 2]).unwrap();
        let mut p = ParamSet::init(arch, 4).unwrap();
        let before = p.clone();
        let grads = GradientRecord {
            layers: p
                .layers()
                .iter()
                .map(|l| Layer {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: Matrix::zeros(1, l.bias.cols()),
                })
                .collect(),
        };
        sgd_step(&mut p, &grads, 20.0, &schedule()).unwrap();
        assert_eq!(p, before);
    }
}
