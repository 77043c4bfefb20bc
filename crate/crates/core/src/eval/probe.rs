//! Linear probes on frozen representations, fit by full-batch gradient
//! descent on cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::spectrum::singular_values;
use crate::numeric::tape::{bce_term, sigmoid, softmax_ce};
use crate::numeric::{ParamSet, Matrix};
use crate::synthdata::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub max_iter: usize,
    /// Stop once `‖∇‖∞` falls below this.
    pub tolerance: f64,
    pub fit_bias: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { max_iter: 10_000, tolerance: 1e-6, fit_bias: true }
    }
}

/// Fitted probe. Binary probes have one output column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    /// `d × K` (or `d × 1` for binary).
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: f64,
    pub step_size: f64,
}

impl ProbeParams {
    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    fn weight_matrix(&self) -> Matrix {
        let d = self.weights.len();
        let k = self.bias.len();
        Matrix::from_fn(d, k, |i, j| self.weights[i][j])
    }

    /// Raw logits `Φθ + b`, `n × outputs`.
    pub fn logits(&self, phi: &Matrix) -> Result<Matrix> {
        phi.matmul(&self.weight_matrix())?.add_row_broadcast(&Matrix::row_vector(&self.bias))
    }

    /// Binary probes: `σ(θᵀφ + b)` per row.
    pub fn predict_proba_binary(&self, phi: &Matrix) -> Result<Vec<f64>> {
        if self.outputs() != 1 {
            return Err(Error::Contract("not a binary probe".into()));
        }
        Ok(self.logits(phi)?.as_slice().iter().map(|&z| sigmoid(z)).collect())
    }

    /// Multiclass probes: softmax probabilities, `n × K`.
    pub fn predict_proba(&self, phi: &Matrix) -> Result<Matrix> {
        let z = self.logits(phi)?;
        let mut p = z.clone();
        for r in 0..p.rows() {
            let lse = crate::numeric::tape::log_sum_exp(z.row(r));
            p.row_mut(r).iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        Ok(p)
    }

    /// Arg-max class per row (threshold 0.5 for binary probes).
    pub fn predict(&self, phi: &Matrix) -> Result<Vec<usize>> {
        if self.outputs() == 1 {
            return Ok(self.predict_proba_binary(phi)?.into_iter().map(|p| usize::from(p >= 0.5)).collect());
        }
        let z = self.logits(phi)?;
        Ok((0..z.rows())
            .map(|r| {
                z.row(r)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                    .0
            })
            .collect())
    }
}

/// `Φ` with a trailing column of ones when fitting a bias.
fn design(phi: &Matrix, fit_bias: bool) -> Matrix {
    if !fit_bias {
        return phi.clone();
    }
    let d = phi.cols();
    Matrix::from_fn(phi.rows(), d + 1, |i, j| if j < d { phi.get(i, j) } else { 1.0 })
}

fn step_for(x: &Matrix, curvature: f64) -> Result<f64> {
    let top = singular_values(x)?[0];
    let lambda = top * top / x.rows() as f64;
    if lambda == 0.0 {
        return Err(Error::Contract("probe design matrix is zero".into()));
    }
    Ok(1.0 / (curvature * lambda))
}

/// Binary logistic probe on labels in `{0, 1}`.
///
/// Gradient `Xᵀ(ŷ − y)/n` on the mean cross-entropy; step `1/L` with
/// `L = λ_max(XᵀX)/(4n)`.
pub fn probe_binary(phi: &Matrix, y: &[f64], config: &ProbeConfig) -> Result<ProbeParams> {
    if y.len() != phi.rows() {
        return Err(Error::dim("probe", format!("{} labels for {} rows", y.len(), phi.rows())));
    }
    let x = design(phi, config.fit_bias);
    let (n, p) = x.shape();
    let step = step_for(&x, 0.25)?;
    let mut theta = Matrix::zeros(p, 1);
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let z = x.matmul(&theta)?;
        let resid: Vec<f64> = z.as_slice().iter().zip(y).map(|(&zi, &yi)| sigmoid(zi) - yi).collect();
        let grad = x.t_matmul(&Matrix::column_vector(&resid))?.scale(1.0 / n as f64);
        if grad.max_abs() < config.tolerance {
            converged = true;
            break;
        }
        if iterations == config.max_iter {
            break;
        }
        theta.axpy(-step, &grad)?;
        iterations += 1;
    }
    let final_loss = binary_loss(&x, theta.as_slice(), y)?;
    Ok(unpack(&theta, config.fit_bias, phi.cols(), 1, iterations, converged, final_loss, step))
}

/// Mean binary cross-entropy of `σ(Xθ)` against `y`.
pub fn binary_loss(x: &Matrix, theta: &[f64], y: &[f64]) -> Result<f64> {
    let z = x.matmul(&Matrix::column_vector(theta))?;
    Ok(z.as_slice().iter().zip(y).map(|(&t, &yi)| bce_term(t, yi)).sum::<f64>() / y.len() as f64)
}

/// Softmax probe over `classes` labels; step `1/L`, `L = λ_max(XᵀX)/(2n)`.
pub fn probe_multiclass(phi: &Matrix, labels: &[usize], classes: usize, config: &ProbeConfig) -> Result<ProbeParams> {
    if labels.len() != phi.rows() {
        return Err(Error::dim("probe", format!("{} labels for {} rows", labels.len(), phi.rows())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Range { index: bad, len: classes });
    }
    let x = design(phi, config.fit_bias);
    let (n, p) = x.shape();
    let step = step_for(&x, 0.5)?;
    let mut theta = Matrix::zeros(p, classes);
    let mut iterations = 0;
    let mut converged = false;
    let mut loss;
    loop {
        let z = x.matmul(&theta)?;
        let (l, resid) = softmax_ce(&z, labels);
        loss = l;
        let grad = x.t_matmul(&resid)?.scale(1.0 / n as f64);
        if grad.max_abs() < config.tolerance {
            converged = true;
            break;
        }
        if iterations == config.max_iter {
            break;
        }
        theta.axpy(-step, &grad)?;
        iterations += 1;
    }
    if !converged {
        loss = softmax_ce(&x.matmul(&theta)?, labels).0;
    }
    Ok(unpack(&theta, config.fit_bias, phi.cols(), classes, iterations, converged, loss, step))
}

#[allow(clippy::too_many_arguments)]
fn unpack(
    theta: &Matrix,
    fit_bias: bool,
    d: usize,
    k: usize,
    iterations: usize,
    converged: bool,
    final_loss: f64,
    step_size: f64,
) -> ProbeParams {
    let weights = (0..d).map(|i| theta.row(i).to_vec()).collect();
    let bias = if fit_bias { theta.row(d).to_vec() } else { vec![0.0; k] };
    ProbeParams { weights, bias, iterations, converged, final_loss, step_size }
}

/// Encoder outputs `f(x)` for every example, no augmentation.
pub fn extract(params: &ParamSet, dataset: &Dataset) -> Result<Matrix> {
    params.represent(&dataset.feature_matrix())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_clusters_fit_perfectly() {
        let phi = Matrix::from_fn(40, 2, |i, j| {
            let c = if i < 20 { -2.0 } else { 2.0 };
            c + 0.1 * ((i * 3 + j) as f64).sin()
        });
        let y: Vec<f64> = (0..40).map(|i| if i < 20 { 0.0 } else { 1.0 }).collect();
        let cfg = ProbeConfig { max_iter: 2000, ..ProbeConfig::default() };
        let p = probe_binary(&phi, &y, &cfg).unwrap();
        let pred = p.predict(&phi).unwrap();
        assert!(pred.iter().zip(&y).all(|(&a, &b)| a as f64 == b));
    }

    #[test]
    fn constant_zero_labels_drive_predictions_down() {
        let phi = Matrix::from_fn(30, 3, |i, j| ((i * 7 + j * 3) as f64).cos());
        let y = vec![0.0; 30];
        let p = probe_binary(&phi, &y, &ProbeConfig { max_iter: 5000, ..ProbeConfig::default() }).unwrap();
        let probs = p.predict_proba_binary(&phi).unwrap();
        assert!(probs.iter().all(|&q| q < 0.01));
        assert!(p.final_loss < 0.01);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let phi = Matrix::from_fn(30, 3, |i, j| ((i * 7 + j * 3) as f64).cos());
        let y: Vec<f64> = (0..30).map(|i| (i % 2) as f64).collect();
        let p = probe_binary(&phi, &y, &ProbeConfig { max_iter: 3, ..ProbeConfig::default() }).unwrap();
        assert!(!p.converged);
        assert_eq!(p.iterations, 3);
    }

    #[test]
    fn multiclass_fits_three_blobs() {
        let centers = [[3.0, 0.0], [0.0, 3.0], [-3.0, -3.0]];
        let phi = Matrix::from_fn(60, 2, |i, j| centers[i % 3][j] + 0.2 * ((i * 5 + j) as f64).sin());
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let p = probe_multiclass(&phi, &labels, 3, &ProbeConfig { max_iter: 3000, ..ProbeConfig::default() }).unwrap();
        assert_eq!(p.predict(&phi).unwrap(), labels);
        let probs = p.predict_proba(&phi).unwrap();
        for r in 0..60 {
            assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn label_count_checked() {
        let phi = Matrix::zeros(3, 2);
        assert!(probe_binary(&phi, &[0.0, 1.0], &ProbeConfig::default()).is_err());
        assert!(probe_multiclass(&phi, &[0, 1, 5], 3, &ProbeConfig::default()).is_err());
    }
}
