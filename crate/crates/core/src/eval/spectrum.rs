//! Singular spectra of representation matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::tape::sigmoid;
use crate::numeric::{dot, Matrix};

/// Thin SVD `Φ = U·diag(s)·Vᵀ` with singular values sorted descending.
#[derive(Clone, Debug)]
pub struct Svd {
    /// `n × r`
    pub u: Matrix,
    pub s: Vec<f64>,
    /// `d × r`
    pub v: Matrix,
}

const JACOBI_MAX_SWEEPS: usize = 60;

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(phi: &Matrix) -> Result<Svd> {
    if phi.rows() == 0 || phi.cols() == 0 {
        return Err(Error::Empty("svd"));
    }
    if phi.rows() < phi.cols() {
        let t = svd(&phi.transpose())?;
        return Ok(Svd { u: t.v, s: t.s, v: t.u });
    }
    let (n, d) = phi.shape();
    // Work on columns: a[j] is column j of Φ.
    let mut a: Vec<Vec<f64>> = (0..d).map(|j| (0..n).map(|i| phi.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..d).map(|j| (0..d).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..d {
            for q in p + 1..d {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = a.iter().enumerate().map(|(j, col)| (dot(col, col).sqrt(), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let s: Vec<f64> = order.iter().map(|&(sv, _)| sv).collect();
    let u = Matrix::from_fn(n, d, |i, k| {
        let (sv, j) = order[k];
        if sv > 0.0 {
            a[j][i] / sv
        } else {
            0.0
        }
    });
    let vm = Matrix::from_fn(d, d, |i, k| v[order[k].1][i]);
    Ok(Svd { u, s, v: vm })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Singular values of `Φ`, descending.
pub fn singular_values(phi: &Matrix) -> Result<Vec<f64>> {
    Ok(svd(phi)?.s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub singular_values: Vec<f64>,
    /// Divided by the largest singular value.
    pub normalized: Vec<f64>,
    pub representation_dim: usize,
    /// Sum of normalized values past the leading `ceil(0.1·d)`.
    pub tail_mass: f64,
}

/// Number of leading indices excluded from the tail mass.
pub fn head_count(d: usize) -> usize {
    (d as f64 * 0.1).ceil() as usize
}

pub fn tail_mass(normalized: &[f64], d: usize) -> f64 {
    normalized.iter().skip(head_count(d)).sum()
}

pub fn spectrum(phi: &Matrix) -> Result<SpectrumReport> {
    if phi.max_abs() == 0.0 {
        return Err(Error::Contract("spectrum of a zero matrix".into()));
    }
    let s = singular_values(phi)?;
    let top = s[0];
    let normalized: Vec<f64> = s.iter().map(|&x| x / top).collect();
    let d = phi.cols();
    Ok(SpectrumReport { tail_mass: tail_mass(&normalized, d), singular_values: s, normalized, representation_dim: d })
}

/// `tail_mass(a) − tail_mass(b)`.
pub fn compare_spectra(a: &SpectrumReport, b: &SpectrumReport) -> Result<f64> {
    if a.representation_dim != b.representation_dim {
        return Err(Error::dim(
            "compare_spectra",
            format!("d = {} vs {}", a.representation_dim, b.representation_dim),
        ));
    }
    Ok(a.tail_mass - b.tail_mass)
}

/// Relative gap between the probe gradient `Φᵀr` and its SVD form `V S Uᵀ r`,
/// with `r = σ(Φθ) − y`.
pub fn gradient_identity_check(phi: &Matrix, theta: &[f64], y: &[f64]) -> Result<f64> {
    if theta.len() != phi.cols() || y.len() != phi.rows() {
        return Err(Error::dim(
            "gradient_identity_check",
            format!("Φ {:?}, θ {}, y {}", phi.shape(), theta.len(), y.len()),
        ));
    }
    let logits = phi.matmul(&Matrix::column_vector(theta))?;
    let r: Vec<f64> = logits.as_slice().iter().zip(y).map(|(&z, &t)| sigmoid(z) - t).collect();
    let r = Matrix::column_vector(&r);
    let direct = phi.t_matmul(&r)?;
    let Svd { u, s, v } = svd(phi)?;
    let mut ut_r = u.t_matmul(&r)?;
    for (x, sv) in ut_r.as_mut_slice().iter_mut().zip(&s) {
        *x *= sv;
    }
    let via_svd = v.matmul(&ut_r)?;
    let diff = direct.sub(&via_svd)?.frobenius_norm_sq().sqrt();
    let scale = direct.frobenius_norm_sq().sqrt();
    Ok(if scale == 0.0 { diff } else { diff / scale })
}
