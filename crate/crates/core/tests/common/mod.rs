//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use lassl::eval::{gradient_identity_check, svd};
use lassl::numeric::tape::bce_term;
use lassl::numeric::{Architecture, Matrix, ParamSet, Tape};
use lassl::sampler::AliasTable;
use lassl::ssl::{infonce, BatchViews};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub const FD_STEP: f64 = 1e-6;

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

pub fn central_difference(theta: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut work = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            work[i] = theta[i] + FD_STEP;
            let up = f(&work);
            work[i] = theta[i] - FD_STEP;
            let down = f(&work);
            work[i] = theta[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// InfoNCE of the encoder + head on stacked views, evaluated without a tape.
fn composite_loss(params: &ParamSet, views: &Matrix, temperature: f64, symmetric: bool) -> f64 {
    let proj = params.project(&params.represent(views).unwrap()).unwrap();
    let b = views.rows() / 2;
    let v1 = proj.select_rows(&(0..b).collect::<Vec<_>>());
    let v2 = proj.select_rows(&(b..2 * b).collect::<Vec<_>>());
    infonce(&BatchViews::new((0..b).collect(), v1, v2).unwrap(), temperature, symmetric).unwrap()
}

/// Worst relative error of taped encoder + head + InfoNCE gradients against
/// finite differences. Each trial also checks the taped loss value.
pub fn composite_gradient_worst(trials: u64) -> f64 {
    let arch = Architecture::new(vec![6, 8, 5], vec![5, 7, 4]).unwrap();
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        // Random biases as well as weights, so no unit sits exactly at a kink.
        let mut params = ParamSet::init(arch.clone(), trial).unwrap();
        let theta0: Vec<f64> = (0..params.num_parameters()).map(|_| rng.random_range(-0.8..0.8)).collect();
        params.assign_flat(&theta0).unwrap();
        let b = 2 + (trial as usize % 4);
        let views = uniform_matrix(&mut rng, 2 * b, 6, 1.5);
        let symmetric = trial % 2 == 1;
        let temperature = [0.5, 0.2, 1.0][trial as usize % 3];

        let mut tape = Tape::new();
        let vars = params.to_tape(&mut tape);
        let x = tape.leaf(views.clone());
        let (_, proj) = params.forward_on_tape(&mut tape, &vars, x).unwrap();
        let loss = tape.info_nce(proj, temperature, symmetric).unwrap();
        let mut adj = tape.backward(loss).unwrap();
        let analytic = params.gradients(&vars, &mut adj).flatten();
        assert!((tape.scalar(loss) - composite_loss(&params, &views, temperature, symmetric)).abs() < 1e-12);

        let numeric = central_difference(&params.flatten(), |t| {
            let mut p = params.clone();
            p.assign_flat(t).unwrap();
            composite_loss(&p, &views, temperature, symmetric)
        });
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Worst relative error of the closed-form `Φᵀ(ŷ − y)/n` and the taped
/// gradient of the mean logistic loss against finite differences.
pub fn probe_gradient_worst(trials: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + trial);
        let (n, d) = (20 + trial as usize % 30, 1 + trial as usize % 8);
        let phi = uniform_matrix(&mut rng, n, d, 2.0);
        let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.4)))).collect();
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |t: &[f64]| {
            let z = phi.matmul(&Matrix::column_vector(t)).unwrap();
            z.as_slice().iter().zip(&y).map(|(&zi, &yi)| bce_term(zi, yi)).sum::<f64>() / n as f64
        };

        let z = phi.matmul(&Matrix::column_vector(&theta)).unwrap();
        let r: Vec<f64> = z.as_slice().iter().zip(&y).map(|(&zi, &yi)| 1.0 / (1.0 + (-zi).exp()) - yi).collect();
        let closed = phi.t_matmul(&Matrix::column_vector(&r)).unwrap().scale(1.0 / n as f64);

        let mut tape = Tape::new();
        let p = tape.leaf(phi.clone());
        let t = tape.leaf(Matrix::column_vector(&theta));
        let logits = tape.matmul(p, t).unwrap();
        let l = tape.bce_with_logits(logits, &y).unwrap();
        let adj = tape.backward(l).unwrap();
        let taped = adj.get(t).unwrap().as_slice().to_vec();
        assert!((tape.scalar(l) - loss(&theta)).abs() < 1e-12);

        let numeric = central_difference(&theta, loss);
        worst = worst.max(relative_error(closed.as_slice(), &numeric)).max(relative_error(&taped, &numeric));
    }
    worst
}

/// Singular values as square roots of the eigenvalues of `ΦᵀΦ`, descending.
pub fn eigen_singular_values(phi: &Matrix) -> Vec<f64> {
    let a = DMatrix::from_fn(phi.rows(), phi.cols(), |i, j| phi.get(i, j));
    let gram = a.transpose() * &a;
    let mut s: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

pub struct SvdCheck {
    pub eigen_relative: f64,
    pub frobenius_relative: f64,
    pub non_increasing: bool,
}

/// Jacobi SVD of random 50×8 Gaussian matrices against the eigen oracle.
pub fn svd_check(trials: u64) -> SvdCheck {
    let mut out = SvdCheck { eigen_relative: 0.0, frobenius_relative: 0.0, non_increasing: true };
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let phi = gaussian_matrix(&mut rng, 50, 8);
        let s = svd(&phi).unwrap().s;
        for (a, b) in s.iter().zip(eigen_singular_values(&phi)) {
            out.eigen_relative = out.eigen_relative.max((a - b).abs() / b);
        }
        out.non_increasing &= s.windows(2).all(|w| w[0] >= w[1]);
        let fro = phi.frobenius_norm_sq();
        let sum_sq: f64 = s.iter().map(|v| v * v).sum();
        out.frobenius_relative = out.frobenius_relative.max((fro - sum_sq).abs() / fro);
    }
    out
}

/// Worst residual of the probe-gradient identity on random (n=100, d=10) instances.
pub fn identity_worst(trials: u64) -> f64 {
    (0..trials)
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + trial);
            let phi = gaussian_matrix(&mut rng, 100, 10);
            let theta: Vec<f64> = (0..10).map(|_| rng.random_range(-0.5..0.5)).collect();
            let y: Vec<f64> = (0..100).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
            gradient_identity_check(&phi, &theta, &y).unwrap()
        })
        .fold(0.0, f64::max)
}

/// Significance level of the chi-square goodness-of-fit test.
pub const ALPHA: f64 = 1e-3;

/// Upper-`ALPHA` quantile of the chi-square distribution with `df` degrees of freedom.
pub fn chi_square_critical(df: f64) -> f64 {
    ChiSquared::new(df).unwrap().inverse_cdf(1.0 - ALPHA)
}

/// Normalized squared random weights over `n` indices, every 17th exactly zero.
pub fn fixed_pi(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0f64).powi(2)).collect();
    for i in (0..n).step_by(17) {
        w[i] = 0.0;
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

pub struct FrequencyCheck {
    /// Largest `|freq − π| / σ` over indices with positive mass.
    pub max_sigmas: f64,
    pub zero_mass_drawn: u64,
    pub chi_square: f64,
    pub critical: f64,
}

/// Draws `draws` indices from `pi` through the alias table and compares counts.
pub fn frequency_check(pi: &[f64], draws: usize, seed: u64) -> FrequencyCheck {
    let table = AliasTable::new(pi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; pi.len()];
    for _ in 0..draws {
        counts[table.sample(&mut rng)] += 1;
    }
    let m = draws as f64;
    let mut out = FrequencyCheck { max_sigmas: 0.0, zero_mass_drawn: 0, chi_square: 0.0, critical: 0.0 };
    let mut support = 0usize;
    for (&p, &k) in pi.iter().zip(&counts) {
        if p == 0.0 {
            out.zero_mass_drawn += k;
            continue;
        }
        let sigma = (p * (1.0 - p) / m).sqrt();
        out.max_sigmas = out.max_sigmas.max((k as f64 / m - p).abs() / sigma);
        out.chi_square += (k as f64 - m * p).powi(2) / (m * p);
        support += 1;
    }
    out.critical = chi_square_critical((support - 1) as f64);
    out
}

/// Closed form of the first-value-initialized EMA after observing `xs`.
pub fn ema_closed_form(xs: &[f64], eta: f64) -> f64 {
    let k = xs.len();
    let mut v = (1.0 - eta).powi(k as i32 - 1) * xs[0];
    for (j, &x) in xs.iter().enumerate().skip(1) {
        v += eta * (1.0 - eta).powi((k - 1 - j) as i32) * x;
    }
    v
}
