//! Reverse-mode gradients against central finite differences.

mod common;

use common::{central_difference, relative_error, uniform_matrix};
use lassl::numeric::{Matrix, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOLERANCE: f64 = 1e-5;
const TRIALS: u64 = 100;

#[test]
fn encoder_head_infonce_composite() {
    let worst = common::composite_gradient_worst(TRIALS);
    println!("composite worst relative error {worst:e}");
    assert!(worst < TOLERANCE);
}

#[test]
fn probe_binary_cross_entropy() {
    let worst = common::probe_gradient_worst(TRIALS);
    assert!(worst < TOLERANCE, "worst relative error {worst:e}");
}

#[test]
fn probe_softmax_cross_entropy() {
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + trial);
        let (n, d, k) = (15 + trial as usize % 10, 2 + trial as usize % 4, 3 + trial as usize % 3);
        let phi = uniform_matrix(&mut rng, n, d, 1.5);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let theta: Vec<f64> = (0..d * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |t: &[f64]| {
            let w = Matrix::from_vec(d, k, t.to_vec()).unwrap();
            let z = phi.matmul(&w).unwrap();
            (0..n)
                .map(|i| {
                    let row = z.row(i);
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() - row[labels[i]]
                })
                .sum::<f64>()
                / n as f64
        };
        let mut tape = Tape::new();
        let p = tape.leaf(phi.clone());
        let w = tape.leaf(Matrix::from_vec(d, k, theta.clone()).unwrap());
        let z = tape.matmul(p, w).unwrap();
        let l = tape.softmax_cross_entropy(z, &labels).unwrap();
        let adj = tape.backward(l).unwrap();
        let numeric = central_difference(&theta, loss);
        assert!((tape.scalar(l) - loss(&theta)).abs() < 1e-12);
        assert!(relative_error(adj.get(w).unwrap().as_slice(), &numeric) < TOLERANCE, "trial {trial}");
    }
}
