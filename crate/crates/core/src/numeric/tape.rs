//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the tape in reverse, accumulating adjoints. The op set is exactly
//! what the encoder, projection head, contrastive loss, and linear probes
//! need.

use crate::error::{Error, Result};
use crate::numeric::matrix::{dot, Matrix, MIN_ROW_NORM};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Relu(Var),
    L2NormalizeRows { input: Var, norms: Vec<f64> },
    Sum(Var),
    HalfSquaredNorm(Var),
    /// Contrastive loss on a stacked `2b × d'` matrix of unit rows: rows
    /// `0..b` are first views, rows `b..2b` second views. `dlogits` caches
    /// the gradient of the loss with respect to the `b × b` logit matrix.
    InfoNce { input: Var, batch: usize, temperature: f64, dlogits: Matrix },
    /// Mean binary cross-entropy on an `n × 1` logit column.
    BceWithLogits { logits: Var, residual: Vec<f64> },
    /// Mean softmax cross-entropy on `n × K` logits.
    SoftmaxCrossEntropy { logits: Var, residual: Matrix },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints indexed by [`Var`]; `None` for nodes the loss does not reach.
#[derive(Debug)]
pub struct Adjoints {
    grads: Vec<Option<Matrix>>,
}

impl Adjoints {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` when the loss does not depend on it.
    pub fn take_or_zeros(&mut self, var: Var, shape: (usize, usize)) -> Matrix {
        self.grads
            .get_mut(var.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value.get(0, 0)
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = self.value(x).add_row_broadcast(self.value(bias))?;
        Ok(self.push(value, Op::AddRowBias(x, bias)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let input = self.value(x);
        let mut norms = Vec::with_capacity(input.rows());
        let mut value = input.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let norm = dot(row, row).sqrt();
            if !(norm >= MIN_ROW_NORM) {
                return Err(Error::DegenerateRow { row: r, norm });
            }
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        Ok(self.push(value, Op::L2NormalizeRows { input: x, norms }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    /// `½‖x‖²` over all entries.
    pub fn half_squared_norm(&mut self, x: Var) -> Var {
        let value = Matrix::filled(1, 1, 0.5 * self.value(x).frobenius_norm_sq());
        self.push(value, Op::HalfSquaredNorm(x))
    }

    /// InfoNCE on stacked views. With `symmetric` the loss is averaged over
    /// both view roles; otherwise first views are anchors and second views
    /// supply the positive and the `b − 1` negatives.
    pub fn info_nce(&mut self, stacked: Var, temperature: f64, symmetric: bool) -> Result<Var> {
        let z = self.value(stacked);
        if z.rows() % 2 != 0 || z.rows() < 4 {
            return Err(Error::dim(
                "info_nce",
                format!("need 2b rows with b >= 2, got {}", z.rows()),
            ));
        }
        let b = z.rows() / 2;
        let (z1, z2) = split_views(z, b);
        let logits = z1.matmul_t(&z2)?.scale(1.0 / temperature);
        let (loss, dlogits) = info_nce_logits(&logits, symmetric);
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::InfoNce { input: stacked, batch: b, temperature, dlogits },
        ))
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        if z.cols() != 1 || z.rows() != targets.len() {
            return Err(Error::dim(
                "bce_with_logits",
                format!("logits {:?} for {} targets", z.shape(), targets.len()),
            ));
        }
        let n = targets.len() as f64;
        let mut loss = 0.0;
        let mut residual = Vec::with_capacity(targets.len());
        for (&t, &y) in z.as_slice().iter().zip(targets) {
            loss += bce_term(t, y);
            residual.push(sigmoid(t) - y);
        }
        Ok(self.push(Matrix::filled(1, 1, loss / n), Op::BceWithLogits { logits, residual }))
    }

    /// Mean softmax cross-entropy of `n × K` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != labels.len() {
            return Err(Error::dim(
                "softmax_cross_entropy",
                format!("{} rows for {} labels", z.rows(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= z.cols()) {
            return Err(Error::Range { index: bad, len: z.cols() });
        }
        let (loss, residual) = softmax_ce(z, labels);
        Ok(self.push(Matrix::filled(1, 1, loss), Op::SoftmaxCrossEntropy { logits, residual }))
    }

    /// Reverse sweep from a scalar node with seed 1.
    pub fn backward(&self, loss: Var) -> Result<Adjoints> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::dim("backward", format!("loss must be 1x1, got {shape:?}")));
        }
        self.backward_with_seed(loss, Matrix::filled(1, 1, 1.0))
    }

    /// Reverse sweep from any node given the adjoint of that node.
    pub fn backward_with_seed(&self, output: Var, seed: Matrix) -> Result<Adjoints> {
        if output.0 >= self.nodes.len() {
            return Err(Error::State(format!("variable {} is not on this tape", output.0)));
        }
        if seed.shape() != self.value(output).shape() {
            return Err(Error::dim(
                "backward",
                format!("seed {:?} for node {:?}", seed.shape(), self.value(output).shape()),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b))?;
                    let gb = self.value(*a).t_matmul(&g)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::AddRowBias(x, bias) => {
                    let gb = g.column_sums();
                    accumulate(&mut grads, *bias, gb)?;
                    accumulate(&mut grads, *x, g)?;
                }
                Op::Relu(x) => {
                    let input = self.value(*x);
                    let mut gx = g;
                    for (gv, &xv) in gx.as_mut_slice().iter_mut().zip(input.as_slice()) {
                        if xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::L2NormalizeRows { input, norms } => {
                    let y = &node.value;
                    let mut gx = g;
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let proj = dot(gx.row(r), yr);
                        let inv = 1.0 / norms[r];
                        for (gv, &yv) in gx.row_mut(r).iter_mut().zip(yr) {
                            *gv = (*gv - yv * proj) * inv;
                        }
                    }
                    accumulate(&mut grads, *input, gx)?;
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut grads, *x, Matrix::filled(r, c, g.get(0, 0)))?;
                }
                Op::HalfSquaredNorm(x) => {
                    accumulate(&mut grads, *x, self.value(*x).scale(g.get(0, 0)))?;
                }
                Op::InfoNce { input, batch, temperature, dlogits } => {
                    let z = self.value(*input);
                    let (z1, z2) = split_views(z, *batch);
                    let s = g.get(0, 0) / temperature;
                    let g1 = dlogits.matmul(&z2)?.scale(s);
                    let g2 = dlogits.t_matmul(&z1)?.scale(s);
                    accumulate(&mut grads, *input, g1.vstack(&g2)?)?;
                }
                Op::BceWithLogits { logits, residual } => {
                    let n = residual.len() as f64;
                    let s = g.get(0, 0) / n;
                    let gz: Vec<f64> = residual.iter().map(|r| r * s).collect();
                    accumulate(&mut grads, *logits, Matrix::column_vector(&gz))?;
                }
                Op::SoftmaxCrossEntropy { logits, residual } => {
                    let n = residual.rows() as f64;
                    accumulate(&mut grads, *logits, residual.scale(g.get(0, 0) / n))?;
                }
            }
        }
        Ok(Adjoints { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], var: Var, g: Matrix) -> Result<()> {
    match &mut grads[var.0] {
        Some(existing) => existing.axpy(1.0, &g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn split_views(z: &Matrix, b: usize) -> (Matrix, Matrix) {
    let first: Vec<usize> = (0..b).collect();
    let second: Vec<usize> = (b..2 * b).collect();
    (z.select_rows(&first), z.select_rows(&second))
}

/// Loss and its gradient with respect to the `b × b` logits, where
/// `logits[a][i] = z1_a · z2_i / τ` and the diagonal holds positives.
pub(crate) fn info_nce_logits(logits: &Matrix, symmetric: bool) -> (f64, Matrix) {
    let b = logits.rows();
    let bf = b as f64;
    let mut dlogits = Matrix::zeros(b, b);

    // Anchors are first views: softmax along rows.
    let mut row_loss = 0.0;
    for a in 0..b {
        let row = logits.row(a);
        let lse = log_sum_exp(row);
        row_loss += lse - row[a];
        for (i, &l) in row.iter().enumerate() {
            let p = (l - lse).exp();
            let target = if i == a { 1.0 } else { 0.0 };
            dlogits.set(a, i, (p - target) / bf);
        }
    }
    row_loss /= bf;
    if !symmetric {
        return (row_loss, dlogits);
    }

    // Anchors are second views: softmax along columns.
    let mut col_loss = 0.0;
    let mut column = vec![0.0; b];
    for a in 0..b {
        for (i, c) in column.iter_mut().enumerate() {
            *c = logits.get(i, a);
        }
        let lse = log_sum_exp(&column);
        col_loss += lse - column[a];
        for (i, &l) in column.iter().enumerate() {
            let p = (l - lse).exp();
            let target = if i == a { 1.0 } else { 0.0 };
            let prev = dlogits.get(i, a);
            dlogits.set(i, a, 0.5 * prev + 0.5 * (p - target) / bf);
        }
    }
    col_loss /= bf;
    (0.5 * (row_loss + col_loss), dlogits)
}

/// Max-shifted `ln Σ exp(x)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `−[y ln σ(t) + (1−y) ln(1−σ(t))]` in a form that never overflows.
pub fn bce_term(t: f64, y: f64) -> f64 {
    // ln(1 + e^t) − y·t
    let softplus = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
    softplus - y * t
}

/// Mean cross-entropy and the per-row `softmax − onehot` residual.
pub(crate) fn softmax_ce(z: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let mut residual = Matrix::zeros(z.rows(), z.cols());
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = z.row(r);
        let lse = log_sum_exp(row);
        loss += lse - row[label];
        for (c, out) in residual.row_mut(r).iter_mut().enumerate() {
            *out = (row[c] - lse).exp() - if c == label { 1.0 } else { 0.0 };
        }
    }
    (loss / z.rows().max(1) as f64, residual)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        // Small LCG keeps these tests free of RNG plumbing.
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Matrix::from_fn(rows, cols, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn sum_gives_all_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(rand_matrix(3, 4, 1));
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().as_slice().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn half_squared_norm_gives_input() {
        let theta = rand_matrix(5, 2, 2);
        let mut tape = Tape::new();
        let x = tape.leaf(theta.clone());
        let loss = tape.half_squared_norm(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &theta);
    }

    #[test]
    fn shared_leaf_accumulates() {
        // loss = sum(x·x) with x 1×1 → d/dx = 2x
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::filled(1, 1, 3.0));
        let y = tape.matmul(x, x).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::zeros(2, 2));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn info_nce_uniform_denominator() {
        for b in [2usize, 8, 128] {
            let z = Matrix::filled(2 * b, 3, 1.0 / 3f64.sqrt());
            let mut tape = Tape::new();
            let v = tape.leaf(z);
            let loss = tape.info_nce(v, 0.5, false).unwrap();
            assert!((tape.scalar(loss) - (b as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_dlogits_average_both_roles() {
        let logits = rand_matrix(4, 4, 9);
        let (_, rows) = info_nce_logits(&logits, false);
        let (_, sym) = info_nce_logits(&logits, true);
        let (_, cols) = info_nce_logits(&logits.transpose(), false);
        for i in 0..4 {
            for j in 0..4 {
                let want = 0.5 * (rows.get(i, j) + cols.get(j, i));
                assert!((sym.get(i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn bce_term_matches_naive_form() {
        for &(t, y) in &[(0.3, 1.0), (-2.0, 0.0), (1.5, 0.0), (-0.7, 1.0)] {
            let p = sigmoid(t);
            let naive = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            assert!((bce_term(t, y) - naive).abs() < 1e-12);
        }
        assert!(bce_term(800.0, 1.0).abs() < 1e-12);
        assert!(bce_term(-800.0, 0.0).abs() < 1e-12);
    }
}
