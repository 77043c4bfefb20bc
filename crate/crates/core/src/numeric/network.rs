//! Encoder `f` and projection head `ψ` as stacks of dense layers.
//!
//! The encoder is `Linear (ReLU Linear)*`; its last layer is linear and
//! produces the representation. The head is the same shape and its output
//! is ℓ2-normalized to give the projection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::matrix::Matrix;
use crate::numeric::tape::{Adjoints, Tape, Var};

/// Layer widths of the encoder and projection head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// `[m, hidden.., d]`
    pub encoder: Vec<usize>,
    /// `[d, hidden.., d']`
    pub head: Vec<usize>,
}

impl Architecture {
    pub fn new(encoder: Vec<usize>, head: Vec<usize>) -> Result<Self> {
        let arch = Self { encoder, head };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.len() < 2 || self.head.len() < 2 {
            return Err(Error::Config("encoder and head need at least two widths each".into()));
        }
        if self.encoder.iter().chain(&self.head).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.encoder.last() != self.head.first() {
            return Err(Error::Config(format!(
                "encoder output width {} does not feed head input width {}",
                self.encoder.last().unwrap(),
                self.head[0]
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0]
    }

    pub fn representation_dim(&self) -> usize {
        *self.encoder.last().unwrap()
    }

    pub fn projection_dim(&self) -> usize {
        *self.head.last().unwrap()
    }

    fn encoder_layers(&self) -> usize {
        self.encoder.len() - 1
    }

    /// `(fan_in, fan_out)` of every layer, encoder first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let enc = self.encoder.windows(2).map(|w| (w[0], w[1]));
        let head = self.head.windows(2).map(|w| (w[0], w[1]));
        enc.chain(head).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`
    pub weight: Matrix,
    /// `1 × fan_out`
    pub bias: Matrix,
}

/// All trainable parameters of the encoder and head.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    arch: Architecture,
    layers: Vec<Layer>,
}

/// One gradient per parameter, shaped like its [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientRecord {
    pub layers: Vec<Layer>,
}

impl GradientRecord {
    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    /// All gradient entries, layer by layer (weight then bias).
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weight.as_slice());
        out.extend_from_slice(l.bias.as_slice());
    }
    out
}

impl ParamSet {
    /// Glorot-uniform weights in `±sqrt(6/(fan_in+fan_out))`, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight =
                    Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..=limit));
                Layer { weight, bias: Matrix::zeros(1, fan_out) }
            })
            .collect();
        Ok(Self { arch, layers })
    }

    /// Builds a parameter set from explicit layers, checking every shape.
    pub fn from_layers(arch: Architecture, layers: Vec<Layer>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::dim(
                "ParamSet::from_layers",
                format!("{} layers for {} shapes", layers.len(), shapes.len()),
            ));
        }
        for (i, ((fan_in, fan_out), layer)) in shapes.iter().zip(&layers).enumerate() {
            if layer.weight.shape() != (*fan_in, *fan_out) || layer.bias.shape() != (1, *fan_out) {
                return Err(Error::dim(
                    "ParamSet::from_layers",
                    format!(
                        "layer {i}: weight {:?}, bias {:?}, expected ({fan_in}, {fan_out})",
                        layer.weight.shape(),
                        layer.bias.shape()
                    ),
                ));
            }
            if !layer.weight.is_finite() || !layer.bias.is_finite() {
                return Err(Error::Contract(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { arch, layers })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    /// Overwrites every parameter from a flat vector in [`flatten`](Self::flatten) order.
    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_parameters() {
            return Err(Error::dim(
                "assign_flat",
                format!("{} values for {} parameters", values.len(), self.num_parameters()),
            ));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for m in [&mut layer.weight, &mut layer.bias] {
                let len = m.as_slice().len();
                m.as_mut_slice().copy_from_slice(&values[offset..offset + len]);
                offset += len;
            }
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.arch.input_dim() {
            return Err(Error::dim(
                "forward",
                format!("batch has {} columns, encoder expects {}", batch.cols(), self.arch.input_dim()),
            ));
        }
        Ok(())
    }

    /// Representation `f(x)` without recording.
    pub fn represent(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_batch(batch)?;
        let n_enc = self.arch.encoder_layers();
        dense_stack(batch, &self.layers[..n_enc])
    }

    /// Unit-norm projection `ψ(f(x))` from a representation.
    pub fn project(&self, representation: &Matrix) -> Result<Matrix> {
        let n_enc = self.arch.encoder_layers();
        dense_stack(representation, &self.layers[n_enc..])?.l2_normalize_rows()
    }

    /// Pushes every parameter onto `tape` as a leaf.
    pub fn to_tape(&self, tape: &mut Tape) -> TapeParams {
        let vars = self
            .layers
            .iter()
            .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
            .collect();
        TapeParams { vars }
    }

    /// Records the encoder and head on `tape`; returns `(representation, projection)`.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        params: &TapeParams,
        batch: Var,
    ) -> Result<(Var, Var)> {
        self.check_batch(tape.value(batch))?;
        let n_enc = self.arch.encoder_layers();
        let repr = dense_stack_on_tape(tape, batch, &params.vars[..n_enc])?;
        let head = dense_stack_on_tape(tape, repr, &params.vars[n_enc..])?;
        let proj = tape.l2_normalize_rows(head)?;
        Ok((repr, proj))
    }

    /// Collects parameter gradients from a finished reverse sweep.
    pub fn gradients(&self, params: &TapeParams, adjoints: &mut Adjoints) -> GradientRecord {
        let layers = self
            .layers
            .iter()
            .zip(&params.vars)
            .map(|(l, &(w, b))| Layer {
                weight: adjoints.take_or_zeros(w, l.weight.shape()),
                bias: adjoints.take_or_zeros(b, l.bias.shape()),
            })
            .collect();
        GradientRecord { layers }
    }
}

/// Tape handles of a [`ParamSet`]'s weights and biases.
#[derive(Clone, Debug)]
pub struct TapeParams {
    vars: Vec<(Var, Var)>,
}

/// Output of [`forward`]: the representation, the unit-norm projection, and
/// the recorded trace when one was requested.
#[derive(Debug)]
pub struct ForwardPass {
    pub representation: Matrix,
    pub projection: Matrix,
    pub trace: Option<Trace>,
}

#[derive(Debug)]
pub struct Trace {
    pub tape: Tape,
    pub params: TapeParams,
    pub representation: Var,
    pub projection: Var,
}

/// Runs `ψ ∘ f` on a batch, recording a tape when `record_tape` is set.
pub fn forward(params: &ParamSet, batch: &Matrix, record_tape: bool) -> Result<ForwardPass> {
    if !record_tape {
        let representation = params.represent(batch)?;
        let projection = params.project(&representation)?;
        return Ok(ForwardPass { representation, projection, trace: None });
    }
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape);
    let x = tape.leaf(batch.clone());
    let (repr, proj) = params.forward_on_tape(&mut tape, &vars, x)?;
    Ok(ForwardPass {
        representation: tape.value(repr).clone(),
        projection: tape.value(proj).clone(),
        trace: Some(Trace { tape, params: vars, representation: repr, projection: proj }),
    })
}

/// Back-propagates `seed` (the adjoint of the projection) to the parameters.
pub fn backward(params: &ParamSet, pass: &ForwardPass, seed: Matrix) -> Result<GradientRecord> {
    let trace = pass
        .trace
        .as_ref()
        .ok_or_else(|| Error::State("backward called on a forward pass recorded without a tape".into()))?;
    let mut adj = trace.tape.backward_with_seed(trace.projection, seed)?;
    Ok(params.gradients(&trace.params, &mut adj))
}

fn dense_stack(input: &Matrix, layers: &[Layer]) -> Result<Matrix> {
    let mut h = input.clone();
    for (i, layer) in layers.iter().enumerate() {
        h = h.matmul(&layer.weight)?.add_row_broadcast(&layer.bias)?;
        if i + 1 < layers.len() {
            h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    Ok(h)
}

fn dense_stack_on_tape(tape: &mut Tape, input: Var, layers: &[(Var, Var)]) -> Result<Var> {
    let mut h = input;
    for (i, &(w, b)) in layers.iter().enumerate() {
        let z = tape.matmul(h, w)?;
        h = tape.add_row_bias(z, b)?;
        if i + 1 < layers.len() {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> Architecture {
        Architecture::new(vec![6, 5, 4], vec![4, 4, 3]).unwrap()
    }

    #[test]
    fn init_respects_glorot_bound() {
        let p = ParamSet::init(arch(), 7).unwrap();
        for (layer, (fi, fo)) in p.layers().iter().zip(arch().layer_shapes()) {
            let limit = (6.0 / (fi + fo) as f64).sqrt();
            assert!(layer.weight.max_abs() <= limit);
            assert_eq!(layer.bias.max_abs(), 0.0);
        }
        assert_eq!(p, ParamSet::init(arch(), 7).unwrap());
        assert_ne!(p, ParamSet::init(arch(), 8).unwrap());
    }

    #[test]
    fn mismatched_architecture_rejected() {
        assert!(Architecture::new(vec![6, 4], vec![5, 3]).is_err());
        assert!(Architecture::new(vec![6], vec![6, 3]).is_err());
    }

    #[test]
    fn zero_network_hits_degenerate_row() {
        let mut p = ParamSet::init(arch(), 1).unwrap();
        for l in p.layers_mut() {
            l.weight = Matrix::zeros(l.weight.rows(), l.weight.cols());
        }
        let batch = Matrix::filled(2, 6, 1.0);
        assert!(matches!(forward(&p, &batch, false), Err(Error::DegenerateRow { .. })));
        assert!(matches!(forward(&p, &batch, true), Err(Error::DegenerateRow { .. })));
    }

    #[test]
    fn identity_encoder_passes_input_through() {
        let arch = Architecture::new(vec![3, 3], vec![3, 2]).unwrap();
        let mut p = ParamSet::init(arch, 3).unwrap();
        p.layers_mut()[0].weight = Matrix::identity(3);
        let batch = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 3.0, -1.0]]).unwrap();
        let pass = forward(&p, &batch, false).unwrap();
        assert_eq!(pass.representation, batch);
    }

    #[test]
    fn forward_shapes_and_unit_rows() {
        let p = ParamSet::init(arch(), 5).unwrap();
        let batch = Matrix::from_fn(4, 6, |r, c| ((r * 7 + c) as f64).cos());
        let pass = forward(&p, &batch, true).unwrap();
        assert_eq!(pass.representation.shape(), (4, 4));
        assert_eq!(pass.projection.shape(), (4, 3));
        for r in 0..4 {
            let n: f64 = pass.projection.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        let plain = forward(&p, &batch, false).unwrap();
        assert_eq!(plain.projection, pass.projection);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = ParamSet::init(arch(), 5).unwrap();
        assert!(matches!(
            forward(&p, &Matrix::zeros(2, 5), false),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn backward_without_tape_is_state_error() {
        let p = ParamSet::init(arch(), 5).unwrap();
        let batch = Matrix::filled(2, 6, 0.3);
        let pass = forward(&p, &batch, false).unwrap();
        let seed = Matrix::zeros(2, 3);
        assert!(matches!(backward(&p, &pass, seed), Err(Error::State(_))));
    }

    #[test]
    fn flat_round_trip() {
        let p = ParamSet::init(arch(), 11).unwrap();
        let mut q = ParamSet::init(arch(), 12).unwrap();
        q.assign_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
    }
}
