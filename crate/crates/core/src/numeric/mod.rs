//! Dense matrices, reverse-mode differentiation, the encoder/head network,
//! and SGD.

mod codec;
pub mod matrix;
pub mod network;
pub mod optim;
pub mod tape;

pub use codec::write_atomic;
pub(crate) use codec::{Reader, Writer};
pub use matrix::{cosine, dot, Matrix};
pub use network::{backward, forward, Architecture, ForwardPass, GradientRecord, Layer, ParamSet};
pub use optim::{sgd_step, LrSchedule};
pub use tape::{Tape, Var};

use std::path::Path;

use crate::error::{Error, Result};

const PARAMS_MAGIC: &[u8; 4] = b"LAPM";
const PARAMS_VERSION: u32 = 1;

/// Appends a self-describing parameter block: magic, version, layer widths,
/// then every weight and bias as row-major `f64`.
pub(crate) fn encode_params(params: &ParamSet, w: &mut Writer) {
    w.bytes(PARAMS_MAGIC);
    w.u32(PARAMS_VERSION);
    let arch = params.architecture();
    for widths in [&arch.encoder, &arch.head] {
        w.u32(widths.len() as u32);
        for &x in widths {
            w.u32(x as u32);
        }
    }
    for layer in params.layers() {
        w.f64s(layer.weight.as_slice());
        w.f64s(layer.bias.as_slice());
    }
}

pub(crate) fn decode_params(r: &mut Reader<'_>) -> Result<ParamSet> {
    r.expect_magic(PARAMS_MAGIC)?;
    r.expect_version(PARAMS_VERSION)?;
    let read_widths = |r: &mut Reader<'_>| -> Result<Vec<usize>> {
        let n = r.u32()? as usize;
        r.check_remaining(n, 4)?;
        (0..n).map(|_| Ok(r.u32()? as usize)).collect()
    };
    let encoder = read_widths(r)?;
    let head = read_widths(r)?;
    let arch = Architecture::new(encoder, head).map_err(|e| Error::Format(e.to_string()))?;
    let mut layers = Vec::new();
    for (fan_in, fan_out) in arch.layer_shapes() {
        let weight = Matrix::from_vec(fan_in, fan_out, r.f64s(fan_in * fan_out)?)
            .map_err(|e| Error::Format(e.to_string()))?;
        let bias = Matrix::from_vec(1, fan_out, r.f64s(fan_out)?)
            .map_err(|e| Error::Format(e.to_string()))?;
        layers.push(Layer { weight, bias });
    }
    ParamSet::from_layers(arch, layers)
}

/// Writes a parameter-only checkpoint.
pub fn save_params(params: &ParamSet, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    encode_params(params, &mut w);
    write_atomic(path, &w.into_inner())?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamSet> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes);
    let params = decode_params(&mut r)?;
    r.finish()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_round_trip_bit_exact() {
        let arch = Architecture::new(vec![5, 4, 3], vec![3, 2]).unwrap();
        let p = ParamSet::init(arch, 99).unwrap();
        let mut w = Writer::new();
        encode_params(&p, &mut w);
        let bytes = w.into_inner();
        let mut r = Reader::new(&bytes);
        let q = decode_params(&mut r).unwrap();
        r.finish().unwrap();
        assert_eq!(p.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   q.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>());

        let mut truncated = Reader::new(&bytes[..bytes.len() - 3]);
        assert!(matches!(decode_params(&mut truncated), Err(Error::Format(_))));

        let mut bumped = bytes.clone();
        bumped[4] = 2;
        assert!(matches!(decode_params(&mut Reader::new(&bumped)), Err(Error::Version { .. })));
    }
}
