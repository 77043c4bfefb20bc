//! Synthetic datasets with a controllable spurious correlation between a
//! target attribute and one or more confound attributes.
//!
//! Every attribute value owns a fixed random unit prototype in `R^m`; all
//! prototypes are mutually orthogonal. An example's features are the scaled
//! sum of its target prototype and its confound prototypes plus isotropic
//! Gaussian noise. Within each target class a fraction `k` of examples take
//! the confound value paired with the class (identity pairing) and the rest
//! draw uniformly from the other values.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{write_atomic, Matrix, Reader, Writer};
use crate::seeds::{self, domain};

const MAGIC: &[u8; 4] = b"LASD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub cardinality: usize,
}

impl AttributeSpec {
    pub fn new(name: impl Into<String>, cardinality: usize) -> Self {
        Self { name: name.into(), cardinality }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfoundSpec {
    pub attribute: AttributeSpec,
    /// Fraction `k` of each class whose confound value matches the class.
    pub aligned_ratio: f64,
    pub signal_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    pub input_dim: usize,
    pub target: AttributeSpec,
    pub confounds: Vec<ConfoundSpec>,
    pub target_signal_scale: f64,
    pub noise_sigma: f64,
    /// Fixes the prototype directions; splits sharing a seed share geometry.
    pub seed: u64,
    /// Selects the example stream, so train and test splits differ.
    pub stream: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            input_dim: 64,
            target: AttributeSpec::new("target", 10),
            confounds: vec![ConfoundSpec {
                attribute: AttributeSpec::new("confound", 10),
                aligned_ratio: 0.95,
                signal_scale: 2.0,
            }],
            target_signal_scale: 1.0,
            noise_sigma: 1.0,
            seed: 0,
            stream: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.target.cardinality;
        if k < 2 {
            return Err(Error::Config("target cardinality must be at least 2".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if k > u16::MAX as usize {
            return Err(Error::Config("cardinality does not fit the u16 attribute columns".into()));
        }
        for (j, c) in self.confounds.iter().enumerate() {
            if c.attribute.cardinality != k {
                return Err(Error::Config(format!(
                    "confound {j} has cardinality {}, target has {k}",
                    c.attribute.cardinality
                )));
            }
            if !(0.0..=1.0).contains(&c.aligned_ratio) {
                return Err(Error::Config(format!("confound {j}: aligned ratio {} outside [0, 1]", c.aligned_ratio)));
            }
            if !(c.signal_scale > 0.0) {
                return Err(Error::Config(format!("confound {j}: signal scale must be positive")));
            }
        }
        if !(self.target_signal_scale > 0.0) {
            return Err(Error::Config("target signal scale must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        let needed = (1 + self.confounds.len()) * k;
        if self.input_dim < needed {
            return Err(Error::InsufficientDimension { m: self.input_dim, needed });
        }
        Ok(())
    }

    /// Same geometry, a fresh example stream, and no correlation: every
    /// confound is aligned at the chance rate `1/K`.
    pub fn balanced_split(&self, n: usize, stream: u64) -> Self {
        let mut cfg = self.clone();
        cfg.n = n;
        cfg.stream = stream;
        let chance = 1.0 / self.target.cardinality as f64;
        for c in &mut cfg.confounds {
            c.aligned_ratio = chance;
        }
        cfg
    }

    pub fn with_aligned_ratio(mut self, k: f64) -> Self {
        for c in &mut self.confounds {
            c.aligned_ratio = k;
        }
        self
    }
}

/// Borrowed view of one example.
#[derive(Clone, Debug, PartialEq)]
pub struct Example<'a> {
    pub features: &'a [f32],
    pub target_value: usize,
    pub confound_values: Vec<usize>,
    pub aligned: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    config: GeneratorConfig,
    /// `n × m`, row-major.
    features: Vec<f32>,
    targets: Vec<u16>,
    /// One column per confound.
    confounds: Vec<Vec<u16>>,
}

/// Mutually orthonormal prototypes: `target[c]` and `confounds[j][c]`.
#[derive(Clone, Debug)]
pub struct Prototypes {
    pub target: Vec<Vec<f64>>,
    pub confounds: Vec<Vec<Vec<f64>>>,
}

pub fn prototypes(config: &GeneratorConfig) -> Result<Prototypes> {
    config.validate()?;
    let k = config.target.cardinality;
    let m = config.input_dim;
    let total = (1 + config.confounds.len()) * k;
    let mut rng = seeds::rng(&[config.seed, domain::PROTOTYPES]);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(total);
    while basis.len() < total {
        let mut v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        // Two Gram-Schmidt passes keep orthogonality at rounding level.
        for _ in 0..2 {
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut chunks = basis.chunks(k).map(<[Vec<f64>]>::to_vec);
    let target = chunks.next().expect("at least one chunk");
    Ok(Prototypes { target, confounds: chunks.collect() })
}

/// Generates a dataset; identical configs give identical datasets.
pub fn generate(config: &GeneratorConfig) -> Result<Dataset> {
    let protos = prototypes(config)?;
    let n = config.n;
    let k = config.target.cardinality;
    let m = config.input_dim;
    let mut rng = seeds::rng(&[config.seed, domain::EXAMPLES, config.stream]);

    let mut targets: Vec<u16> = (0..n).map(|i| (i % k) as u16).collect();
    targets.shuffle(&mut rng);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &t) in targets.iter().enumerate() {
        by_class[t as usize].push(i);
    }

    let mut confounds = Vec::with_capacity(config.confounds.len());
    for spec in &config.confounds {
        let mut column = vec![0u16; n];
        for (class, members) in by_class.iter().enumerate() {
            let mut members = members.clone();
            members.shuffle(&mut rng);
            let aligned = aligned_count(spec.aligned_ratio, members.len());
            for (pos, &i) in members.iter().enumerate() {
                column[i] = if pos < aligned {
                    class as u16
                } else {
                    // Uniform over the K − 1 other values.
                    let draw = rng.random_range(0..k - 1);
                    (if draw >= class { draw + 1 } else { draw }) as u16
                };
            }
        }
        confounds.push(column);
    }

    let mut features = Vec::with_capacity(n * m);
    let mut row = vec![0.0f64; m];
    for i in 0..n {
        for x in row.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x = config.noise_sigma * z;
        }
        let t = &protos.target[targets[i] as usize];
        row.iter_mut().zip(t).for_each(|(x, p)| *x += config.target_signal_scale * p);
        for (j, spec) in config.confounds.iter().enumerate() {
            let v = &protos.confounds[j][confounds[j][i] as usize];
            row.iter_mut().zip(v).for_each(|(x, p)| *x += spec.signal_scale * p);
        }
        features.extend(row.iter().map(|&x| x as f32));
    }

    Ok(Dataset { config: config.clone(), features, targets, confounds })
}

/// `floor(k · count)`, tolerant of representation error in `k`.
pub fn aligned_count(k: f64, count: usize) -> usize {
    ((k * count as f64) + 1e-9).floor() as usize
}

impl Dataset {
    /// Assembles a dataset from raw columns, validating every invariant.
    pub fn from_parts(
        config: GeneratorConfig,
        features: Vec<f32>,
        targets: Vec<u16>,
        confounds: Vec<Vec<u16>>,
    ) -> Result<Self> {
        config.validate()?;
        let n = config.n;
        if features.len() != n * config.input_dim {
            return Err(Error::Consistency(format!(
                "{} feature values for n={n}, m={}",
                features.len(),
                config.input_dim
            )));
        }
        if targets.len() != n || confounds.len() != config.confounds.len() || confounds.iter().any(|c| c.len() != n) {
            return Err(Error::Consistency("attribute column lengths do not match n".into()));
        }
        let k = config.target.cardinality as u16;
        if targets.iter().chain(confounds.iter().flatten()).any(|&v| v >= k) {
            return Err(Error::Consistency("attribute value out of range".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Consistency("non-finite feature".into()));
        }
        Ok(Self { config, features, targets, confounds })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn num_confounds(&self) -> usize {
        self.confounds.len()
    }

    pub fn cardinality(&self) -> usize {
        self.config.target.cardinality
    }

    pub fn features(&self, i: usize) -> &[f32] {
        let m = self.config.input_dim;
        &self.features[i * m..(i + 1) * m]
    }

    pub fn features_f64(&self, i: usize) -> Vec<f64> {
        self.features(i).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn target(&self, i: usize) -> usize {
        self.targets[i] as usize
    }

    pub fn targets(&self) -> Vec<usize> {
        self.targets.iter().map(|&t| t as usize).collect()
    }

    pub fn confound(&self, j: usize, i: usize) -> usize {
        self.confounds[j][i] as usize
    }

    pub fn confound_column(&self, j: usize) -> Result<Vec<usize>> {
        let col = self.confounds.get(j).ok_or(Error::Range { index: j, len: self.confounds.len() })?;
        Ok(col.iter().map(|&v| v as usize).collect())
    }

    pub fn is_aligned(&self, i: usize, j: usize) -> bool {
        self.confounds[j][i] == self.targets[i]
    }

    pub fn example(&self, i: usize) -> Example<'_> {
        let confound_values: Vec<usize> = self.confounds.iter().map(|c| c[i] as usize).collect();
        let aligned = confound_values.iter().map(|&c| c == self.target(i)).collect();
        Example { features: self.features(i), target_value: self.target(i), confound_values, aligned }
    }

    /// Feature rows for `indices`, upcast to `f64`.
    pub fn batch(&self, indices: &[usize]) -> Matrix {
        let m = self.config.input_dim;
        let mut data = Vec::with_capacity(indices.len() * m);
        for &i in indices {
            data.extend(self.features(i).iter().map(|&v| f64::from(v)));
        }
        Matrix::from_vec(indices.len(), m, data).expect("finite features")
    }

    /// All features as an `n × m` matrix.
    pub fn feature_matrix(&self) -> Matrix {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }

    /// `(aligned, conflicting)` index sets for confound `confound_index`.
    pub fn partition_by_alignment(&self, confound_index: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if confound_index >= self.confounds.len() {
            return Err(Error::Range { index: confound_index, len: self.confounds.len() });
        }
        Ok((0..self.len()).partition(|&i| self.is_aligned(i, confound_index)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u64(c.n as u64);
        w.u32(c.input_dim as u32);
        w.str(&c.target.name);
        w.u32(c.target.cardinality as u32);
        w.f64(c.target_signal_scale);
        w.f64(c.noise_sigma);
        w.u64(c.seed);
        w.u64(c.stream);
        w.u32(c.confounds.len() as u32);
        for s in &c.confounds {
            w.str(&s.attribute.name);
            w.u32(s.attribute.cardinality as u32);
            w.f64(s.aligned_ratio);
            w.f64(s.signal_scale);
        }
        for &v in &self.features {
            w.f32(v);
        }
        for &t in &self.targets {
            w.u16(t);
        }
        for col in &self.confounds {
            for &v in col {
                w.u16(v);
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MAGIC)?;
        r.expect_version(FORMAT_VERSION)?;
        let n = usize::try_from(r.u64()?).map_err(|_| Error::Format("n overflows".into()))?;
        let input_dim = r.u32()? as usize;
        let target = AttributeSpec { name: r.str()?, cardinality: r.u32()? as usize };
        let target_signal_scale = r.f64()?;
        let noise_sigma = r.f64()?;
        let seed = r.u64()?;
        let stream = r.u64()?;
        let n_conf = r.u32()? as usize;
        let mut confound_specs = Vec::new();
        for _ in 0..n_conf {
            let attribute = AttributeSpec { name: r.str()?, cardinality: r.u32()? as usize };
            confound_specs.push(ConfoundSpec { attribute, aligned_ratio: r.f64()?, signal_scale: r.f64()? });
        }
        let config = GeneratorConfig {
            n,
            input_dim,
            target,
            confounds: confound_specs,
            target_signal_scale,
            noise_sigma,
            seed,
            stream,
        };
        let n_feat = n.checked_mul(input_dim).ok_or_else(|| Error::Format("size overflows".into()))?;
        r.check_remaining(n_feat, 4)?;
        let features = (0..n_feat).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        r.check_remaining(n, 2)?;
        let targets = (0..n).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
        let mut confounds = Vec::with_capacity(n_conf);
        for _ in 0..n_conf {
            r.check_remaining(n, 2)?;
            confounds.push((0..n).map(|_| r.u16()).collect::<Result<Vec<_>>>()?);
        }
        r.finish()?;
        Dataset::from_parts(config, features, targets, confounds).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
