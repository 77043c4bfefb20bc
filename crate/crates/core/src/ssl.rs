//! Temperature-scaled similarity, the InfoNCE objective, and its
//! attribute-conditioned variant.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::tape::info_nce_logits;
use crate::numeric::{dot, Matrix};

/// Unit-norm tolerance on inputs to [`similarity`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub temperature: f64,
    pub representation_dim: usize,
    pub projection_dim: usize,
    pub batch_size: usize,
    pub symmetrize: bool,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self { temperature: 0.5, representation_dim: 32, projection_dim: 16, batch_size: 128, symmetrize: false }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if self.representation_dim == 0 || self.projection_dim == 0 {
            return Err(Error::Config("representation and projection widths must be positive".into()));
        }
        Ok(())
    }
}

/// Projections of both views for one batch.
#[derive(Clone, Debug)]
pub struct BatchViews {
    pub indices: Vec<usize>,
    pub view1: Matrix,
    pub view2: Matrix,
}

impl BatchViews {
    pub fn new(indices: Vec<usize>, view1: Matrix, view2: Matrix) -> Result<Self> {
        if view1.shape() != view2.shape() || view1.rows() != indices.len() {
            return Err(Error::dim(
                "BatchViews",
                format!("{} indices, views {:?} and {:?}", indices.len(), view1.shape(), view2.shape()),
            ));
        }
        if view1.rows() < 2 {
            return Err(Error::Contract("a batch needs at least two examples".into()));
        }
        for m in [&view1, &view2] {
            for r in 0..m.rows() {
                let norm = dot(m.row(r), m.row(r)).sqrt();
                if (norm - 1.0).abs() > 1e-10 {
                    return Err(Error::Contract(format!("row {r} has norm {norm}, expected 1")));
                }
            }
        }
        Ok(Self { indices, view1, view2 })
    }

    pub fn batch_size(&self) -> usize {
        self.indices.len()
    }
}

/// `exp(u·v / τ)` for unit vectors.
pub fn similarity(u: &[f64], v: &[f64], temperature: f64) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dim("similarity", format!("{} vs {}", u.len(), v.len())));
    }
    for w in [u, v] {
        let norm = dot(w, w).sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Contract(format!("similarity input has norm {norm}")));
        }
    }
    Ok((dot(u, v) / temperature).exp())
}

/// Batched InfoNCE, averaged over all anchor positions.
pub fn infonce(batch: &BatchViews, temperature: f64, symmetrize: bool) -> Result<f64> {
    let logits = batch.view1.matmul_t(&batch.view2)?.scale(1.0 / temperature);
    Ok(info_nce_logits(&logits, symmetrize).0)
}

/// Mean InfoNCE over batches that were each formed within one attribute
/// value. The values were drawn uniformly, so the mean is the estimator of
/// the outer expectation.
pub fn conditional_infonce(batches: &[BatchViews], temperature: f64, symmetrize: bool) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::Empty("conditional_infonce"));
    }
    let total: f64 = batches
        .iter()
        .map(|b| infonce(b, temperature, symmetrize))
        .sum::<Result<f64>>()?;
    Ok(total / batches.len() as f64)
}

/// Draws batches whose members share one value of a grouping attribute.
#[derive(Clone, Debug)]
pub struct ConditionalSampler {
    groups: Vec<Vec<usize>>,
}

impl ConditionalSampler {
    /// Groups example indices by `values[i]` (values in `0..cardinality`).
    pub fn new(values: &[usize], cardinality: usize) -> Result<Self> {
        let mut groups = vec![Vec::new(); cardinality];
        for (i, &v) in values.iter().enumerate() {
            groups.get_mut(v).ok_or(Error::Range { index: v, len: cardinality })?.push(i);
        }
        Ok(Self { groups })
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Checks every attribute value can fill a batch of `b`.
    pub fn check(&self, b: usize) -> Result<()> {
        for (value, g) in self.groups.iter().enumerate() {
            if g.len() < b {
                return Err(Error::InsufficientGroup { value, available: g.len(), needed: b });
            }
        }
        Ok(())
    }

    /// Picks an attribute value uniformly, then `b` distinct members of it.
    pub fn draw<R: Rng + ?Sized>(&self, b: usize, rng: &mut R) -> Result<(usize, Vec<usize>)> {
        let value = rng.random_range(0..self.groups.len());
        let group = &self.groups[value];
        if group.len() < b {
            return Err(Error::InsufficientGroup { value, available: group.len(), needed: b });
        }
        let picks = index::sample(rng, group.len(), b).into_iter().map(|k| group[k]).collect();
        Ok((value, picks))
    }
}
