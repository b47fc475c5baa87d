use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of every trainable matrix in a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

/// Flat serialized form of one parameter matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlob {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn add_ones(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::ones((rows, cols)))
    }

    pub fn add_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let value = Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng));
        self.add(name, value)
    }

    /// Glorot-uniform initialization for a `fan_in × fan_out` weight.
    pub fn add_xavier<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
        let value = Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng));
        self.add(name, value)
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<f64>)> {
        self.values.iter().enumerate().map(|(i, v)| (ParamId(i), v))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.values.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn to_blobs(&self) -> BTreeMap<String, ParamBlob> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| {
                let (r, c) = v.dim();
                (
                    n.clone(),
                    ParamBlob {
                        shape: [r, c],
                        data: v.iter().copied().collect(),
                    },
                )
            })
            .collect()
    }

    /// Overwrites every parameter from `blobs`. Names and shapes must match
    /// this store exactly.
    pub fn load_blobs(&mut self, blobs: &BTreeMap<String, ParamBlob>) -> Result<()> {
        if blobs.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, checkpoint has {}",
                self.values.len(),
                blobs.len()
            )));
        }
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let blob = blobs
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let (r, c) = value.dim();
            if blob.shape != [r, c] || blob.data.len() != r * c {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: expected shape [{r}, {c}], found {:?}",
                    blob.shape
                )));
            }
            *value = Array2::from_shape_vec((r, c), blob.data.clone())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(())
    }
}
