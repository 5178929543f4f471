use ndarray::Array4;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Index of one parameter array inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter arrays of one network.
///
/// Names are dotted block paths such as `enc1.conv.weight`. A frozen store
/// rejects every mutation.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array4<f64>>,
    frozen: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array4<f64>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Weight of shape `(cout, cin, k, k)` drawn from a zero-mean normal with
    /// variance `2 / (cin k k)`.
    pub fn add_he(&mut self, name: impl Into<String>, shape: (usize, usize, usize, usize), rng: &mut impl Rng) -> ParamId {
        let fan_in = (shape.1 * shape.2 * shape.3) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let value = Array4::from_shape_simple_fn(shape, || normal.sample(rng));
        self.add(name, value)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array4<f64> {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array4<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Result<&mut Array4<f64>> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        Ok(&mut self.values[id.0])
    }

    /// Replaces a parameter array; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Array4<f64>) -> Result<()> {
        let current = self.get(id).shape().to_vec();
        if value.shape() != current.as_slice() {
            return Err(Error::shape(&current, value.shape()));
        }
        *self.get_mut(id)? = value;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// SHA-256 over names, shapes and the exact bits of every value.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, value) in self.iter() {
            h.update(name.as_bytes());
            h.update([0u8]);
            for &d in value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in value.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
