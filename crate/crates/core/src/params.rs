//! Ordered, named parameter collections.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered mapping from hierarchical parameter names to tensors. Used for
/// model weights, EMA teachers, gradients and landscape directions alike.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    tensors: IndexMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_, t| Tensor::zeros(t.shape()))
    }

    pub fn map(&self, mut f: impl FnMut(&str, &Tensor) -> Tensor) -> Self {
        Self { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), f(k, v))).collect() }
    }

    /// Subset containing only the names accepted by `keep`, in order.
    pub fn filter(&self, keep: impl Fn(&str) -> bool) -> Self {
        Self { tensors: self.tensors.iter().filter(|(k, _)| keep(k)).map(|(k, v)| (k.clone(), v.clone())).collect() }
    }

    /// Errors unless `other` has exactly the same names and shapes.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        let missing: Vec<String> = self.names().filter(|n| !other.contains(n)).map(String::from).collect();
        let unexpected: Vec<String> = other.names().filter(|n| !self.contains(n)).map(String::from).collect();
        let mismatched: Vec<String> = self
            .iter()
            .filter_map(|(n, t)| match other.get(n) {
                Some(o) if o.shape() != t.shape() => Some(n.to_string()),
                _ => None,
            })
            .collect();
        if missing.is_empty() && unexpected.is_empty() && mismatched.is_empty() {
            Ok(())
        } else {
            Err(Error::ParameterMismatch { missing, unexpected, mismatched })
        }
    }

    /// `self + Σ cᵢ·dᵢ`, skipping zero coefficients so that an all-zero
    /// combination reproduces `self` bit-exactly.
    pub fn offset(&self, terms: &[(f64, &ParameterSet)]) -> Result<Self> {
        for (_, d) in terms {
            self.check_compatible(d)?;
        }
        let mut out = self.clone();
        for &(c, d) in terms {
            if c == 0.0 {
                continue;
            }
            for (name, t) in out.tensors.iter_mut() {
                let dir = &d.tensors[name];
                for (p, &v) in t.data_mut().iter_mut().zip(dir.data()) {
                    *p += c * v;
                }
            }
        }
        Ok(out)
    }

    /// Hex SHA-256 over names, shapes and little-endian values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        crate::hex(&h.finalize())
    }

    /// Largest elementwise absolute difference to `other` (assumed compatible).
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.iter()
            .flat_map(|(n, t)| {
                let o = other.get(n).expect("compatible parameter sets");
                t.data().iter().zip(o.data()).map(|(a, b)| (a - b).abs())
            })
            .fold(0.0, f64::max)
    }
}

impl<'a> IntoIterator for &'a ParameterSet {
    type Item = (&'a String, &'a Tensor);
    type IntoIter = indexmap::map::Iter<'a, String, Tensor>;

    fn into_iter(self) -> Self::IntoIter {
        self.tensors.iter()
    }
}
