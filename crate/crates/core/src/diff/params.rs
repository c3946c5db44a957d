use std::collections::BTreeMap;

use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Named collection of tensors with deterministic (lexicographic) iteration
/// order, so that flatten/unflatten and optimizer state stay aligned.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name '{name}'")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        match self.entries.get_mut(name) {
            Some(slot) => {
                if slot.shape() != tensor.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "ParamSet::set",
                        detail: format!("{name}: {:?} -> {:?}", slot.shape(), tensor.shape()),
                    });
                }
                *slot = tensor;
                Ok(())
            }
            None => Err(Error::invalid(format!("unknown parameter '{name}'"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars across all tensors.
    pub fn count_scalars(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// Concatenates all tensors in name order into one flat vector.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count_scalars());
        for t in self.entries.values() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Rebuilds a ParamSet with this one's names/shapes from a flat vector.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamSet> {
        if flat.len() != self.count_scalars() {
            return Err(Error::ShapeMismatch {
                op: "ParamSet::unflatten",
                detail: format!("expected {} scalars, got {}", self.count_scalars(), flat.len()),
            });
        }
        let mut entries = BTreeMap::new();
        let mut off = 0;
        for (name, t) in &self.entries {
            let n = t.numel();
            let tensor = Tensor::new(t.shape().to_vec(), flat[off..off + n].to_vec())?;
            entries.insert(name.clone(), tensor);
            off += n;
        }
        Ok(ParamSet { entries })
    }

    /// Elementwise `self + scale * other`, matched by name.
    pub fn axpy(&self, scale: f64, other: &ParamSet) -> Result<ParamSet> {
        let mut out = self.clone();
        for (name, t) in &mut out.entries {
            let o = other
                .get(name)
                .ok_or_else(|| Error::invalid(format!("axpy: missing '{name}' in other")))?;
            if o.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "ParamSet::axpy",
                    detail: name.clone(),
                });
            }
            for (a, b) in t.data_mut().iter_mut().zip(o.data()) {
                *a += scale * b;
            }
        }
        Ok(out)
    }

    /// Merges another set into this one; duplicate names are an error.
    pub fn merged(mut self, other: ParamSet) -> Result<ParamSet> {
        for (name, t) in other.entries {
            if self.entries.contains_key(&name) {
                return Err(Error::invalid(format!("merge: duplicate parameter '{name}'")));
            }
            self.entries.insert(name, t);
        }
        Ok(self)
    }

    /// Sub-set of parameters whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries
            .values()
            .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamSet {
            entries: iter.into_iter().collect(),
        }
    }
}
