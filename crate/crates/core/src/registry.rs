//! Named parameter store.
//!
//! Every freezing strategy in the toolkit works by flipping per-entry
//! trainable flags here; nothing else distinguishes "fine-tune the encoder"
//! from "train only the adapters".

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use indexmap::IndexMap;

/// Ordered map from dotted path name (`encoder.blocks.0.attn.query.weight`)
/// to tensor. Iteration follows insertion order; checkpoints re-sort by name.
#[derive(Debug, Clone, Default)]
pub struct ParamRegistry<T = f32> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamRegistry<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateParameter { name });
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries.get(name).ok_or_else(|| Error::UnknownParameter {
            name: name.to_string(),
        })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter {
                name: name.to_string(),
            })
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.entries.shift_remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total element count across all entries.
    pub fn total_count(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// Element count across trainable entries only.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .values()
            .filter(|t| t.requires_grad())
            .map(Tensor::numel)
            .sum()
    }

    pub fn set_trainable(&mut self, name: &str, flag: bool) -> Result<()> {
        self.get_mut(name)?.set_requires_grad(flag);
        Ok(())
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for t in self.entries.values_mut() {
            t.clear_grad();
        }
    }

    /// Copies all values out, e.g. for best-checkpoint retention or
    /// bit-identity assertions.
    pub fn snapshot(&self) -> Vec<(String, Vec<T>)> {
        self.entries
            .iter()
            .map(|(k, v)| (k.clone(), v.data().to_vec()))
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[(String, Vec<T>)]) -> Result<()> {
        for (name, data) in snapshot {
            let t = self.get_mut(name)?;
            if t.numel() != data.len() {
                return Err(Error::ShapeMismatch {
                    context: format!("restore `{name}`"),
                    expected: t.shape().to_vec(),
                    got: vec![data.len()],
                });
            }
            t.data_mut().copy_from_slice(data);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_flags() {
        let mut reg = ParamRegistry::<f32>::new();
        reg.insert("a.weight", Tensor::zeros(vec![2, 3])).unwrap();
        reg.insert("a.bias", Tensor::zeros(vec![3])).unwrap();
        assert_eq!(reg.total_count(), 9);
        assert_eq!(reg.trainable_count(), 0);
        reg.set_trainable("a.bias", true).unwrap();
        assert_eq!(reg.trainable_count(), 3);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut reg = ParamRegistry::<f32>::new();
        reg.insert("w", Tensor::zeros(vec![1])).unwrap();
        assert!(matches!(
            reg.insert("w", Tensor::zeros(vec![1])),
            Err(Error::DuplicateParameter { .. })
        ));
    }

    #[test]
    fn snapshot_restore_roundtrip() {
        let mut reg = ParamRegistry::<f32>::new();
        reg.insert("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        let snap = reg.snapshot();
        reg.get_mut("w").unwrap().data_mut()[0] = 9.0;
        reg.restore(&snap).unwrap();
        assert_eq!(reg.get("w").unwrap().data(), &[1.0, 2.0]);
    }
}
