use super::Tensor;
use crate::error::{Error, Result};
use std::collections::{BTreeMap, BTreeSet};

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Vec<f64>>;

/// Parameter group of a dotted name: everything before the first `.`.
pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Named parameter store shared by the detector and the reconstructor.
///
/// Parameters are grouped by their first dotted component (`det.*`, `rec.*`);
/// freezing acts on whole groups.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelState {
    pub version: u32,
    tensors: BTreeMap<String, Tensor>,
    frozen: BTreeSet<String>,
}

impl ModelState {
    pub const VERSION: u32 = 1;

    pub fn new() -> Self {
        Self {
            version: Self::VERSION,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn freeze(&mut self, group: &str) {
        self.frozen.insert(group.to_string());
    }

    pub fn unfreeze(&mut self, group: &str) {
        self.frozen.remove(group);
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(group_of(name))
    }

    pub fn frozen_groups(&self) -> impl Iterator<Item = &String> {
        self.frozen.iter()
    }

    /// Moves every tensor of `other` into `self`, keeping frozen flags.
    pub fn merge(&mut self, other: ModelState) -> Result<()> {
        for (name, t) in other.tensors {
            self.insert(name, t)?;
        }
        self.frozen.extend(other.frozen);
        Ok(())
    }

    /// Subset of tensors belonging to one group.
    pub fn extract_group(&self, group: &str) -> ModelState {
        let mut out = ModelState::new();
        for (name, t) in &self.tensors {
            if group_of(name) == group {
                out.tensors.insert(name.clone(), t.clone());
            }
        }
        if self.frozen.contains(group) {
            out.freeze(group);
        }
        out
    }

    /// Order-sensitive FNV-1a digest of names, shapes and raw bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (name, t) in &self.tensors {
            eat(name.as_bytes());
            for d in t.shape() {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}
