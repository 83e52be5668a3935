use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{NumericError, Tensor};

/// Optimizer group a trainable tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    Linear,
    Bilinear,
    Head,
    Embedding,
}

impl GroupKind {
    pub const ALL: [GroupKind; 4] = [
        GroupKind::Linear,
        GroupKind::Bilinear,
        GroupKind::Head,
        GroupKind::Embedding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupKind::Linear => "linear",
            GroupKind::Bilinear => "bilinear",
            GroupKind::Head => "head",
            GroupKind::Embedding => "embedding",
        }
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupKind {
    type Err = NumericError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GroupKind::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| NumericError::InvalidArgument(format!("unknown parameter group '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub group: GroupKind,
    pub tensor: Tensor,
}

/// Borrowed view of the tensors in one group, in enumeration order.
#[derive(Debug)]
pub struct ParamGroup<'a> {
    pub kind: GroupKind,
    pub tensors: Vec<(&'a str, &'a Tensor)>,
}

impl ParamGroup<'_> {
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }
}

/// Ordered collection of named, grouped tensors. Used both for model
/// parameters and for gradients aligned with them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<NamedTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, group: GroupKind, tensor: Tensor) {
        self.entries.push(NamedTensor {
            name: name.into(),
            group,
            tensor,
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedTensor> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut NamedTensor> {
        self.entries.iter_mut()
    }

    pub fn entries(&self) -> &[NamedTensor] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn group(&self, kind: GroupKind) -> ParamGroup<'_> {
        ParamGroup {
            kind,
            tensors: self
                .entries
                .iter()
                .filter(|e| e.group == kind)
                .map(|e| (e.name.as_str(), &e.tensor))
                .collect(),
        }
    }

    pub fn count_by_group(&self, kind: GroupKind) -> usize {
        self.group(kind).scalar_count()
    }

    /// Mean absolute entry over a group, or `None` when the group is empty.
    pub fn group_l1_mean(&self, kind: GroupKind) -> Option<f64> {
        let g = self.group(kind);
        let count = g.scalar_count();
        (count > 0).then(|| g.tensors.iter().map(|(_, t)| t.l1_norm()).sum::<f64>() / count as f64)
    }

    pub fn global_l2_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.tensor.sq_norm()).sum::<f64>().sqrt()
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| NamedTensor {
                    name: e.name.clone(),
                    group: e.group,
                    tensor: Tensor::zeros(e.tensor.shape()),
                })
                .collect(),
        }
    }

    /// Same names, groups and shapes in the same order.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.group == b.group && a.tensor.shape() == b.tensor.shape())
    }

    pub fn bit_eq(&self, other: &ParamSet) -> bool {
        self.same_layout(other)
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.tensor.bit_eq(&b.tensor))
    }

    pub fn scale(&mut self, k: f64) {
        for e in &mut self.entries {
            e.tensor.scale_in_place(k);
        }
    }
}
