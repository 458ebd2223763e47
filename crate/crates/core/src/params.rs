//! Named parameter tensors shared by every trainable component.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

/// Which component a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    MotionEncoder,
    Memory,
    TextEncoder,
    Decoder,
    StyleEncoder,
    StyleProjection,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::MotionEncoder,
        ParamGroup::Memory,
        ParamGroup::TextEncoder,
        ParamGroup::Decoder,
        ParamGroup::StyleEncoder,
        ParamGroup::StyleProjection,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ParamGroup::MotionEncoder => "motion_encoder",
            ParamGroup::Memory => "memory",
            ParamGroup::TextEncoder => "text_encoder",
            ParamGroup::Decoder => "decoder",
            ParamGroup::StyleEncoder => "style_encoder",
            ParamGroup::StyleProjection => "style_projection",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.tag() == tag)
    }

    /// Parameters learned in the first stage (everything but the style pathway).
    pub fn is_stage1(self) -> bool {
        !matches!(self, ParamGroup::StyleEncoder | ParamGroup::StyleProjection)
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Which parameters stage 2 may update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage2Trainable {
    /// Style encoder plus the two style projections.
    #[default]
    StylePathway,
    /// Style encoder only; projections stay at their initial values.
    EncoderOnly,
}

impl Stage2Trainable {
    pub fn includes(self, group: ParamGroup) -> bool {
        match self {
            Stage2Trainable::StylePathway => !group.is_stage1(),
            Stage2Trainable::EncoderOnly => group == ParamGroup::StyleEncoder,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Stage2Trainable::StylePathway => "style_pathway",
            Stage2Trainable::EncoderOnly => "encoder_only",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "style_pathway" => Some(Stage2Trainable::StylePathway),
            "encoder_only" => Some(Stage2Trainable::EncoderOnly),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub group: ParamGroup,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, group: ParamGroup, value: Array2<f64>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("parameter `{name}` has non-finite entries")));
        }
        self.params.insert(name.to_owned(), Param { value, group });
        Ok(())
    }

    /// Glorot-uniform weight of shape `fan_in×fan_out`.
    pub(crate) fn insert_glorot(
        &mut self,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-limit..limit));
        self.insert(name, group, w)
    }

    pub(crate) fn insert_fill(
        &mut self,
        name: &str,
        group: ParamGroup,
        shape: (usize, usize),
        value: f64,
    ) -> Result<()> {
        self.insert(name, group, Array2::from_elem(shape, value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    /// Replaces a tensor, keeping its group; the shape must match.
    pub fn set(&mut self, name: &str, value: Array2<f64>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))?;
        if p.value.dim() != value.dim() {
            return Err(Error::ShapeMismatch {
                name: name.to_owned(),
                expected: p.value.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Registers every tensor on the graph, as a trainable leaf when
    /// `trainable` says so and as a constant otherwise.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(&str, ParamGroup) -> bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, p)| {
                let v = if trainable(name, p.group) {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// SHA-256 over shape and little-endian payload of one tensor.
    pub fn digest(&self, name: &str) -> Option<String> {
        self.get(name).map(tensor_digest)
    }
}

pub fn tensor_digest(t: &Array2<f64>) -> String {
    let mut h = Sha256::new();
    for d in t.shape() {
        h.update((*d as u64).to_le_bytes());
    }
    for v in t.iter() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Graph handles for a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Handle for `name`. Panics when the parameter was never created, which
    /// is a wiring bug rather than a data error.
    pub fn var(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter `{name}` is not bound"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Adds the handles of `other`; names already present are replaced.
    pub fn extend(&mut self, other: Bound) {
        self.vars.extend(other.vars);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.insert("a", ParamGroup::Decoder, array![[1.0]]).unwrap();
        assert!(s.insert("a", ParamGroup::Decoder, array![[2.0]]).is_err());
    }

    #[test]
    fn set_rejects_shape_change() {
        let mut s = ParamStore::new();
        s.insert("w", ParamGroup::Memory, Array2::zeros((2, 3))).unwrap();
        let err = s.set("w", Array2::zeros((3, 3))).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { ref name, .. } if name == "w"));
    }

    #[test]
    fn stage2_policy_sets() {
        let pathway: Vec<_> = ParamGroup::ALL
            .into_iter()
            .filter(|g| Stage2Trainable::StylePathway.includes(*g))
            .collect();
        assert_eq!(pathway, vec![ParamGroup::StyleEncoder, ParamGroup::StyleProjection]);
        assert!(!Stage2Trainable::EncoderOnly.includes(ParamGroup::StyleProjection));
    }

    #[test]
    fn digest_depends_on_shape_and_values() {
        let a = tensor_digest(&Array2::zeros((2, 3)));
        let b = tensor_digest(&Array2::zeros((3, 2)));
        assert_ne!(a, b);
        assert_eq!(a, tensor_digest(&Array2::zeros((2, 3))));
    }
}
