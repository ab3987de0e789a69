//! Trainable parameters, partitioned into the three disjoint groups the
//! objective regularizes: the contrastive encoder, the stance encoder, and
//! the fusion layer plus classifier.

use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    /// Contrastive encoder.
    Theta,
    /// Stance encoder and stance head.
    Phi,
    /// Fusion gate and veracity classifier.
    Omega,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Theta, Group::Phi, Group::Omega];

    pub fn tag(self) -> u8 {
        match self {
            Group::Theta => 0,
            Group::Phi => 1,
            Group::Omega => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Group::Theta),
            1 => Some(Group::Phi),
            2 => Some(Group::Omega),
            _ => None,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Theta => "Theta",
            Group::Phi => "Phi",
            Group::Omega => "Omega",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Tensor,
    pub grad: Tensor,
    /// Row 0 is pinned at zero and never receives gradient (the PAD embedding).
    pub frozen_first_row: bool,
}

impl Param {
    /// Element indices that are trainable.
    pub fn trainable_range(&self) -> std::ops::Range<usize> {
        let start = if self.frozen_first_row { self.value.cols() } else { 0 };
        start..self.value.len()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Tensor) -> ParamId {
        self.push(name.into(), group, value, false)
    }

    /// Adds an embedding-style table whose first row stays zero.
    pub fn add_with_frozen_first_row(&mut self, name: impl Into<String>, group: Group, mut value: Tensor) -> ParamId {
        let cols = value.cols();
        value.data_mut()[..cols].iter_mut().for_each(|v| *v = 0.0);
        self.push(name.into(), group, value, true)
    }

    fn push(&mut self, name: String, group: Group, value: Tensor, frozen: bool) -> ParamId {
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name,
            group,
            value,
            grad,
            frozen_first_row: frozen,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_in(&self, group: Group) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.group == group)
            .map(|(id, _)| id)
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn num_scalars(&self, group: Group) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(|p| p.value.len())
            .sum()
    }

    /// Hash of the exact bit patterns of every value in `groups`.
    pub fn fingerprint(&self, groups: &[Group]) -> u64 {
        let mut h = DefaultHasher::new();
        for p in self.params.iter().filter(|p| groups.contains(&p.group)) {
            p.name.hash(&mut h);
            for v in p.value.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Uniform(−1/√fan_in, 1/√fan_in).
pub fn uniform_init<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches generated data")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_first_row_is_zeroed() {
        let mut store = ParamStore::new();
        let id = store.add_with_frozen_first_row("emb", Group::Theta, Tensor::matrix(3, 2, vec![1.0; 6]).unwrap());
        let p = store.get(id);
        assert_eq!(&p.value.data()[..2], &[0.0, 0.0]);
        assert_eq!(p.trainable_range(), 2..6);
    }

    #[test]
    fn fingerprint_tracks_values_per_group() {
        let mut store = ParamStore::new();
        let a = store.add("a", Group::Theta, Tensor::vector(vec![1.0, 2.0]));
        store.add("b", Group::Phi, Tensor::vector(vec![3.0]));
        let theta = store.fingerprint(&[Group::Theta]);
        let phi = store.fingerprint(&[Group::Phi]);
        store.get_mut(a).value.data_mut()[0] = 1.5;
        assert_ne!(theta, store.fingerprint(&[Group::Theta]));
        assert_eq!(phi, store.fingerprint(&[Group::Phi]));
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn names_are_unique() {
        let mut store = ParamStore::new();
        store.add("w", Group::Theta, Tensor::scalar(0.0));
        store.add("w", Group::Phi, Tensor::scalar(0.0));
    }
}
