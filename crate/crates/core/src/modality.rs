//! Modalities, availability masks and per-modality maps.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "v")]
    Visual,
    #[serde(rename = "a")]
    Audio,
    #[serde(rename = "t")]
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Visual, Modality::Audio, Modality::Text];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            Modality::Visual => "v",
            Modality::Audio => "a",
            Modality::Text => "t",
        }
    }

    pub fn from_key(key: &str) -> Option<Modality> {
        Modality::ALL.into_iter().find(|m| m.key() == key)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// A total-order map from modality to `T` with at most one entry per modality.
#[derive(Clone, Debug, PartialEq)]
pub struct PerModality<T>([Option<T>; 3]);

impl<T> Default for PerModality<T> {
    fn default() -> Self {
        PerModality([None, None, None])
    }
}

impl<T> PerModality<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_fn(mut f: impl FnMut(Modality) -> T) -> Self {
        PerModality(Modality::ALL.map(|m| Some(f(m))))
    }

    pub fn get(&self, m: Modality) -> Option<&T> {
        self.0[m.index()].as_ref()
    }

    pub fn get_mut(&mut self, m: Modality) -> Option<&mut T> {
        self.0[m.index()].as_mut()
    }

    pub fn insert(&mut self, m: Modality, value: T) -> Option<T> {
        self.0[m.index()].replace(value)
    }

    pub fn remove(&mut self, m: Modality) -> Option<T> {
        self.0[m.index()].take()
    }

    pub fn contains(&self, m: Modality) -> bool {
        self.0[m.index()].is_some()
    }

    pub fn len(&self) -> usize {
        self.0.iter().filter(|v| v.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (Modality, &T)> {
        Modality::ALL
            .into_iter()
            .zip(self.0.iter())
            .filter_map(|(m, v)| v.as_ref().map(|v| (m, v)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (Modality, &mut T)> {
        Modality::ALL
            .into_iter()
            .zip(self.0.iter_mut())
            .filter_map(|(m, v)| v.as_mut().map(|v| (m, v)))
    }

    pub fn keys(&self) -> impl Iterator<Item = Modality> + '_ {
        self.iter().map(|(m, _)| m)
    }

    pub fn map<U>(&self, mut f: impl FnMut(Modality, &T) -> U) -> PerModality<U> {
        let mut out = PerModality::new();
        for (m, v) in self.iter() {
            out.insert(m, f(m, v));
        }
        out
    }
}

impl<T> FromIterator<(Modality, T)> for PerModality<T> {
    fn from_iter<I: IntoIterator<Item = (Modality, T)>>(iter: I) -> Self {
        let mut out = PerModality::new();
        for (m, v) in iter {
            out.insert(m, v);
        }
        out
    }
}

/// Binary availability mask over the three modalities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModalityMask([bool; 3]);

impl ModalityMask {
    pub fn all() -> Self {
        ModalityMask([true; 3])
    }

    pub fn none() -> Self {
        ModalityMask([false; 3])
    }

    pub fn only(m: Modality) -> Self {
        let mut mask = Self::none();
        mask.set(m, true);
        mask
    }

    pub fn from_bits(v: bool, a: bool, t: bool) -> Self {
        ModalityMask([v, a, t])
    }

    #[inline]
    pub fn is_available(&self, m: Modality) -> bool {
        self.0[m.index()]
    }

    pub fn set(&mut self, m: Modality, available: bool) {
        self.0[m.index()] = available;
    }

    pub fn available(&self) -> impl Iterator<Item = Modality> + '_ {
        Modality::ALL.into_iter().filter(|m| self.is_available(*m))
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}
