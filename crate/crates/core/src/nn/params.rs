use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};

use super::Scalar;

/// Index of one named tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat, name-addressed storage for every trainable matrix of a network.
///
/// Vectors (biases, norm scales) are stored as `1 × n` matrices so a single
/// element type covers everything.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Array2<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a tensor. Panics on a duplicate name since layouts are built once
    /// from code and a clash is a programming error.
    pub fn register(&mut self, name: impl Into<String>, value: Array2<T>) -> ParamId {
        let name = name.into();
        let id = ParamId(self.values.len());
        let prev = self.index.insert(name.clone(), id);
        assert!(prev.is_none(), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array2<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn numel(&self, id: ParamId) -> usize {
        self.values[id.0].len()
    }

    pub fn total_numel(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Converts every tensor to another element type, keeping names and ids.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.mapv(|x| U::from_f64_lossy(x.as_f64())))
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Sparse gradient buffer aligned with a [`ParamStore`].
///
/// A slot stays `None` until some backward pass writes to it, so the set of
/// allocated slots is exactly the set of parameters a computation touched.
#[derive(Clone, Debug)]
pub struct Grads<T> {
    slots: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn for_store(store: &ParamStore<T>) -> Self {
        Self {
            slots: vec![None; store.len()],
        }
    }

    pub fn with_len(len: usize) -> Self {
        Self {
            slots: vec![None; len],
        }
    }

    /// Mutable access to a slot, zero-allocated on first use.
    pub fn slot(&mut self, id: ParamId, shape: (usize, usize)) -> &mut Array2<T> {
        let slot = &mut self.slots[id.0];
        if slot.is_none() {
            *slot = Some(Array2::zeros(shape));
        }
        slot.as_mut().unwrap()
    }

    pub fn add(&mut self, id: ParamId, g: ArrayView2<T>) {
        let s = self.slot(id, g.dim());
        *s += &g;
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<T>> {
        self.slots[id.0].as_ref()
    }

    pub fn is_touched(&self, id: ParamId) -> bool {
        self.slots[id.0].is_some()
    }

    pub fn touched(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_some())
            .map(|(i, _)| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Sums `other` into `self`, slot by slot.
    pub fn merge(&mut self, other: Grads<T>) {
        assert_eq!(self.slots.len(), other.slots.len());
        for (mine, theirs) in self.slots.iter_mut().zip(other.slots) {
            match (mine.as_mut(), theirs) {
                (_, None) => {}
                (None, Some(g)) => *mine = Some(g),
                (Some(m), Some(g)) => *m += &g,
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.slots.iter_mut().flatten() {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slots
            .iter()
            .flatten()
            .all(|g| g.iter().all(|x| x.is_finite()))
    }

    /// Largest absolute entry of a slot; zero for untouched slots.
    pub fn max_abs(&self, id: ParamId) -> T {
        self.slots[id.0]
            .as_ref()
            .map(|g| g.iter().fold(T::zero(), |m, x| m.max(x.abs())))
            .unwrap_or_else(T::zero)
    }
}
