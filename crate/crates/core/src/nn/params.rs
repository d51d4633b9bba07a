use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<F>,
}

/// Named, shaped parameter blobs in creation order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F> {
    entries: Vec<Param<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: String, shape: Vec<usize>, value: Vec<F>) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.entries.push(Param { name, shape, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &[F] {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [F] {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[Param<F>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Param<F>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    /// Handle of the `index`-th parameter in creation order.
    pub fn id(&self, index: usize) -> ParamId {
        assert!(index < self.entries.len(), "parameter index out of range");
        ParamId(index)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grads(&self) -> Grads<F> {
        Grads { values: self.entries.iter().map(|p| vec![F::zero(); p.value.len()]).collect() }
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    value: p.value.iter().map(|&x| G::of(x.f64())).collect(),
                })
                .collect(),
        }
    }
}

/// Gradient buffers laid out like the [`ParamStore`] they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<F> {
    pub values: Vec<Vec<F>>,
}

impl<F: Real> Grads<F> {
    pub fn get(&self, id: ParamId) -> &[F] {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [F] {
        &mut self.values[id.0]
    }

    pub fn sq_norm(&self) -> f64 {
        self.values.iter().flatten().map(|g| g.f64() * g.f64()).sum()
    }

    pub fn scale(&mut self, s: F) {
        self.values.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().flatten().for_each(|g| *g = F::zero());
    }
}
