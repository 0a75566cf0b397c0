//! Named parameter tensors with matching gradient accumulators.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

static NEXT_TOKEN: AtomicU64 = AtomicU64::new(1);

/// Handle to a parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) u32);

#[derive(Debug, Clone)]
struct ParamEntry<S> {
    name: String,
    shape: Vec<usize>,
    values: Vec<S>,
    grads: Vec<S>,
}

/// Flat storage for all trainable tensors of one model.
///
/// Invariants: every parameter has a gradient accumulator of identical shape,
/// and accumulators are exactly zero after [`ParamStore::zero_grads`] until
/// the next backward pass. The store carries a version counter so a tape can
/// detect that values changed between forward and backward.
#[derive(Debug, Clone)]
pub struct ParamStore<S> {
    token: u64,
    version: u64,
    entries: Vec<ParamEntry<S>>,
    index: HashMap<String, ParamId>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            token: NEXT_TOKEN.fetch_add(1, Ordering::Relaxed),
            version: 0,
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Identity of this store instance (used by tapes to route gradients).
    pub fn token(&self) -> u64 {
        self.token
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    /// Register a tensor. The value length must match the shape product.
    pub fn register(&mut self, name: &str, shape: &[usize], values: Vec<S>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(CoreError::DuplicateParam(name.to_string()));
        }
        let numel: usize = shape.iter().product();
        if values.len() != numel {
            return Err(CoreError::ShapeMismatch {
                context: format!("register `{name}`"),
                expected: format!("{numel} values for shape {shape:?}"),
                actual: format!("{} values", values.len()),
            });
        }
        let id = ParamId(self.entries.len() as u32);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            grads: vec![S::zero(); values.len()],
            values,
        });
        self.index.insert(name.to_string(), id);
        self.bump_version();
        Ok(id)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name_of(&self, id: ParamId) -> &str {
        &self.entries[id.0 as usize].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0 as usize].shape
    }

    pub fn values(&self, id: ParamId) -> &[S] {
        &self.entries[id.0 as usize].values
    }

    /// Mutable access to values; bumps the store version so stale tapes are
    /// rejected at backward time.
    pub fn values_mut(&mut self, id: ParamId) -> &mut [S] {
        self.bump_version();
        &mut self.entries[id.0 as usize].values
    }

    pub fn grads(&self, id: ParamId) -> &[S] {
        &self.entries[id.0 as usize].grads
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &[S]) {
        let slot = &mut self.entries[id.0 as usize].grads;
        debug_assert_eq!(slot.len(), grad.len());
        for (g, d) in slot.iter_mut().zip(grad) {
            *g = *g + *d;
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            for g in &mut e.grads {
                *g = S::zero();
            }
        }
    }

    pub fn grads_are_zero(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.grads.iter().all(|g| *g == S::zero()))
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(|i| ParamId(i as u32))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    /// Snapshot all values as `f64` bit patterns, for exact comparisons.
    pub fn value_bits(&self) -> Vec<u64> {
        self.entries
            .iter()
            .flat_map(|e| e.values.iter().map(|v| v.to_f64_lossy().to_bits()))
            .collect()
    }
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_and_lookup() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let id = store.register("w", &[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(store.shape(id), &[2, 3]);
        assert_eq!(store.id_of("w"), Some(id));
        assert!(store.grads_are_zero());
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.register("w", &[1], vec![0.0]).unwrap();
        assert!(matches!(
            store.register("w", &[1], vec![0.0]),
            Err(CoreError::DuplicateParam(_))
        ));
    }

    #[test]
    fn shape_value_mismatch_rejected() {
        let mut store: ParamStore<f64> = ParamStore::new();
        assert!(store.register("w", &[2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn grads_match_param_shapes() {
        let mut store: ParamStore<f32> = ParamStore::new();
        let id = store.register("b", &[4], vec![1.0; 4]).unwrap();
        assert_eq!(store.grads(id).len(), store.values(id).len());
        store.accumulate_grad(id, &[1.0, 2.0, 3.0, 4.0]);
        assert!(!store.grads_are_zero());
        store.zero_grads();
        assert!(store.grads_are_zero());
    }

    #[test]
    fn version_bumps_on_mutation() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let id = store.register("w", &[1], vec![0.5]).unwrap();
        let v = store.version();
        store.values_mut(id)[0] = 0.25;
        assert!(store.version() > v);
    }
}
