use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::array::NdArray;
use crate::nn::scalar::Scalar;

/// One named parameter with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub value: NdArray<T>,
    pub grad: NdArray<T>,
    pub adam_m: NdArray<T>,
    pub adam_v: NdArray<T>,
}

impl<T: Scalar> ParamEntry<T> {
    pub fn new(value: NdArray<T>) -> Self {
        let shape = value.shape().to_vec();
        ParamEntry {
            value,
            grad: NdArray::zeros(&shape),
            adam_m: NdArray::zeros(&shape),
            adam_v: NdArray::zeros(&shape),
        }
    }
}

/// Named parameter arrays of one network plus the optimizer step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, ParamEntry<T>>,
    step_count: u64,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
            step_count: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: NdArray<T>) {
        self.entries.insert(name.into(), ParamEntry::new(value));
    }

    pub fn insert_entry(&mut self, name: impl Into<String>, entry: ParamEntry<T>) -> Result<()> {
        let shape = entry.value.shape();
        if entry.grad.shape() != shape || entry.adam_m.shape() != shape || entry.adam_v.shape() != shape
        {
            return Err(Error::Internal(
                "parameter entry buffers disagree in shape".into(),
            ));
        }
        self.entries.insert(name.into(), entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Internal(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Internal(format!("missing parameter {name}")))
    }

    pub fn value(&self, name: &str) -> Result<&NdArray<T>> {
        Ok(&self.get(name)?.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut NdArray<T>> {
        Ok(&mut self.get_mut(name)?.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry<T>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub(crate) fn set_step_count(&mut self, steps: u64) {
        self.step_count = steps;
    }

    pub(crate) fn bump_step(&mut self) {
        self.step_count += 1;
    }

    pub fn zero_grad(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(T::zero());
        }
    }

    /// Sum of squared gradient entries, accumulated in f64.
    pub fn grad_sq_norm(&self) -> f64 {
        self.entries.values().map(|e| e.grad.sum_sq()).sum()
    }

    pub fn scale_grads(&mut self, factor: T) {
        for e in self.entries.values_mut() {
            e.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Converts values and optimizer state to another precision; the step
    /// counter is kept.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        ParamEntry {
                            value: e.value.cast(),
                            grad: e.grad.cast(),
                            adam_m: e.adam_m.cast(),
                            adam_v: e.adam_v.cast(),
                        },
                    )
                })
                .collect(),
            step_count: self.step_count,
        }
    }

    /// True when every entry matches `other` in name and shape.
    pub fn same_layout(&self, other: &ParamStore<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((na, a), (nb, b))| na == nb && a.value.shape() == b.value.shape())
    }
}

/// Anything that owns one or more parameter stores, e.g. a full encoder suite.
pub trait Parameterized<T: Scalar> {
    fn stores(&self) -> Vec<(&str, &ParamStore<T>)>;
    fn stores_mut(&mut self) -> Vec<(&str, &mut ParamStore<T>)>;

    fn zero_grads(&mut self) {
        for (_, s) in self.stores_mut() {
            s.zero_grad();
        }
    }

    fn grad_norm(&self) -> f64 {
        self.stores()
            .iter()
            .map(|(_, s)| s.grad_sq_norm())
            .sum::<f64>()
            .sqrt()
    }
}

impl<T: Scalar> Parameterized<T> for ParamStore<T> {
    fn stores(&self) -> Vec<(&str, &ParamStore<T>)> {
        vec![("params", self)]
    }

    fn stores_mut(&mut self) -> Vec<(&str, &mut ParamStore<T>)> {
        vec![("params", self)]
    }
}
