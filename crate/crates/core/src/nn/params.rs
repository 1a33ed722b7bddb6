use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

/// Index of a parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter tensors. Names are hierarchical, dot-separated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    /// Fan-in scaled uniform initialisation in `±1/sqrt(fan_in)`.
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let v = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound));
        self.insert(name, v)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
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

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Overwrites every tensor from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &BTreeMap<String, Array2<f64>>) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let src = other
                .get(name)
                .ok_or_else(|| Error::Config(format!("checkpoint is missing parameter {name}")))?;
            if src.dim() != self.values[i].dim() {
                return Err(Error::Config(format!(
                    "parameter {name}: checkpoint shape {:?} does not match model shape {:?}",
                    src.dim(),
                    self.values[i].dim()
                )));
            }
            self.values[i].assign(src);
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Zeroes every tensor whose name satisfies `pred`.
    pub fn zero_where(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, v) in self.names.iter().zip(self.values.iter_mut()) {
            if pred(name) {
                v.fill(0.0);
            }
        }
    }
}
