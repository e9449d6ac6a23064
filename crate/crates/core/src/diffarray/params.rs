use indexmap::IndexMap;

use super::array::{Array, Real};
use super::tape::{DiffArray, Tape};
use crate::error::{Error, Result};

/// Named parameter arrays in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    arrays: IndexMap<String, Array<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            arrays: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array<T>) -> Result<()> {
        let name = name.into();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("parameter {name}")));
        }
        if self.arrays.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        self.arrays.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Array<T>> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array<T>> {
        self.arrays.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array<T>)> {
        self.arrays.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array<T>)> {
        self.arrays.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.arrays.values().map(Array::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            arrays: self
                .arrays
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Zero arrays with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            arrays: self
                .arrays
                .iter()
                .map(|(k, v)| (k.clone(), Array::zeros(v.shape())))
                .collect(),
        }
    }

    /// Put every parameter on `tape`, as gradient-receiving leaves when
    /// `trainable`, as constants otherwise.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        Bound {
            vars: self
                .arrays
                .iter()
                .map(|(k, v)| {
                    let var = if trainable {
                        tape.param(v.clone())
                    } else {
                        tape.constant(v.clone())
                    };
                    (k.clone(), var)
                })
                .collect(),
        }
    }
}

/// Parameters placed on a tape.
pub struct Bound<'t, T: Real> {
    vars: IndexMap<String, DiffArray<'t, T>>,
}

impl<'t, T: Real> Bound<'t, T> {
    pub fn get(&self, name: &str) -> Result<DiffArray<'t, T>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    /// Substitute the variable bound under `name`, e.g. to differentiate
    /// with respect to one parameter only.
    pub fn with(mut self, name: &str, var: DiffArray<'t, T>) -> Result<Self> {
        let slot = self
            .vars
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        if slot.shape() != var.shape() {
            return Err(Error::shape("Bound::with", &slot.shape(), &var.shape()));
        }
        *slot = var;
        Ok(self)
    }

    /// Gradients after backward, zero for constants.
    pub fn grads(&self) -> Result<ParamSet<T>> {
        let mut out = ParamSet::new();
        for (name, var) in &self.vars {
            let g = if var.requires_grad() {
                var.grad()?
            } else {
                Array::zeros(var.value().shape())
            };
            out.arrays.insert(name.clone(), g);
        }
        Ok(out)
    }
}
