use std::collections::HashMap;

use crate::array::NdArray;
use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{Tape, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered parameter arrays of a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<NdArray<T>>,
    index: HashMap<String, usize>,
}

/// Parameters recorded as gradient-tracking leaves on one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    /// Register a parameter; names are unique paths like `smc.backbone.0.weight`.
    pub fn add(&mut self, name: impl Into<String>, value: NdArray<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &NdArray<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut NdArray<T> {
        &mut self.values[id.0]
    }

    pub fn values(&self) -> &[NdArray<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [NdArray<T>] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Replace one parameter's value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: NdArray<T>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(TensorError::shape(
                "ParamStore::set",
                format!("{}: {:?} != {:?}", self.names[id.0], value.shape(), self.values[id.0].shape()),
            ));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound { vars: self.values.iter().map(|v| tape.leaf(v.clone(), true)).collect() }
    }

    /// Gradients of bound parameters, zeros where the parameter was unused.
    pub fn gradients(&self, tape: &Tape<T>, bound: &Bound) -> Vec<NdArray<T>> {
        bound
            .vars
            .iter()
            .zip(&self.values)
            .map(|(&v, p)| tape.grad(v).unwrap_or_else(|| NdArray::zeros(p.shape())))
            .collect()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), values: self.values.iter().map(|v| v.cast()).collect(), index: self.index.clone() }
    }
}
