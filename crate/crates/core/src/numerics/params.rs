use std::ops::Index;

use rand::Rng;

use super::tape::{Matrix, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named trainable matrices owned by one training run.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    frozen: Vec<bool>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        self.frozen.push(false);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in `[-1/√fan_in, 1/√fan_in]`.
    pub fn add_uniform<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound));
        self.add(name, value)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.0] = frozen;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }

    /// Records every parameter as a leaf; frozen ones do not receive gradients.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .values
            .iter()
            .zip(&self.frozen)
            .map(|(v, &f)| tape.leaf(v.clone(), !f))
            .collect();
        Bound { vars }
    }
}

/// Tape handles of a [`ParamStore`] bound for one forward pass.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}
