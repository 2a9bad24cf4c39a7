use rand::Rng;

use super::{NumArray, Tape, Value};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered, named collection of trainable arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<NumArray>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: NumArray) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform `[fan_in × fan_out]` weight.
    pub fn add_glorot(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
        self.add(name, NumArray::new(vec![fan_in, fan_out], data).expect("glorot shape"))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, NumArray::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &NumArray {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut NumArray {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[NumArray] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [NumArray] {
        &mut self.values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(NumArray::len).sum()
    }

    /// Places every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Bound {
        let vars = self.values.iter().map(|v| tape.leaf(v.clone(), requires_grad)).collect();
        Bound { vars }
    }

    /// Zeroed arrays shaped like each parameter.
    pub fn zeros_like(&self) -> Vec<NumArray> {
        self.values.iter().map(|v| NumArray::zeros(v.shape())).collect()
    }
}

/// Parameters placed on a particular tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Value>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Value {
        self.vars[id.0]
    }

    /// Gradients in store order; parameters the root never reached get zeros.
    pub fn grads(&self, tape: &Tape) -> Vec<NumArray> {
        self.vars
            .iter()
            .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| NumArray::zeros(tape.value(v).shape())))
            .collect()
    }
}
