//! Named trainable parameters with persistent gradient buffers.
//!
//! Each model (generator, discriminator, classifier, language model) owns one
//! `ParamStore`. A training step registers parameters on a [`crate::tape::Tape`],
//! runs backward, and exports the accumulated gradients back into the store,
//! where the optimizer consumes them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a parameter inside its owning store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub(crate) fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    // Adam first/second moment buffers.
    pub m: Tensor,
    pub v: Tensor,
}

#[derive(Debug, Clone)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    grads_ready: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), grads_ready: false }
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        let shape = value.shape().to_vec();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Add a parameter initialized uniformly in `[-scale, scale]`.
    pub fn add_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], scale: Real, rng: &mut R) -> ParamId {
        let n: usize = shape.iter().product();
        let data: Vec<Real> = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape/data agree"))
    }

    /// Add a weight matrix scaled by `1/sqrt(fan_in)`.
    pub fn add_weight<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let scale = 1.0 / (cols as Real).sqrt();
        self.add_uniform(name, &[rows, cols], scale, rng)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Iterate `(name, value)` pairs in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor) {
        self.entries[id.0].grad.add_assign(grad);
    }

    pub(crate) fn mark_grads_ready(&mut self) {
        self.grads_ready = true;
    }

    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
        self.grads_ready = false;
    }

    /// Global L2 norm over all gradients.
    pub fn grad_norm(&self) -> Real {
        self.entries.iter().map(|e| e.grad.frobenius_norm_sq()).sum::<Real>().sqrt()
    }

    /// Scale all gradients so the global norm does not exceed `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: Real) {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for e in &mut self.entries {
                e.grad.data_mut().iter_mut().for_each(|g| *g *= s);
            }
        }
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub(crate) fn clear_grads_ready(&mut self) {
        self.grads_ready = false;
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Replace a value tensor, validating the shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter {} expects shape {:?}, got {:?}",
                e.name,
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = value;
        Ok(())
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}
