use super::Tensor;
use crate::Result;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros_like(&value);
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch-norm.
    Train,
    /// Running statistics in batch-norm.
    Eval,
}

pub trait Module {
    type Cache;

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Self::Cache)>;

    /// Accumulates parameter gradients and returns `∂L/∂x` given `∂L/∂y`.
    fn backward(&mut self, cache: &Self::Cache, dy: &Tensor) -> Result<Tensor>;

    /// Trainable tensors, in a stable order, with dotted names under `prefix`.
    fn visit_params(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Param)) {}

    fn visit_params_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Param)) {}

    /// Non-trainable state (batch-norm running statistics).
    fn visit_buffers(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Tensor)) {}

    fn visit_buffers_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor)) {}

    /// Folds the batch statistics recorded in a train-mode cache into the
    /// running statistics.
    fn commit_stats(&mut self, _cache: &Self::Cache) {}

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.zero_grad());
    }
}

/// Total element count over every tensor registered as trainable.
pub fn count_trainable<M: Module + ?Sized>(module: &M) -> u64 {
    let mut total = 0u64;
    module.visit_params("", &mut |_, p| total += p.len() as u64);
    total
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
