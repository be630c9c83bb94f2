use ndarray::ArrayD;

use crate::scalar::Scalar;

/// Handle to a trainable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Handle to a non-trainable buffer (e.g. normalization running stats).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub value: ArrayD<T>,
    pub grad: ArrayD<T>,
}

#[derive(Debug, Clone)]
pub struct BufEntry<T: Scalar> {
    pub name: String,
    pub value: ArrayD<T>,
}

/// Named storage for model parameters, their gradients, and buffers.
/// Ids are dense indices in registration order, which also fixes the
/// optimizer's and checkpoint's traversal order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar> {
    params: Vec<ParamEntry<T>>,
    buffers: Vec<BufEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), buffers: Vec::new() }
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: ArrayD<T>) -> ParamId {
        let grad = ArrayD::zeros(value.raw_dim());
        self.params.push(ParamEntry { name: name.into(), value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: ArrayD<T>) -> BufId {
        self.buffers.push(BufEntry { name: name.into(), value });
        BufId(self.buffers.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &ArrayD<T> {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.params[id.0].grad
    }

    pub fn buffer(&self, id: BufId) -> &ArrayD<T> {
        &self.buffers[id.0].value
    }

    pub fn buffer_mut(&mut self, id: BufId) -> &mut ArrayD<T> {
        &mut self.buffers[id.0].value
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub fn params(&self) -> &[ParamEntry<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[BufEntry<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [BufEntry<T>] {
        &mut self.buffers
    }

    /// Total trainable scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
