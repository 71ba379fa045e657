//! Named trainable parameters and batch-norm running statistics.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BnId(pub(crate) usize);

/// A trainable tensor with its gradient accumulator and Adam moment slots.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Param {
            name: name.into(),
            grad: zeros.clone(),
            adam_m: zeros.clone(),
            adam_v: zeros,
            value,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Running mean/variance of one batch-norm layer. Not trainable.
#[derive(Debug, Clone)]
pub struct BnStats<T: Scalar = f32> {
    pub name: String,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

/// Ordered parameter registry. Names are unique; iteration order is the
/// registration order and is what checkpoints and initialization follow.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar = f32> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
    bn: Vec<BnStats<T>>,
    grads_ready: bool,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
            bn: Vec::new(),
            grads_ready: false,
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param::new(name, value));
        Ok(id)
    }

    pub fn register_bn(&mut self, name: impl Into<String>, channels: usize) -> BnId {
        let id = BnId(self.bn.len());
        self.bn.push(BnStats {
            name: name.into(),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        });
        id
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.id(name).map(|id| &mut self.params[id.0])
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn bn(&self, id: BnId) -> &BnStats<T> {
        &self.bn[id.0]
    }

    pub fn bn_mut(&mut self, id: BnId) -> &mut BnStats<T> {
        &mut self.bn[id.0]
    }

    pub fn bn_stats(&self) -> &[BnStats<T>] {
        &self.bn
    }

    pub fn bn_stats_mut(&mut self) -> &mut [BnStats<T>] {
        &mut self.bn
    }

    /// Total trainable element count (running statistics excluded).
    pub fn trainable_count(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
        self.grads_ready = false;
    }

    /// True once a backward pass has written gradients that no optimizer
    /// step has consumed yet.
    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    pub(crate) fn mark_grads_ready(&mut self) {
        self.grads_ready = true;
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    adam_m: p.adam_m.cast(),
                    adam_v: p.adam_v.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
            bn: self
                .bn
                .iter()
                .map(|s| BnStats {
                    name: s.name.clone(),
                    running_mean: s.running_mean.iter().map(|v| U::of(v.as_f64())).collect(),
                    running_var: s.running_var.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
            grads_ready: self.grads_ready,
        }
    }
}
