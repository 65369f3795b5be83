use crate::error::{NnError, Result};
use crate::tensor::Tensor;

/// One trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered collection of named parameters. Order is the checkpoint order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn by_name(&self, name: &str) -> Result<&Param> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| NnError::Usage(format!("no parameter named {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Mutable access to two distinct parameters' gradients at once.
    pub fn two_grads_mut(&mut self, a: usize, b: usize) -> (&mut Tensor, &mut Tensor) {
        assert_ne!(a, b, "two_grads_mut needs distinct indices");
        if a < b {
            let (lo, hi) = self.params.split_at_mut(b);
            (&mut lo[a].grad, &mut hi[0].grad)
        } else {
            let (lo, hi) = self.params.split_at_mut(a);
            let (ga, gb) = (&mut hi[0].grad, &mut lo[b].grad);
            (ga, gb)
        }
    }

    /// Scales every gradient, e.g. by 1/batch after accumulating a batch.
    pub fn scale_grads(&mut self, s: f32) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g *= s;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }
}
