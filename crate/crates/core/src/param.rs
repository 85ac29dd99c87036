//! Named trainable tensors.

use crate::tensor::{Scalar, Tensor};

/// Which optimizer treatment a parameter gets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ParamGroup {
    /// Parameters of a kernel generator network. Regularized through the
    /// generated kernels rather than weight decay.
    KernelNet,
    Other,
}

/// A tensor with a stable hierarchical path such as `blocks.0.conv.pointwise.weight`.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<S: Scalar> {
    pub name: String,
    pub value: Tensor<S>,
    pub group: ParamGroup,
    pub trainable: bool,
}

impl<S: Scalar> Param<S> {
    pub fn new(name: impl Into<String>, value: Tensor<S>) -> Self {
        Param {
            name: name.into(),
            value,
            group: ParamGroup::Other,
            trainable: true,
        }
    }

    pub fn kernel_net(name: impl Into<String>, value: Tensor<S>) -> Self {
        Param {
            group: ParamGroup::KernelNet,
            ..Param::new(name, value)
        }
    }

    /// Non-trainable state saved with the parameters (running statistics).
    pub fn buffer(name: impl Into<String>, value: Tensor<S>) -> Self {
        Param {
            trainable: false,
            ..Param::new(name, value)
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Anything that owns parameters.
pub trait Module<S: Scalar> {
    fn params(&self) -> Vec<&Param<S>>;
    fn params_mut(&mut self) -> Vec<&mut Param<S>>;

    /// Trainable element count.
    fn num_params(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).map(|p| p.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
