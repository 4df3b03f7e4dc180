use super::{Shape, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    ConvKernel,
    ConvBias,
    BnGamma,
    BnBeta,
}

impl ParamRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParamRole::ConvKernel => "conv-kernel",
            ParamRole::ConvBias => "conv-bias",
            ParamRole::BnGamma => "bn-gamma",
            ParamRole::BnBeta => "bn-beta",
        }
    }
}

/// A trainable tensor with its accumulated gradient.
///
/// `grad` is `None` until the first [`Parameter::zero_grad`] or backward
/// accumulation; the optimizer refuses to step a parameter whose gradient was
/// never set.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub role: ParamRole,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, role: ParamRole, value: Tensor) -> Self {
        Self {
            name: name.into(),
            role,
            value,
            grad: None,
        }
    }

    /// Only convolution kernels take part in the L2 penalty.
    pub fn regularized(&self) -> bool {
        self.role == ParamRole::ConvKernel
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.fill(0.0),
            None => self.grad = Some(Tensor::zeros(self.value.shape())),
        }
    }

    /// Gradient buffer, allocating zeros if it was never set.
    pub fn grad_mut(&mut self) -> &mut Tensor {
        let shape = self.value.shape();
        self.grad.get_or_insert_with(|| Tensor::zeros(shape))
    }

    pub fn accumulate(&mut self, g: &Tensor) -> Result<(), TensorError> {
        self.grad_mut().add_assign(g)
    }
}
