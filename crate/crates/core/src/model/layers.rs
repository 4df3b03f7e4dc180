use rand::Rng;

use crate::tensor::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, relu, relu_backward,
    BatchNormCache, BatchNormState, BnMode, ConvSpec, ParamRole, Parameter, Shape, Tensor,
    TensorError,
};

/// How a forward pass treats the nonlinear and batch-dependent pieces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Pass {
    pub mode: BnMode,
    /// Bypass batch norm and replace ReLU with the identity (receptive-field probes).
    pub linearized: bool,
}

#[derive(Clone)]
pub(crate) struct BnUnit {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub state: BatchNormState,
    cache: Option<BatchNormCache>,
}

/// Convolution, optionally followed by batch norm and ReLU.
#[derive(Clone)]
pub struct ConvBlock {
    pub name: String,
    pub spec: ConvSpec,
    pub(crate) kernel: Parameter,
    pub(crate) bias: Option<Parameter>,
    pub(crate) bn: Option<BnUnit>,
    pub(crate) relu: bool,
    input: Option<Tensor>,
    pre_relu: Option<Tensor>,
    bypassed: bool,
}

impl ConvBlock {
    /// Kernel drawn from N(0, 2/fan_in); biases zero; gamma 1, beta 0.
    pub(crate) fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        spec: ConvSpec,
        batch_norm: bool,
        bias: bool,
        relu: bool,
        rng: &mut R,
    ) -> Self {
        let name = name.into();
        let fan_in = (spec.kernel * spec.kernel * spec.in_channels) as f64;
        let kernel = Parameter::new(
            format!("{name}.kernel"),
            ParamRole::ConvKernel,
            Tensor::randn(spec.kernel_shape(), (2.0 / fan_in).sqrt(), rng),
        );
        let bias = bias.then(|| {
            Parameter::new(
                format!("{name}.bias"),
                ParamRole::ConvBias,
                Tensor::zeros(spec.bias_shape()),
            )
        });
        let bn = batch_norm.then(|| {
            let s = Shape::new(1, spec.out_channels, 1, 1);
            BnUnit {
                gamma: Parameter::new(format!("{name}.bn.gamma"), ParamRole::BnGamma, Tensor::full(s, 1.0)),
                beta: Parameter::new(format!("{name}.bn.beta"), ParamRole::BnBeta, Tensor::zeros(s)),
                state: BatchNormState::new(spec.out_channels),
                cache: None,
            }
        });
        Self {
            name,
            spec,
            kernel,
            bias,
            bn,
            relu,
            input: None,
            pre_relu: None,
            bypassed: false,
        }
    }

    pub(crate) fn forward(&mut self, x: &Tensor, pass: Pass) -> Result<Tensor, TensorError> {
        let mut y = conv2d_forward(x, &self.spec, &self.kernel, self.bias.as_ref())?;
        self.input = Some(x.clone());
        self.bypassed = pass.linearized;
        if let Some(bn) = self.bn.as_mut().filter(|_| !pass.linearized) {
            let (out, cache) = batchnorm_forward(&y, &bn.gamma, &bn.beta, pass.mode, &mut bn.state)?;
            bn.cache = Some(cache);
            y = out;
        }
        if self.relu && !pass.linearized {
            let out = relu(&y);
            self.pre_relu = Some(y);
            y = out;
        }
        Ok(y)
    }

    pub(crate) fn backward(&mut self, grad: &Tensor) -> Result<Tensor, TensorError> {
        let mut g = grad.clone();
        if self.relu && !self.bypassed {
            let pre = self.pre_relu.as_ref().ok_or(TensorError::MissingCache("relu"))?;
            g = relu_backward(&g, pre)?;
        }
        if let Some(bn) = self.bn.as_mut().filter(|_| !self.bypassed) {
            g = batchnorm_backward(&g, bn.cache.as_ref(), &mut bn.gamma, &mut bn.beta)?;
        }
        conv2d_backward(&g, self.input.as_ref(), &self.spec, &mut self.kernel, self.bias.as_mut())
    }

    pub(crate) fn has_cache(&self) -> bool {
        self.input.is_some()
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut v = vec![&self.kernel];
        v.extend(self.bias.as_ref());
        if let Some(bn) = &self.bn {
            v.push(&bn.gamma);
            v.push(&bn.beta);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = vec![&mut self.kernel];
        v.extend(self.bias.as_mut());
        if let Some(bn) = &mut self.bn {
            v.push(&mut bn.gamma);
            v.push(&mut bn.beta);
        }
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn bn_state(&self) -> Option<&BatchNormState> {
        self.bn.as_ref().map(|b| &b.state)
    }

    pub(crate) fn bn_state_mut(&mut self) -> Option<&mut BatchNormState> {
        self.bn.as_mut().map(|b| &mut b.state)
    }

    pub fn kernel(&self) -> &Parameter {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut Parameter {
        &mut self.kernel
    }

    pub fn bias_mut(&mut self) -> Option<&mut Parameter> {
        self.bias.as_mut()
    }
}
