use super::{Tensor, TensorError};

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| x.max(0.0))
}

/// Passes `grad_out` through where the forward input was positive.
pub fn relu_backward(grad_out: &Tensor, saved_input: &Tensor) -> Result<Tensor, TensorError> {
    grad_out.expect_shape(saved_input.shape())?;
    let mut g = grad_out.clone();
    for (d, &x) in g.data_mut().iter_mut().zip(saved_input.data()) {
        if x <= 0.0 {
            *d = 0.0;
        }
    }
    Ok(g)
}

/// Logistic function evaluated on the branch that never exponentiates a
/// positive argument.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(sigmoid_scalar)
}

/// Backward of [`sigmoid`] given its forward output.
pub fn sigmoid_backward(grad_out: &Tensor, saved_output: &Tensor) -> Result<Tensor, TensorError> {
    grad_out.expect_shape(saved_output.shape())?;
    let mut g = grad_out.clone();
    for (d, &s) in g.data_mut().iter_mut().zip(saved_output.data()) {
        *d *= s * (1.0 - s);
    }
    Ok(g)
}
