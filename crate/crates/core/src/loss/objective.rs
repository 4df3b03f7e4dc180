use crate::tensor::{sigmoid_scalar, Parameter, Tensor};

use super::{LossConfig, LossError};

/// A scalar loss and its gradient with respect to the input it was given.
#[derive(Debug, Clone)]
pub struct ScalarGrad {
    pub loss: f64,
    pub grad: Tensor,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub total: f64,
    pub bce: f64,
    pub jaccard: f64,
    pub regularizer: f64,
    pub grad_logits: Tensor,
}

fn check_binary(t: &Tensor) -> Result<(), LossError> {
    match t.data().iter().position(|&v| v != 0.0 && v != 1.0) {
        Some(index) => Err(LossError::NonBinaryTarget {
            index,
            value: t.data()[index],
        }),
        None => Ok(()),
    }
}

/// Pixel-mean binary cross entropy on logits, `max(y,0) - y*t + ln(1 + e^-|y|)`.
///
/// With weights the mean is `sum(w*l) / N`, N being the pixel count.
pub fn bce_stable(logits: &Tensor, targets: &Tensor, weights: Option<&Tensor>) -> Result<ScalarGrad, LossError> {
    targets.expect_shape(logits.shape())?;
    if let Some(w) = weights {
        w.expect_shape(logits.shape())?;
    }
    check_binary(targets)?;
    let n = logits.len() as f64;
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for i in 0..logits.len() {
        let y = logits.data()[i];
        let t = targets.data()[i];
        let w = weights.map_or(1.0, |w| w.data()[i]);
        let l = y.max(0.0) - y * t + (-y.abs()).exp().ln_1p();
        total += w * l;
        grad.data_mut()[i] = w * (sigmoid_scalar(y) - t) / n;
    }
    Ok(ScalarGrad { loss: total / n, grad })
}

/// Smoothed soft Jaccard distance `1 - (I + s) / (U + s)` over the whole batch.
pub fn jaccard_distance_loss(probs: &Tensor, targets: &Tensor, smooth: f64) -> Result<ScalarGrad, LossError> {
    targets.expect_shape(probs.shape())?;
    check_binary(targets)?;
    if let Some(index) = probs.data().iter().position(|&p| !(-1e-6..=1.0 + 1e-6).contains(&p)) {
        return Err(LossError::ProbabilityRange {
            index,
            value: probs.data()[index],
        });
    }
    let (mut inter, mut sy, mut st) = (0.0, 0.0, 0.0);
    for (&y, &t) in probs.data().iter().zip(targets.data()) {
        inter += y * t;
        sy += y;
        st += t;
    }
    let num = inter + smooth;
    let den = sy + st - inter + smooth;
    let grad = Tensor::from_vec(
        probs.shape(),
        targets
            .data()
            .iter()
            .map(|&t| -(t * den - num * (1.0 - t)) / (den * den))
            .collect(),
    )?;
    Ok(ScalarGrad {
        loss: 1.0 - num / den,
        grad,
    })
}

/// `½ λ Σ w²` over regularized parameters; adds `λ w` to their gradients.
pub fn regularizer(params: &mut [&mut Parameter], lambda: f64) -> Result<f64, LossError> {
    let mut total = 0.0;
    for p in params.iter_mut().filter(|p| p.regularized()) {
        total += p.value.data().iter().map(|w| w * w).sum::<f64>();
        if lambda != 0.0 {
            let mut g = p.value.clone();
            g.scale(lambda);
            p.accumulate(&g)?;
        }
    }
    Ok(0.5 * lambda * total)
}

/// BCE + Jaccard (through the sigmoid) + L2 penalty.
pub fn combined_loss(
    logits: &Tensor,
    targets: &Tensor,
    params: &mut [&mut Parameter],
    cfg: &LossConfig,
    weights: Option<&Tensor>,
) -> Result<LossOutput, LossError> {
    cfg.validate()?;
    let bce = bce_stable(logits, targets, weights)?;
    let probs = logits.map(sigmoid_scalar);
    let jac = jaccard_distance_loss(&probs, targets, cfg.jaccard_smooth)?;
    let mut grad_logits = bce.grad;
    for ((g, &gj), &p) in grad_logits.data_mut().iter_mut().zip(jac.grad.data()).zip(probs.data()) {
        *g += gj * p * (1.0 - p);
    }
    let reg = regularizer(params, cfg.lambda)?;
    Ok(LossOutput {
        total: bce.loss + jac.loss + reg,
        bce: bce.loss,
        jaccard: jac.loss,
        regularizer: reg,
        grad_logits,
    })
}
