use super::{Shape, Tensor, TensorError};

/// Concatenates along the channel axis, blocks in argument order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor, TensorError> {
    let first = inputs.first().ok_or(TensorError::EmptyConcat)?.shape();
    for t in &inputs[1..] {
        let s = t.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(TensorError::ShapeMismatch {
                left: first,
                right: s,
            });
        }
    }
    let c: usize = inputs.iter().map(|t| t.shape().c).sum();
    let shape = Shape::new(first.n, c, first.h, first.w);
    let mut data = Vec::with_capacity(shape.numel());
    for n in 0..first.n {
        for t in inputs {
            let per = t.shape().c * first.plane();
            data.extend_from_slice(&t.data()[n * per..(n + 1) * per]);
        }
    }
    Tensor::from_vec(shape, data)
}

/// Backward of [`concat_channels`]: slices `grad` into blocks of the given channel counts.
pub fn split_channels(grad: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>, TensorError> {
    let s = grad.shape();
    let total: usize = channels.iter().sum();
    if total != s.c {
        return Err(TensorError::ChannelMismatch {
            expected: total,
            got: s.c,
        });
    }
    let plane = s.plane();
    let mut parts: Vec<Vec<f64>> = channels
        .iter()
        .map(|&c| Vec::with_capacity(s.n * c * plane))
        .collect();
    for n in 0..s.n {
        let mut start = (n * s.c) * plane;
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&grad.data()[start..start + c * plane]);
            start += c * plane;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::from_vec(s.with_channels(c), d))
        .collect()
}
