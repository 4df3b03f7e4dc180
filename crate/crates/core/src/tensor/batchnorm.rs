use super::{Parameter, Shape, Tensor, TensorError};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight on the old running statistic in the moving-average update.
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Running statistics carried between batches.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    /// Number of train-mode batches folded into the running statistics.
    pub updates: u64,
    warned: bool,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            eps: BN_EPSILON,
            updates: 0,
            warned: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    mode: BnMode,
    x_hat: Tensor,
    inv_std: Vec<f64>,
}

fn check_affine(input: Shape, gamma: &Parameter, beta: &Parameter) -> Result<(), TensorError> {
    let want = Shape::new(1, input.c, 1, 1);
    gamma.value.expect_shape(want)?;
    beta.value.expect_shape(want)?;
    Ok(())
}

/// Per-channel normalization over (N, H, W) followed by the affine map.
pub fn batchnorm_forward(
    input: &Tensor,
    gamma: &Parameter,
    beta: &Parameter,
    mode: BnMode,
    state: &mut BatchNormState,
) -> Result<(Tensor, BatchNormCache), TensorError> {
    let s = input.shape();
    check_affine(s, gamma, beta)?;
    if state.channels() != s.c {
        return Err(TensorError::ChannelMismatch {
            expected: state.channels(),
            got: s.c,
        });
    }
    let count = (s.n * s.plane()) as f64;
    let mut x_hat = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    let mut inv_std = vec![0.0; s.c];

    if mode == BnMode::Infer && state.updates == 0 && !state.warned {
        log::warn!(
            "batch norm ({} channels) evaluated in infer mode before any training update",
            s.c
        );
        state.warned = true;
    }

    for c in 0..s.c {
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut sum = 0.0;
                for n in 0..s.n {
                    sum += input.plane(n, c).iter().sum::<f64>();
                }
                let mean = sum / count;
                let mut sq = 0.0;
                for n in 0..s.n {
                    sq += input.plane(n, c).iter().map(|x| (x - mean).powi(2)).sum::<f64>();
                }
                let var = sq / count;
                let m = state.momentum;
                state.running_mean[c] = m * state.running_mean[c] + (1.0 - m) * mean;
                state.running_var[c] = m * state.running_var[c] + (1.0 - m) * var;
                (mean, var)
            }
            BnMode::Infer => (state.running_mean[c], state.running_var[c]),
        };
        let istd = 1.0 / (var + state.eps).sqrt();
        inv_std[c] = istd;
        let (g, b) = (gamma.value.data()[c], beta.value.data()[c]);
        for n in 0..s.n {
            let src = input.plane(n, c);
            let xh = x_hat.plane_mut(n, c);
            for (h, &x) in xh.iter_mut().zip(src) {
                *h = (x - mean) * istd;
            }
            let xh = x_hat.plane(n, c).to_vec();
            for (o, h) in out.plane_mut(n, c).iter_mut().zip(xh) {
                *o = g * h + b;
            }
        }
    }
    if mode == BnMode::Train {
        state.updates += 1;
    }
    Ok((out, BatchNormCache { mode, x_hat, inv_std }))
}

pub fn batchnorm_backward(
    grad_out: &Tensor,
    cache: Option<&BatchNormCache>,
    gamma: &mut Parameter,
    beta: &mut Parameter,
) -> Result<Tensor, TensorError> {
    let cache = cache.ok_or(TensorError::MissingCache("batchnorm"))?;
    let s = grad_out.shape();
    cache.x_hat.expect_shape(s)?;
    check_affine(s, gamma, beta)?;
    let count = (s.n * s.plane()) as f64;
    let mut grad_in = Tensor::zeros(s);
    let mut dgamma = vec![0.0; s.c];
    let mut dbeta = vec![0.0; s.c];

    for c in 0..s.c {
        let mut sg = 0.0;
        let mut sgx = 0.0;
        for n in 0..s.n {
            for (&g, &h) in grad_out.plane(n, c).iter().zip(cache.x_hat.plane(n, c)) {
                sg += g;
                sgx += g * h;
            }
        }
        dbeta[c] = sg;
        dgamma[c] = sgx;
        let gm = gamma.value.data()[c];
        let istd = cache.inv_std[c];
        for n in 0..s.n {
            let go = grad_out.plane(n, c);
            let xh = cache.x_hat.plane(n, c);
            let gi = grad_in.plane_mut(n, c);
            match cache.mode {
                BnMode::Train => {
                    let k = gm * istd / count;
                    for ((d, &g), &h) in gi.iter_mut().zip(go).zip(xh) {
                        *d = k * (count * g - sg - h * sgx);
                    }
                }
                BnMode::Infer => {
                    for (d, &g) in gi.iter_mut().zip(go) {
                        *d = gm * istd * g;
                    }
                }
            }
        }
    }
    let ashape = Shape::new(1, s.c, 1, 1);
    gamma.accumulate(&Tensor::from_vec(ashape, dgamma)?)?;
    beta.accumulate(&Tensor::from_vec(ashape, dbeta)?)?;
    Ok(grad_in)
}
