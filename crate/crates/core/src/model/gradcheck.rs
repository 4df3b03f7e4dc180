use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::gradcheck::{relative_error, GradReport, FD_STEP};
use crate::tensor::{BnMode, Shape, Tensor};

use super::{ModelError, NetworkConfig, SegEtNetwork};

/// Checks every parameter gradient of `sum(logits)` against central
/// differences, with batch norm in train mode.
pub fn network_gradcheck(
    config: &NetworkConfig,
    input: Shape,
    seed: u64,
    tolerance: f64,
) -> Result<GradReport, ModelError> {
    let mut net = SegEtNetwork::build(config, seed)?;
    net.set_mode(BnMode::Train);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = Tensor::randn(input, 1.0, &mut rng);
    // move BN affine parameters off their trivial initial values
    for p in net.params_mut() {
        if !p.regularized() {
            let s = p.shape();
            let jitter = Tensor::uniform(s, -0.3, 0.3, &mut rng);
            p.value.add_assign(&jitter)?;
        }
    }

    net.zero_grad();
    let logits = net.forward(&x)?;
    net.backward(&Tensor::full(logits.shape(), 1.0))?;
    let analytic: Vec<Vec<f64>> = net
        .params()
        .iter()
        .map(|p| p.grad.as_ref().expect("populated by backward").data().to_vec())
        .collect();

    let mut worst = 0.0f64;
    let mut checked = 0;
    let n_params = analytic.len();
    for pi in 0..n_params {
        for ei in 0..analytic[pi].len() {
            let orig = net.params()[pi].value.data()[ei];
            let (hi, lo) = (orig + FD_STEP, orig - FD_STEP);
            net.params_mut()[pi].value.data_mut()[ei] = hi;
            let up = net.forward(&x)?.sum();
            net.params_mut()[pi].value.data_mut()[ei] = lo;
            let down = net.forward(&x)?.sum();
            net.params_mut()[pi].value.data_mut()[ei] = orig;
            let numeric = (up - down) / (hi - lo);
            worst = worst.max(relative_error(analytic[pi][ei], numeric));
            checked += 1;
        }
    }
    Ok(GradReport {
        name: format!(
            "network base{} depth{} rates{:?} input {}x{}",
            config.base_filters, config.depth, config.dilation_rates, input.h, input.w
        ),
        max_rel_error: worst,
        checked,
        tolerance,
        passed: worst <= tolerance,
    })
}
