//! Central finite-difference verification of analytic backward passes.
//!
//! Each operator is reduced to a scalar `L = Σ r ⊙ f(x)` with a fixed random
//! projection `r`, so that no coordinate of the gradient is trivially zero.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

pub const FD_STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradReport {
    pub fn merge(name: impl Into<String>, parts: &[GradReport]) -> GradReport {
        let tolerance = parts.iter().map(|p| p.tolerance).fold(f64::INFINITY, f64::min);
        let max_rel_error = parts.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
        GradReport {
            name: name.into(),
            max_rel_error,
            checked: parts.iter().map(|p| p.checked).sum(),
            tolerance,
            passed: parts.iter().all(|p| p.passed),
        }
    }
}

/// Compares `analytic` against central differences of `f` around `x`.
pub fn check(
    name: impl Into<String>,
    x: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    analytic: &[f64],
    tolerance: f64,
) -> GradReport {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = probe[i];
        let (hi, lo) = (orig + FD_STEP, orig - FD_STEP);
        probe[i] = hi;
        let up = f(&probe);
        probe[i] = lo;
        let down = f(&probe);
        probe[i] = orig;
        // divide by the step actually taken after rounding
        let numeric = (up - down) / (hi - lo);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    GradReport {
        name: name.into(),
        max_rel_error: worst,
        checked: x.len(),
        tolerance,
        passed: worst <= tolerance,
    }
}

/// Deliberate corruptions of analytic gradients, used to show the harness
/// actually detects broken backward passes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Mutation {
    #[default]
    None,
    /// Multiplies the conv kernel gradient by the factor.
    ScaleConvKernelGrad(f64),
    /// Multiplies the batch-norm input gradient by the factor.
    ScaleBatchNormInputGrad(f64),
    /// Lets gradient through ReLU where the input was negative.
    LeakyReluGrad,
}

/// Weights of magnitude in [0.5, 1.5] with random sign, so every output
/// coordinate contributes a gradient well above rounding noise.
fn projection(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng).map(|v| v.signum() * (0.5 + v.abs()))
}

/// Neumaier-compensated inner product; keeps summation rounding well below
/// the finite-difference signal.
fn dot(a: &Tensor, b: &Tensor) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (x, y) in a.data().iter().zip(b.data()) {
        let term = x * y;
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn with_data(shape: Shape, data: &[f64]) -> Tensor {
    Tensor::from_vec(shape, data.to_vec()).expect("probe length")
}

pub fn check_conv2d(
    seed: u64,
    input_shape: Shape,
    stride: usize,
    dilation: usize,
    mutation: Mutation,
    tol: f64,
) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ConvSpec::new(input_shape.c, 3, 3, stride, dilation).expect("valid spec");
    let x = Tensor::randn(input_shape, 1.0, &mut rng);
    let kernel = Parameter::new(
        "k",
        ParamRole::ConvKernel,
        Tensor::randn(spec.kernel_shape(), 0.5, &mut rng),
    );
    let bias = Parameter::new(
        "b",
        ParamRole::ConvBias,
        Tensor::randn(spec.bias_shape(), 0.5, &mut rng),
    );
    let r = projection(spec.output_shape(input_shape), &mut rng);

    let (mut k, mut b) = (kernel.clone(), bias.clone());
    let gx = conv2d_backward(&r, Some(&x), &spec, &mut k, Some(&mut b)).expect("backward");
    let mut gk = k.grad.expect("kernel grad");
    if let Mutation::ScaleConvKernelGrad(f) = mutation {
        gk.scale(f);
    }
    let gb = b.grad.expect("bias grad");

    let name = format!("conv2d s{stride} d{dilation}");
    let rx = check(
        format!("{name} input"),
        x.data(),
        |p| dot(&r, &conv2d_forward(&with_data(input_shape, p), &spec, &kernel, Some(&bias)).unwrap()),
        gx.data(),
        tol,
    );
    let rk = check(
        format!("{name} kernel"),
        kernel.value.data(),
        |p| {
            let kk = Parameter::new("k", ParamRole::ConvKernel, with_data(spec.kernel_shape(), p));
            dot(&r, &conv2d_forward(&x, &spec, &kk, Some(&bias)).unwrap())
        },
        gk.data(),
        tol,
    );
    let rb = check(
        format!("{name} bias"),
        bias.value.data(),
        |p| {
            let bb = Parameter::new("b", ParamRole::ConvBias, with_data(spec.bias_shape(), p));
            dot(&r, &conv2d_forward(&x, &spec, &kernel, Some(&bb)).unwrap())
        },
        gb.data(),
        tol,
    );
    GradReport::merge(name, &[rx, rk, rb])
}

pub fn check_batchnorm(seed: u64, input_shape: Shape, mutation: Mutation, tol: f64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = input_shape.c;
    let ashape = Shape::new(1, c, 1, 1);
    let x = Tensor::randn(input_shape, 2.0, &mut rng).map(|v| v + 0.5);
    let gamma = Parameter::new(
        "g",
        ParamRole::BnGamma,
        Tensor::uniform(ashape, 0.5, 1.5, &mut rng),
    );
    let beta = Parameter::new("b", ParamRole::BnBeta, Tensor::randn(ashape, 0.5, &mut rng));
    let r = projection(input_shape, &mut rng);
    let eval = |x: &Tensor, g: &Parameter, b: &Parameter| {
        let mut st = BatchNormState::new(c);
        let (y, _) = batchnorm_forward(x, g, b, BnMode::Train, &mut st).unwrap();
        dot(&r, &y)
    };

    let mut st = BatchNormState::new(c);
    let (_, cache) = batchnorm_forward(&x, &gamma, &beta, BnMode::Train, &mut st).unwrap();
    let (mut g, mut b) = (gamma.clone(), beta.clone());
    let mut gx = batchnorm_backward(&r, Some(&cache), &mut g, &mut b).unwrap();
    if let Mutation::ScaleBatchNormInputGrad(f) = mutation {
        gx.scale(f);
    }

    let rx = check("bn input", x.data(), |p| eval(&with_data(input_shape, p), &gamma, &beta), gx.data(), tol);
    let rg = check(
        "bn gamma",
        gamma.value.data(),
        |p| eval(&x, &Parameter::new("g", ParamRole::BnGamma, with_data(ashape, p)), &beta),
        g.grad.unwrap().data(),
        tol,
    );
    let rb = check(
        "bn beta",
        beta.value.data(),
        |p| eval(&x, &gamma, &Parameter::new("b", ParamRole::BnBeta, with_data(ashape, p))),
        b.grad.unwrap().data(),
        tol,
    );
    GradReport::merge("batchnorm", &[rx, rg, rb])
}

pub fn check_relu(seed: u64, shape: Shape, mutation: Mutation, tol: f64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // keep inputs away from the kink so central differences never straddle it
    let x = Tensor::randn(shape, 1.0, &mut rng).map(|v| if v.abs() < 1e-3 { v + 1e-2 } else { v });
    let r = projection(shape, &mut rng);
    let mut g = relu_backward(&r, &x).unwrap();
    if mutation == Mutation::LeakyReluGrad {
        for (d, (&xi, &ri)) in g.data_mut().iter_mut().zip(x.data().iter().zip(r.data())) {
            if xi <= 0.0 {
                *d = 0.01 * ri;
            }
        }
    }
    check("relu", x.data(), |p| dot(&r, &relu(&with_data(shape, p))), g.data(), tol)
}

pub fn check_sigmoid(seed: u64, shape: Shape, tol: f64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::randn(shape, 3.0, &mut rng);
    let r = projection(shape, &mut rng);
    let g = sigmoid_backward(&r, &sigmoid(&x)).unwrap();
    check("sigmoid", x.data(), |p| dot(&r, &sigmoid(&with_data(shape, p))), g.data(), tol)
}

pub fn check_upsample(seed: u64, shape: Shape, mode: Resample, tol: f64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::randn(shape, 1.0, &mut rng);
    let r = projection(Shape::new(shape.n, shape.c, 2 * shape.h, 2 * shape.w), &mut rng);
    let g = upsample2x_backward(&r, shape, mode).unwrap();
    check(
        format!("upsample2x {}", mode.as_str()),
        x.data(),
        |p| dot(&r, &upsample2x(&with_data(shape, p), mode)),
        g.data(),
        tol,
    )
}

pub fn check_concat(seed: u64, a_shape: Shape, b_channels: usize, tol: f64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b_shape = a_shape.with_channels(b_channels);
    let a = Tensor::randn(a_shape, 1.0, &mut rng);
    let b = Tensor::randn(b_shape, 1.0, &mut rng);
    let r = projection(a_shape.with_channels(a_shape.c + b_channels), &mut rng);
    let parts = split_channels(&r, &[a_shape.c, b_channels]).unwrap();
    let ra = check(
        "concat a",
        a.data(),
        |p| dot(&r, &concat_channels(&[&with_data(a_shape, p), &b]).unwrap()),
        parts[0].data(),
        tol,
    );
    let rb = check(
        "concat b",
        b.data(),
        |p| dot(&r, &concat_channels(&[&a, &with_data(b_shape, p)]).unwrap()),
        parts[1].data(),
        tol,
    );
    GradReport::merge("concat", &[ra, rb])
}

/// Every differentiable operator, each over `seeds` random draws.
pub fn operator_suite(seeds: u64, mutation: Mutation, tol: f64) -> Vec<GradReport> {
    let mut groups: Vec<(String, Vec<GradReport>)> = Vec::new();
    let mut push = |name: &str, r: GradReport| match groups.iter_mut().find(|(n, _)| n == name) {
        Some((_, v)) => v.push(r),
        None => groups.push((name.to_string(), vec![r])),
    };
    for seed in 0..seeds {
        push("conv2d s1 d1", check_conv2d(seed, Shape::new(2, 3, 8, 8), 1, 1, mutation, tol));
        push("conv2d s2 d1", check_conv2d(seed, Shape::new(2, 4, 6, 6), 2, 1, mutation, tol));
        push("conv2d s1 d2", check_conv2d(seed, Shape::new(1, 2, 7, 7), 1, 2, mutation, tol));
        push("conv2d s1 d4", check_conv2d(seed, Shape::new(1, 2, 9, 9), 1, 4, mutation, tol));
        push("batchnorm", check_batchnorm(seed, Shape::new(2, 3, 4, 4), mutation, tol));
        push("relu", check_relu(seed, Shape::new(2, 3, 5, 5), mutation, tol));
        push("sigmoid", check_sigmoid(seed, Shape::new(2, 3, 5, 5), tol));
        push(
            "upsample2x half-pixel",
            check_upsample(seed, Shape::new(2, 2, 3, 4), Resample::HalfPixel, tol),
        );
        push(
            "upsample2x align-corners",
            check_upsample(seed, Shape::new(1, 2, 3, 3), Resample::AlignCorners, tol),
        );
        push("concat", check_concat(seed, Shape::new(2, 2, 4, 4), 3, tol));
    }
    groups
        .into_iter()
        .map(|(name, parts)| GradReport::merge(name, &parts))
        .collect()
}
