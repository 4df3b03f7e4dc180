use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seget_core::loss::{combined_loss, LossConfig};
use seget_core::model::{NetworkConfig, SegEtNetwork};
use seget_core::tensor::{conv2d_backward, conv2d_forward, BnMode, ConvSpec, ParamRole, Parameter, Shape, Tensor};

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("conv3x3");
    for (cin, size, dilation) in [(4, 64, 1), (16, 64, 1), (16, 64, 4)] {
        let spec = ConvSpec::new(cin, cin, 3, 1, dilation).unwrap();
        let mut kernel = Parameter::new("k", ParamRole::ConvKernel, Tensor::randn(spec.kernel_shape(), 0.1, &mut rng));
        let x = Tensor::randn(Shape::new(1, cin, size, size), 1.0, &mut rng);
        let id = format!("c{cin} {size}x{size} d{dilation}");
        group.bench_function(BenchmarkId::new("forward", &id), |b| {
            b.iter(|| conv2d_forward(&x, &spec, &kernel, None).unwrap())
        });
        let y = conv2d_forward(&x, &spec, &kernel, None).unwrap();
        group.bench_function(BenchmarkId::new("backward", &id), |b| {
            b.iter(|| {
                kernel.zero_grad();
                conv2d_backward(&y, Some(&x), &spec, &mut kernel, None).unwrap()
            })
        });
    }
    group.finish();
}

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut net = SegEtNetwork::build(&NetworkConfig::small(4, 4, vec![1, 2, 4, 8]), 0).unwrap();
    let x = Tensor::randn(Shape::new(1, 1, 128, 128), 1.0, &mut rng);
    let mut group = c.benchmark_group("segnet base4 depth4 128x128");
    group.sample_size(10);
    net.set_mode(BnMode::Infer);
    group.bench_function("infer", |b| b.iter(|| net.forward(&x).unwrap()));
    net.set_mode(BnMode::Train);
    group.bench_function("train step", |b| {
        b.iter(|| {
            net.zero_grad();
            let y = net.forward(&x).unwrap();
            net.backward(&Tensor::full(y.shape(), 1e-3)).unwrap();
        })
    });
    group.finish();
}

fn loss(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shape = Shape::new(4, 1, 128, 128);
    let logits = Tensor::randn(shape, 2.0, &mut rng);
    let targets = logits.map(|v| (v > 1.0) as u8 as f64);
    let weights = targets.map(|t| if t > 0.0 { 20.0 } else { 1.0 });
    let cfg = LossConfig::default();
    c.bench_function("combined loss 4x128x128", |b| {
        b.iter(|| combined_loss(&logits, &targets, &mut [], &cfg, Some(&weights)).unwrap())
    });
}

criterion_group!(benches, conv, network, loss);
criterion_main!(benches);
