//! Hot kernels under the default rayon pool and under a one-thread pool.
//!
//! `cargo bench -p biasprobe-core` compares the two; with
//! `--no-default-features` the crate is built without rayon and only the
//! sequential numbers are reported.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use biasprobe_core::instrumentation::{filter_audit, tensor_variance, DEFAULT_MARGIN};
use biasprobe_core::models::{Generator, GeneratorSpec};
use biasprobe_core::nn::{Conv2d, Init};
use biasprobe_core::Tensor;

fn random(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

/// Runs `f` in each available execution mode.
fn modes(c: &mut Criterion, group: &str, mut f: impl FnMut() + Send) {
    let mut g = c.benchmark_group(group);
    #[cfg(feature = "parallel")]
    {
        g.bench_function(BenchmarkId::new("rayon_pool", rayon::current_num_threads()), |b| b.iter(&mut f));
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_function(BenchmarkId::new("single_thread", 1), |b| single.install(|| b.iter(&mut f)));
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_function(BenchmarkId::new("sequential", 1), |b| b.iter(&mut f));
    g.finish();
}

fn conv(c: &mut Criterion) {
    let mut layer = Conv2d::new("c", 32, 64, 4, 2, 1, true);
    let mut rng = Init::rng(1);
    Init::Normal.fill_kernel(&mut layer.weight, &mut rng);
    let x = random([4, 32, 32, 32], 2);
    modes(c, "conv2d_forward", || {
        std::hint::black_box(layer.forward(&x).unwrap());
    });
}

fn generator(c: &mut Criterion) {
    let mut g = Generator::new(&GeneratorSpec::new(4, 64, 16), Init::Normal, &mut Init::rng(3)).unwrap();
    let x = random([4, 3, 64, 64], 4);
    modes(c, "generator_predict", || {
        std::hint::black_box(g.predict(&x).unwrap());
    });
    let (y, _) = g.forward(&x).unwrap();
    let dy = random(y.shape(), 5);
    modes(c, "generator_forward_backward", || {
        let (_, trace) = g.forward(&x).unwrap();
        g.zero_grad();
        g.backward(&trace, &dy);
    });
}

fn analysis(c: &mut Criterion) {
    let t = random([16, 64, 32, 32], 6);
    modes(c, "tensor_variance", || {
        std::hint::black_box(tensor_variance(&t));
    });
    let models: Vec<Generator> =
        (0..6).map(|s| Generator::new(&GeneratorSpec::new(4, 64, 16), Init::Normal, &mut Init::rng(s)).unwrap()).collect();
    let refs: Vec<&Generator> = models.iter().collect();
    modes(c, "filter_audit", || {
        std::hint::black_box(filter_audit(&refs, 0, DEFAULT_MARGIN).unwrap());
    });
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = conv, generator, analysis
}
criterion_main!(kernels);
