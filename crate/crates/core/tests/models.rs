use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use biasprobe_core::models::{assemble, checkpoint, AssembleOptions, Generator, GeneratorSpec, ModelKind, Role};
use biasprobe_core::nn::Init;
use biasprobe_core::Tensor;

fn random(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn assert_gradient_flow(spec: &GeneratorSpec, batch: usize) {
    let mut g = Generator::new(spec, Init::Normal, &mut Init::rng(5)).unwrap();
    let r = spec.input_resolution;
    let x = random([batch, 3, r, r], 1);
    let (y, trace) = g.forward(&x).unwrap();
    assert_eq!(y.shape(), [batch, 3, r, r]);
    g.zero_grad();
    g.backward(&trace, &random(y.shape(), 2));
    for p in g.params() {
        assert!(p.grad.iter().all(|v| v.is_finite()), "{} has non-finite gradient", p.name);
        assert!(p.grad.iter().any(|&v| v != 0.0), "{} receives no gradient", p.name);
    }
}

#[test]
fn gradient_reaches_every_parameter_with_and_without_skips() {
    assert_gradient_flow(&GeneratorSpec::new(4, 32, 4), 1);
    assert_gradient_flow(&GeneratorSpec::new(4, 32, 4).with_skip_mask(vec![false; 4]), 1);
    assert_gradient_flow(&GeneratorSpec::new(4, 32, 4).with_skip_mask(vec![true, false, true, false]), 1);
}

#[test]
fn depth_seven_needs_two_samples_for_gradient_below_the_bottleneck() {
    // 128 px through seven stride-2 levels leaves 1×1 maps; batch statistics
    // over one sample are degenerate there.
    assert_gradient_flow(&GeneratorSpec::new(7, 128, 2), 2);
}

fn mean_output(g: &Generator, x: &Tensor) -> f64 {
    let (y, _) = g.forward(x).unwrap();
    y.data().iter().map(|&v| v as f64).sum::<f64>() / y.len() as f64
}

#[test]
fn generator_gradients_match_finite_differences() {
    let spec = GeneratorSpec::new(3, 16, 4);
    let mut g = Generator::new(&spec, Init::Normal, &mut Init::rng(8)).unwrap();
    let x = random([1, 3, 16, 16], 3);
    let (y, trace) = g.forward(&x).unwrap();
    g.zero_grad();
    g.backward(&trace, &Tensor::full(y.shape(), 1.0 / y.len() as f32));

    // Ten random coordinates: a tensor uniformly, then an index in it. Values
    // below 1e-4 are skipped since f32 rounding of the objective dominates
    // their central difference.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n_tensors = g.params().len();
    let mut picks = Vec::new();
    while picks.len() < 10 {
        let pi = rng.random_range(0..n_tensors);
        let i = rng.random_range(0..g.params()[pi].len());
        let analytic = g.params()[pi].grad[i];
        if analytic.abs() > 1e-4 {
            picks.push((pi, i, analytic));
        }
    }

    let eps = 1e-3f32;
    for (pi, i, analytic) in picks {
        let original = g.params()[pi].value[i];
        g.params_mut()[pi].value[i] = original + eps;
        let up = mean_output(&g, &x);
        g.params_mut()[pi].value[i] = original - eps;
        let down = mean_output(&g, &x);
        g.params_mut()[pi].value[i] = original;
        let numeric = (up - down) / (2.0 * eps as f64);
        let rel = (numeric - analytic as f64).abs() / (analytic.abs() as f64).max(numeric.abs());
        let name = g.params()[pi].name.clone();
        assert!(rel < 1e-2, "{name}[{i}]: analytic {analytic} vs numeric {numeric} (rel {rel:.3e})");
    }
}

#[test]
fn assemble_is_seeded_and_roles_are_independent() {
    let spec = GeneratorSpec::new(3, 32, 4);
    let opts = AssembleOptions { disc_base_channels: 4, init: Init::Normal, seed: 6 };
    let a = assemble(ModelKind::Pairwise, &spec, &opts).unwrap();
    let b = assemble(ModelKind::Pairwise, &spec, &opts).unwrap();
    let values = |g: &Generator| g.params().iter().flat_map(|p| p.value.clone()).collect::<Vec<_>>();
    let (la, ra) = (a.generator(Role::Left).unwrap(), a.generator(Role::Right).unwrap());
    assert_eq!(values(la), values(b.generator(Role::Left).unwrap()));
    assert_ne!(values(la), values(ra));
    assert!(a.generator(Role::Shared).is_none());

    let pix = assemble(ModelKind::Pix2pix, &spec, &opts).unwrap();
    assert_eq!(pix.generators.len(), 1);
    assert_eq!(pix.discriminators.len(), 1);
}

#[test]
fn saved_generator_predicts_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GeneratorSpec::new(3, 32, 4).with_skip_mask(vec![true, false, true]);
    let g = Generator::new(&spec, Init::Orthogonal, &mut Init::rng(2)).unwrap();
    checkpoint::save_generator(&g, dir.path()).unwrap();
    let back = checkpoint::load_generator(dir.path()).unwrap();
    assert_eq!(back.spec(), g.spec());
    let x = random([3, 3, 32, 32], 9);
    assert!(g.predict(&x).unwrap().bit_eq(&back.predict(&x).unwrap()));
}

#[test]
fn inference_is_per_sample() {
    // Predicting a batch gives the same result as predicting each item.
    let g = Generator::new(&GeneratorSpec::new(3, 32, 4), Init::Normal, &mut Init::rng(3)).unwrap();
    let x = random([3, 3, 32, 32], 10);
    let all = g.predict(&x).unwrap();
    for n in 0..3 {
        let one = g.predict(&x.select(n)).unwrap();
        assert_eq!(one.data(), all.item(n));
    }
}
