use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use biasprobe_core::dataset::{load_image, load_manifest, make_probe_set, make_synthetic_corpus, preprocess_batch, Pose, ProbeKind, SynthOptions};
use biasprobe_core::instrumentation::{
    capture, centroid_and_radius, distribution_map, filter_analysis, filter_audit, variance_trace, DEFAULT_MARGIN,
};
use biasprobe_core::models::{Generator, GeneratorSpec};
use biasprobe_core::nn::Init;
use biasprobe_core::Tensor;

fn gen(seed: u64) -> Generator {
    Generator::new(&GeneratorSpec::new(3, 32, 8), Init::Normal, &mut Init::rng(seed)).unwrap()
}

fn ramp() -> Tensor {
    let set = make_probe_set(ProbeKind::GrayRamp, 32, 0).unwrap();
    preprocess_batch(&set.images, 32).unwrap()
}

#[test]
fn capture_does_not_change_the_output() {
    let g = gen(1);
    let x = ramp();
    let (dumps, out) = capture(&g, "m", &x, "p").unwrap();
    assert!(out.bit_eq(&g.predict(&x).unwrap()));
    let graph = g.graph();
    assert_eq!(dumps.len(), graph.layers.len());
    for (d, l) in dumps.iter().zip(&graph.layers) {
        assert_eq!(d.layer_name, l.name);
        assert_eq!(d.tensor.batch(), 9);
        assert_eq!(d.tensor.channels(), l.out_channels);
        assert_eq!(d.tensor.height(), l.spatial_size);
        assert!(d.tensor.all_finite());
    }
    // The input layer is the probe tensor itself.
    assert!(dumps[0].tensor.bit_eq(&x));
}

#[test]
fn variance_trace_is_deterministic_and_ordered() {
    let g = gen(2);
    let a = variance_trace(&g, "m", &ramp(), "p").unwrap();
    let b = variance_trace(&g, "m", &ramp(), "p").unwrap();
    assert_eq!(a, b);
    let names: Vec<&str> = a.entries.iter().map(|e| e.layer.as_str()).collect();
    assert_eq!(names, g.graph().names());
    assert!(a.entries.iter().all(|e| e.variance.is_finite() && e.variance >= 0.0));
}

/// Raw `[h,w,in,out]` filters averaged over `in`, then projected on the first
/// principal axis of the pooled rows via SVD.
fn oracle(models: &[&Generator], layer: &str) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for g in models {
        let (shape, data) = g.filters_hwio(layer).unwrap();
        let (hw, cin, cout) = (shape[0] * shape[1], shape[2], shape[3]);
        for o in 0..cout {
            rows.push((0..hw).map(|s| (0..cin).map(|c| data[(s * cin + c) * cout + o] as f64).sum::<f64>() / cin as f64).collect());
        }
    }
    let (n, f) = (rows.len(), rows[0].len());
    let m = DMatrix::from_fn(n, f, |i, j| rows[i][j]);
    let mean = m.row_mean();
    let c = DMatrix::from_fn(n, f, |i, j| m[(i, j)] - mean[j]);
    let svd = c.clone().svd(false, true);
    let top = svd.singular_values.argmax().0;
    let v = svd.v_t.unwrap().row(top).transpose();
    (c * v).iter().copied().collect()
}

#[test]
fn filter_values_match_an_independent_pca_on_random_models() {
    let models: Vec<Generator> = (0..6).map(|s| gen(100 + s)).collect();
    let refs: Vec<&Generator> = models.iter().collect();
    // down2 of this spec is a [4,4,8,16] kernel.
    assert_eq!(refs[0].filters_hwio("down2").unwrap().0, vec![4, 4, 8, 16]);
    let s = filter_analysis(&refs, "down2", 0, DEFAULT_MARGIN).unwrap();
    assert_eq!(s.points.len(), 6 * 16);
    let want = oracle(&refs, "down2");
    let dot: f64 = want.iter().zip(&s.points).map(|(w, p)| w * p.pca_value).sum();
    let sign = dot.signum();
    for (w, p) in want.iter().zip(&s.points) {
        assert!((w - sign * p.pca_value).abs() < 1e-8, "{w} vs {}", p.pca_value);
    }
    let (lo, hi) = s.reference_interval;
    for p in &s.points {
        assert_eq!(p.is_outlier, p.pca_value < lo || p.pca_value > hi);
        if p.model_index == 0 {
            assert!(!p.is_outlier);
        }
    }
}

#[test]
fn audit_covers_every_kernel_layer_and_checks_its_inputs() {
    let models: Vec<Generator> = (0..6).map(|s| gen(s)).collect();
    let refs: Vec<&Generator> = models.iter().collect();
    let all = filter_audit(&refs, 2, DEFAULT_MARGIN).unwrap();
    let kernel_layers: Vec<_> = refs[0].graph().layers.iter().filter(|l| l.has_filters()).map(|l| l.name.clone()).collect();
    assert_eq!(all.iter().map(|s| s.layer_name.clone()).collect::<Vec<_>>(), kernel_layers);

    assert!(filter_audit(&refs[..5], 0, DEFAULT_MARGIN).is_err());
    assert!(filter_audit(&refs, 6, DEFAULT_MARGIN).is_err());
    let other = Generator::new(&GeneratorSpec::new(4, 32, 8), Init::Normal, &mut Init::rng(0)).unwrap();
    let mut mixed = refs.clone();
    mixed[5] = &other;
    assert!(filter_audit(&mixed, 0, DEFAULT_MARGIN).is_err());
}

#[test]
fn left_and_right_inputs_form_separate_clusters() {
    let tmp = tempfile::tempdir().unwrap();
    let opts = SynthOptions { n_subjects: 20, resolution: 32, seed: 8, attribute_ratio: 0.5 };
    let m = load_manifest(&make_synthetic_corpus(&opts, tmp.path()).unwrap().1).unwrap();
    let (mut imgs, mut tags) = (Vec::new(), Vec::new());
    for r in m.records.iter().filter(|r| r.pose.is_side()) {
        imgs.push(load_image(&m.image_path(r)).unwrap());
        let group = if r.pose == Pose::Left { "left" } else { "right" };
        tags.push((group.to_string(), r.id.clone()));
    }
    let map = distribution_map(&imgs, &tags, 2).unwrap();
    let (cl, rl) = centroid_and_radius(&map.group("left"));
    let (cr, rr) = centroid_and_radius(&map.group("right"));
    let dist = cl.iter().zip(&cr).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(dist > rl.max(rr), "centroids {dist:.1} apart, radii {rl:.1} / {rr:.1}");
}

#[test]
fn projections_ignore_a_common_offset() {
    // Adding the same constant to every pixel moves the mean, not the axes.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let imgs: Vec<image::RgbImage> = (0..6)
        .map(|_| image::RgbImage::from_fn(8, 8, |_, _| image::Rgb([rng.random_range(0..200u8), rng.random_range(0..200), rng.random_range(0..200)])))
        .collect();
    let shifted: Vec<image::RgbImage> = imgs
        .iter()
        .map(|i| image::RgbImage::from_fn(8, 8, |x, y| {
            let p = i.get_pixel(x, y);
            image::Rgb([p[0] + 40, p[1] + 40, p[2] + 40])
        }))
        .collect();
    let tags: Vec<(String, String)> = (0..6).map(|i| ("g".into(), i.to_string())).collect();
    let a = distribution_map(&imgs, &tags, 2).unwrap();
    let b = distribution_map(&shifted, &tags, 2).unwrap();
    for (p, q) in a.points.iter().zip(&b.points) {
        for (x, y) in p.coords.iter().zip(&q.coords) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }
}
