use std::collections::HashSet;
use std::sync::OnceLock;

use image::RgbImage;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use biasprobe_core::dataset::{
    build_split, load_manifest, make_probe_set, make_synthetic_corpus, Attribute, FacePairManifest, ProbeKind, SplitSpec,
    SynthOptions,
};
use biasprobe_core::evaluation::{
    content_key, probe_model, ClientKind, FaceAnalysisClient, FaceAnalysisResult, ProbeOptions,
};
use biasprobe_core::instrumentation::{pca_top_k, tensor_variance};
use biasprobe_core::models::{assemble, AssembleOptions, Generator, GeneratorSpec, ModelKind};
use biasprobe_core::nn::Init;
use biasprobe_core::training::DecaySchedule;
use biasprobe_core::Tensor;

fn manifest() -> &'static FacePairManifest {
    static M: OnceLock<(tempfile::TempDir, FacePairManifest)> = OnceLock::new();
    &M.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let opts = SynthOptions { n_subjects: 40, resolution: 8, seed: 1, attribute_ratio: 0.6 };
        let m = load_manifest(&make_synthetic_corpus(&opts, tmp.path()).unwrap().1).unwrap();
        (tmp, m)
    })
    .1
}

fn tensor(shape: [usize; 4], seed: u64, lo: f32, hi: f32) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Answers from a hash of the image, so outcomes vary but are reproducible.
struct Scripted(u64);

impl FaceAnalysisClient for Scripted {
    fn kind(&self) -> ClientKind {
        ClientKind::Stub
    }

    fn analyze(&self, image: &RgbImage) -> biasprobe_core::Result<FaceAnalysisResult> {
        let h = u64::from_str_radix(&content_key(image)?[..15], 16).unwrap() ^ self.0;
        if h % 13 == 0 {
            return Err(biasprobe_core::Error::Invalid("scripted failure".into()));
        }
        let detected = h % 4 != 0;
        let attribute = detected.then(|| if h % 3 == 0 { Attribute::A } else { Attribute::B });
        Ok(FaceAnalysisResult { face_detected: detected, attribute, confidence: 0.5 })
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn splits_are_deterministic_disjoint_and_honour_the_ratio(
        r_maj in 1u32..=10, r_min in 0u32..=10, cap in 1usize..60, seed in any::<u64>(), majority_b in any::<bool>(),
        held in 0usize..5,
    ) {
        let m = manifest();
        let mut spec = SplitSpec::new("p", r_maj, r_min, cap, seed);
        if majority_b {
            spec.majority = Attribute::B;
        }
        let test: HashSet<String> = m.pairs.iter().step_by(7).take(held).map(|p| p.id().to_string()).collect();
        let (Ok(a), Ok(b)) = (build_split(m, &spec, &test), build_split(m, &spec, &test)) else {
            return Ok(());
        };
        prop_assert_eq!(&a, &b);

        let ids: HashSet<&String> = a.pair_ids.iter().collect();
        prop_assert_eq!(ids.len(), a.pair_ids.len());
        prop_assert!(a.pair_ids.iter().all(|id| !test.contains(id)));
        prop_assert!(a.majority_count <= cap);
        for id in a.majority_ids() {
            prop_assert_eq!(m.pair_attribute(m.pair(id).unwrap()), spec.majority);
        }
        for id in a.minority_ids() {
            prop_assert_eq!(m.pair_attribute(m.pair(id).unwrap()), spec.majority.other());
        }
        // Never more minority than the ratio asks for (rounded up).
        let (maj, min) = (a.majority_count as u64, a.minority_count as u64);
        let (rj, rn) = (r_maj as u64, r_min as u64);
        prop_assert!(min * rj < maj * rn + rj);
        if r_min == 0 {
            prop_assert_eq!(min, 0);
        }
    }

    #[test]
    fn linear_schedules_hit_both_endpoints_monotonically(
        start in 0.0f64..20.0, end in 0.0f64..20.0, total in 2usize..60,
    ) {
        let s = DecaySchedule::linear(start, end);
        prop_assert_eq!(s.value(0, total), start);
        prop_assert_eq!(s.value(total - 1, total), end);
        let vals: Vec<f64> = (0..total).map(|e| s.value(e, total)).collect();
        for w in vals.windows(2) {
            if start >= end {
                prop_assert!(w[1] <= w[0] + 1e-12);
            } else {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
        }
        prop_assert_eq!(DecaySchedule::constant(start).value(total / 2, total), start);
    }

    #[test]
    fn pca_ignores_translation_and_ratios_sum_to_one(
        n in 3usize..12, f in 2usize..8, seed in any::<u64>(), shift in -50.0f64..50.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..f).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let moved: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x + shift).collect()).collect();
        let k = 2.min(f);
        let a = pca_top_k(&rows, k).unwrap();
        let b = pca_top_k(&moved, k).unwrap();
        let total: f64 = a.explained_ratio_all().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            prop_assert!((x - y).abs() < 1e-8 * x.abs().max(1.0));
        }
        // Coordinates agree up to the sign of each axis.
        for c in 0..k {
            let dot: f64 = a.projections.iter().zip(&b.projections).map(|(p, q)| p[c] * q[c]).sum();
            let s = if dot < 0.0 { -1.0 } else { 1.0 };
            if a.eigenvalues[c] > 1e-6 && (c + 1 >= a.eigenvalues.len() || a.eigenvalues[c] - a.eigenvalues[c + 1] > 1e-6) {
                for (p, q) in a.projections.iter().zip(&b.projections) {
                    prop_assert!((p[c] - s * q[c]).abs() < 1e-6, "{} vs {}", p[c], q[c]);
                }
            }
        }
    }

    #[test]
    fn variance_is_shift_invariant_and_scales_quadratically(
        seed in any::<u64>(), shift in -5.0f32..5.0, scale in -4.0f32..4.0,
    ) {
        let t = tensor([2, 3, 4, 4], seed, -1.0, 1.0);
        let v = tensor_variance(&t);
        let shifted = Tensor::from_vec(t.shape(), t.data().iter().map(|x| x + shift).collect()).unwrap();
        let scaled = Tensor::from_vec(t.shape(), t.data().iter().map(|x| x * scale).collect()).unwrap();
        prop_assert!((tensor_variance(&shifted) - v).abs() < 1e-5);
        let want = (scale as f64).powi(2) * v;
        prop_assert!((tensor_variance(&scaled) - want).abs() < 1e-5 * want.max(1.0));
    }

    #[test]
    fn skip_count_is_the_mask_popcount(mask in prop::collection::vec(any::<bool>(), 3..8)) {
        let depth = mask.len();
        let spec = GeneratorSpec::new(depth, 1 << depth, 2).with_skip_mask(mask.clone());
        prop_assert!(spec.validate().is_ok());
        prop_assert_eq!(spec.skip_count(), mask.iter().filter(|&&b| b).count());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generator_output_stays_in_the_unit_range(seed in any::<u64>(), amp in 0.1f32..50.0, orth in any::<bool>()) {
        let init = if orth { Init::Orthogonal } else { Init::Normal };
        let g = Generator::new(&GeneratorSpec::new(3, 16, 4), init, &mut Init::rng(seed)).unwrap();
        let y = g.predict(&tensor([2, 3, 16, 16], seed ^ 1, -amp, amp)).unwrap();
        prop_assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn tallies_cover_every_probe_and_repeat(seed in any::<u64>(), repeats in 1usize..6, noise in any::<bool>()) {
        let opts = AssembleOptions { disc_base_channels: 4, init: Init::Normal, seed };
        let kind = if seed % 2 == 0 { ModelKind::Pix2pix } else { ModelKind::Pairwise };
        let bundle = assemble(kind, &GeneratorSpec::new(3, 16, 4), &opts).unwrap();
        let probe_kind = if noise { ProbeKind::GaussianNoise } else { ProbeKind::GrayRamp };
        let probes = make_probe_set(probe_kind, 16, seed).unwrap();
        let popts = ProbeOptions { repeats, split_name: "p".into() };
        // A report with most analyses failed is refused outright.
        let Ok(r) = probe_model(&bundle, &probes, None, &Scripted(seed), &popts) else {
            return Ok(());
        };
        prop_assert_eq!(r.tallies.total(), probes.len() * repeats);
        prop_assert_eq!(r.probe_tallies.total(), probes.len());
    }
}
