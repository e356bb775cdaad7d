use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use proptest::prelude::*;

use biasprobe_core::dataset::{
    in_distribution_probes, load_image, load_manifest, make_probe_set, make_synthetic_corpus, Attribute,
    FacePairManifest, Pose, ProbeKind, SynthOptions,
};
use biasprobe_core::evaluation::{
    match_rate, probe_model, recovery_rate, report_tables, stub_classify, BiasReport, CachedClient, FaceAnalysisClient,
    FaceAnalysisResult, Outcome, ProbeOptions, RemoteClient, RemoteConfig, StubClassifier, Tallies,
};
use biasprobe_core::models::{assemble, AssembleOptions, GeneratorSpec, ModelBundle, ModelKind};
use biasprobe_core::nn::Init;

fn corpus(dir: &std::path::Path, n: usize, seed: u64, ratio: f64) -> FacePairManifest {
    let opts = SynthOptions { n_subjects: n, resolution: 32, seed, attribute_ratio: ratio };
    load_manifest(&make_synthetic_corpus(&opts, dir).unwrap().1).unwrap()
}

fn bundle(kind: ModelKind, seed: u64) -> ModelBundle {
    let opts = AssembleOptions { disc_base_channels: 4, init: Init::Normal, seed };
    assemble(kind, &GeneratorSpec::new(3, 32, 4), &opts).unwrap()
}

#[test]
fn stub_reads_the_attribute_of_real_frontal_images() {
    let tmp = tempfile::tempdir().unwrap();
    let m = corpus(tmp.path(), 100, 2, 0.6);
    let (mut right, mut total) = (0, 0);
    for r in m.records.iter().filter(|r| r.pose == Pose::Front) {
        let res = stub_classify(&load_image(&m.image_path(r)).unwrap());
        total += 1;
        if res.face_detected && res.attribute == Some(r.attribute) {
            right += 1;
        }
    }
    let acc = right as f64 / total as f64;
    assert!(acc >= 0.95, "stub accuracy {acc}");
}

#[test]
fn cached_client_answers_repeat_probes_without_new_calls() {
    let tmp = tempfile::tempdir().unwrap();
    let m = corpus(&tmp.path().join("c"), 6, 1, 0.5);
    let ids: Vec<String> = m.pairs.iter().map(|p| p.id().to_string()).collect();
    let probes = in_distribution_probes(&m, &ids).unwrap();
    let b = bundle(ModelKind::Pairwise, 1);
    let cache = tmp.path().join("cache");
    let opts = ProbeOptions { repeats: 3, split_name: "x".into() };

    let client = CachedClient::new(StubClassifier::new(), Some(cache.clone())).unwrap();
    let first = probe_model(&b, &probes, Some(&m), &client, &opts).unwrap();
    let calls = client.calls();
    assert!(calls > 0 && calls <= probes.len());
    let second = probe_model(&b, &probes, Some(&m), &client, &opts).unwrap();
    assert_eq!(client.calls(), calls);
    assert_eq!(first, second);

    // A fresh client over the same directory is served from disk.
    let fresh = CachedClient::new(StubClassifier::new(), Some(cache)).unwrap();
    let third = probe_model(&b, &probes, Some(&m), &fresh, &opts).unwrap();
    assert_eq!(fresh.calls(), 0);
    assert_eq!(third, first);
}

#[test]
fn persisted_tallies_recount_from_their_probe_records() {
    let tmp = tempfile::tempdir().unwrap();
    let m = corpus(&tmp.path().join("c"), 8, 5, 0.5);
    let ids: Vec<String> = m.pairs.iter().map(|p| p.id().to_string()).collect();
    let repeats = 4;
    let opts = ProbeOptions { repeats, split_name: "s".into() };
    for (kind, probes) in [
        (ModelKind::Pairwise, in_distribution_probes(&m, &ids).unwrap()),
        (ModelKind::Pairwise, make_probe_set(ProbeKind::GaussianNoise, 32, 3).unwrap()),
        (ModelKind::Pix2pix, make_probe_set(ProbeKind::GrayRamp, 32, 0).unwrap()),
    ] {
        let report = probe_model(&bundle(kind, 2), &probes, Some(&m), &StubClassifier::new(), &opts).unwrap();
        let path = tmp.path().join("r.json");
        std::fs::write(&path, report.to_json().unwrap()).unwrap();
        let back: BiasReport = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        assert_eq!(back, report);

        let mut per_eval = Tallies::default();
        let mut per_probe = Tallies::default();
        for rec in &back.probes {
            per_eval.add(rec.outcome, repeats);
            per_probe.add(rec.outcome, 1);
        }
        assert_eq!(per_eval, back.tallies);
        assert_eq!(per_probe, back.probe_tallies);
        assert_eq!(back.tallies.total(), probes.len() * repeats);

        for attr in Attribute::ALL {
            let c = back.counts.get(attr);
            let truth = back.probes.iter().filter(|p| p.ground_truth == Some(attr)).count();
            assert_eq!(c.evaluated, truth * repeats);
            if let Some(rate) = back.recovery_rate.get(attr) {
                assert_eq!(c.detected, (rate * c.evaluated as f64).round() as usize);
            }
        }
        if kind == ModelKind::Pix2pix {
            assert_eq!(back.tallies.mixed, 0);
        }
    }
}

#[test]
fn report_tables_round_trip_through_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let m = corpus(&tmp.path().join("c"), 6, 3, 0.5);
    let ids: Vec<String> = m.pairs.iter().map(|p| p.id().to_string()).collect();
    let probes = in_distribution_probes(&m, &ids).unwrap();
    let client = StubClassifier::new();
    let reports: Vec<BiasReport> = ["10:0", "5:5"]
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let opts = ProbeOptions { repeats: 2, split_name: name.to_string() };
            probe_model(&bundle(ModelKind::Pairwise, i as u64), &probes, Some(&m), &client, &opts).unwrap()
        })
        .collect();

    let tables = report_tables(&reports, None).unwrap();
    let csv_text = tables.summary.to_csv().unwrap();
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, vec!["metric", "10:0", "5:5"]);
    let rows: Vec<(String, Vec<String>)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r.iter().skip(1).map(String::from).collect())
        })
        .collect();
    assert_eq!(rows, tables.summary.rows);
    assert!(tables.pivot.is_none());

    let single = report_tables(&reports[..1], None).unwrap();
    assert_eq!(single.summary.header.len(), 1);

    let gray = probe_model(
        &bundle(ModelKind::Pairwise, 0),
        &make_probe_set(ProbeKind::GrayRamp, 32, 0).unwrap(),
        None,
        &client,
        &ProbeOptions::default(),
    )
    .unwrap();
    assert!(report_tables(&[reports[0].clone(), gray.clone()], None).is_err());
    let pivot = report_tables(&[gray], None).unwrap().pivot.unwrap();
    assert_eq!(pivot.rows.len(), Outcome::ALL.len());
    assert_eq!(pivot.header.len(), 9);
}

fn result(detected: bool, attr: Option<Attribute>) -> FaceAnalysisResult {
    FaceAnalysisResult { face_detected: detected, attribute: if detected { attr } else { None }, confidence: 0.9 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn swapping_attributes_swaps_the_rates(items in prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 0..40)) {
        let to_attr = |b: bool| if b { Attribute::A } else { Attribute::B };
        let rows: Vec<_> = items.iter().map(|&(t, d, a)| (to_attr(t), result(d, Some(to_attr(a))))).collect();
        let swapped: Vec<_> = rows
            .iter()
            .map(|(t, r)| (t.other(), FaceAnalysisResult { attribute: r.attribute.map(Attribute::other), ..*r }))
            .collect();
        let (rec, rec_s) = (recovery_rate(&rows), recovery_rate(&swapped));
        let (mat, mat_s) = (match_rate(&rows), match_rate(&swapped));
        prop_assert_eq!(rec.a, rec_s.b);
        prop_assert_eq!(rec.b, rec_s.a);
        prop_assert_eq!(mat.a, mat_s.b);
        prop_assert_eq!(mat.b, mat_s.a);
        for r in [rec.a, rec.b, mat.a, mat.b].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}

// ---- remote client against a local HTTP server

struct Mock {
    url: String,
    bodies: Arc<Mutex<Vec<Vec<u8>>>>,
}

/// Serves one scripted `(status, body)` per connection.
fn mock_server(script: Vec<(u16, &'static str)>) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/detect", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let seen = bodies.clone();
    thread::spawn(move || {
        for (status, body) in script {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream);
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            seen.lock().unwrap().push(buf);
            let mut stream = reader.into_inner();
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    Mock { url, bodies }
}

fn remote(url: &str, attempts: u32) -> RemoteClient {
    RemoteClient::new(RemoteConfig {
        url: url.into(),
        api_key: "key123".into(),
        api_secret: Some("s3cret".into()),
        timeout: Duration::from_secs(5),
        rate_limit: 0.0,
        attempts,
        backoff: Duration::from_millis(1),
    })
}

const FEMALE: &str = r#"{"faces":[{"attributes":{"gender":{"value":"Female"}}}]}"#;

#[test]
fn remote_client_sends_multipart_and_is_cached() {
    let mock = mock_server(vec![(200, FEMALE)]);
    let client = CachedClient::new(remote(&mock.url, 1), None).unwrap();
    let img = image::RgbImage::from_pixel(8, 8, image::Rgb([10, 20, 30]));
    let a = client.analyze(&img).unwrap();
    let b = client.analyze(&img).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.attribute, Some(Attribute::B));
    assert_eq!(client.inner().requests(), 1);

    let bodies = mock.bodies.lock().unwrap();
    assert_eq!(bodies.len(), 1);
    let text = String::from_utf8_lossy(&bodies[0]);
    for field in ["name=\"api_key\"\r\n\r\nkey123", "name=\"api_secret\"\r\n\r\ns3cret", "name=\"return_attributes\"\r\n\r\ngender", "name=\"image_file\"; filename="] {
        assert!(text.contains(field), "missing {field}");
    }
    assert!(bodies[0].windows(4).any(|w| w == b"\x89PNG"));
}

#[test]
fn remote_client_retries_then_succeeds() {
    let mock = mock_server(vec![(503, "busy"), (200, r#"{"error_message":"CONCURRENCY_LIMIT_EXCEEDED"}"#), (200, r#"{"faces":[]}"#)]);
    let client = remote(&mock.url, 3);
    let r = client.analyze(&image::RgbImage::new(4, 4)).unwrap();
    assert!(!r.face_detected);
    assert_eq!(client.requests(), 3);
}

#[test]
fn remote_failures_are_counted_not_read_as_no_face() {
    // Every probe's single attempt fails: the report refuses to stand.
    let mock = mock_server(vec![(500, "down"); 64]);
    let client = remote(&mock.url, 1);
    let probes = make_probe_set(ProbeKind::GrayRamp, 32, 0).unwrap();
    let err = probe_model(&bundle(ModelKind::Pix2pix, 0), &probes, None, &client, &ProbeOptions::default());
    assert!(err.is_err());

    let err = remote(&mock.url, 2).analyze(&image::RgbImage::new(4, 4)).unwrap_err();
    assert!(err.to_string().contains("500"), "{err}");
}
