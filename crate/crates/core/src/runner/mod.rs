//! Config-driven experiments over shared stages: corpus, splits, training,
//! probing, instrumentation, reports and plots.
//!
//! Each run writes into `<output_dir>/<experiment>-<config hash>/`:
//!
//! ```text
//! config.json              snapshot that reproduces the run
//! corpus/                  synthetic corpus, when generated
//! test_ids.json            held-out pair ids
//! splits/split_<name>.json
//! models/<name>/           training log + checkpoints, one per split
//! reports/<probe kind>/    BiasReport JSONs, index.json, table.{csv,txt}
//! pca/scatter.json         latent_probe distribution map
//! variance/traces.json     layer_variance traces
//! filters/audit_<role>.json
//! plots/                   SVG + PNG + CSV sidecars
//! artifact.json            file list with SHA-256 digests
//! FAILED                   present only when a stage failed
//! ```

mod artifact;
mod config;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use artifact::{hash_tree, sha256_file, FileEntry, RunArtifact, ARTIFACT_FILE, CONFIG_FILE, FAILURE_MARKER};
pub use config::{slug, CorpusSource, EvaluationConfig, Experiment, ExperimentConfig, ModelConfig};

use crate::dataset::{
    build_split, in_distribution_probes, load_manifest, make_probe_set, make_synthetic_corpus, preprocess_batch,
    subject_test_ids, FacePairManifest, Pose, ProbeKind, ProbeSet,
};
use crate::error::{Error, IoContext, Result};
use crate::evaluation::{
    confound_estimate, probe_model, probe_set_id, report_tables, BiasReport, CachedClient, ClientKind,
    ConfoundEstimate, FaceAnalysisClient, ProbeOptions, RemoteClient, RemoteConfig, StubClassifier,
};
use crate::instrumentation::{distribution_map, filter_audit, variance_trace, DEFAULT_MARGIN};
use crate::models::{assemble, checkpoint, AssembleOptions, ModelBundle};
use crate::plot::{self, Figure};
use crate::training::{train, LOG_FILE};

pub const REPORTS_DIR: &str = "reports";
pub const INDEX_FILE: &str = "index.json";

/// Ordered list of the reports in one `reports/<probe kind>/` directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportIndex {
    pub probe_kind: ProbeKind,
    pub probe_set_id: String,
    pub reports: Vec<String>,
}

struct Model {
    label: String,
    dir: Option<PathBuf>,
    bundle: ModelBundle,
}

/// `<output_dir>/<experiment>-<12 hex of the config hash>`. The output
/// directory itself is left out of the hash so a snapshot re-run elsewhere
/// lands in an identically named directory.
pub fn run_dir(config: &ExperimentConfig) -> Result<PathBuf> {
    let mut c = config.clone();
    c.output_dir = PathBuf::new();
    let digest = hex::encode(Sha256::digest(serde_json::to_vec(&c)?));
    Ok(config.output_dir.join(format!("{}-{}", config.experiment, &digest[..12])))
}

/// Runs an experiment end to end. Refuses to reuse an existing run
/// directory; on failure the partial directory is kept with a `FAILED`
/// marker holding the error.
pub fn run(config: &ExperimentConfig) -> Result<RunArtifact> {
    config.validate()?;
    let dir = run_dir(config)?;
    if dir.exists() {
        return Err(Error::Config(format!(
            "run directory {} already exists; remove it or change the config",
            dir.display()
        )));
    }
    fs::create_dir_all(&dir).at(&dir)?;
    write_json(&dir.join(CONFIG_FILE), config)?;
    log::info!("{} run in {}", config.experiment, dir.display());
    match execute(config, &dir) {
        Ok(mut art) => {
            art.files = hash_tree(&dir)?;
            art.save()?;
            Ok(art)
        }
        Err(e) => {
            let _ = fs::write(dir.join(FAILURE_MARKER), format!("{e}\n"));
            Err(e)
        }
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).at(parent)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).at(path)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).at(parent)?;
    }
    fs::write(path, text).at(path)
}

pub fn make_client(eval: &EvaluationConfig) -> Result<Box<dyn FaceAnalysisClient>> {
    let inner: Box<dyn FaceAnalysisClient> = match eval.client {
        ClientKind::Stub => Box::new(StubClassifier::new()),
        ClientKind::RemoteApi => Box::new(RemoteClient::new(RemoteConfig::from_env(
            Duration::from_secs_f64(eval.timeout_secs),
            eval.rate_limit,
        )?)),
    };
    Ok(Box::new(CachedClient::new(inner, eval.cache_dir.clone())?))
}

fn load_corpus(config: &ExperimentConfig, dir: &Path) -> Result<Option<FacePairManifest>> {
    match &config.corpus {
        None => Ok(None),
        Some(CorpusSource::Manifest(p)) => load_manifest(p).map(Some),
        Some(CorpusSource::Synthetic(opts)) => {
            let (_, path) = make_synthetic_corpus(opts, &dir.join("corpus"))?;
            load_manifest(&path).map(Some)
        }
    }
}

fn obtain_models(
    config: &ExperimentConfig,
    dir: &Path,
    manifest: Option<&FacePairManifest>,
    test_ids: &HashSet<String>,
) -> Result<Vec<Model>> {
    if !config.trains() {
        let mut seen = HashSet::new();
        return config
            .checkpoints
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut label = c.file_name().map_or(format!("m{i}"), |n| n.to_string_lossy().into_owned());
                if !seen.insert(label.clone()) {
                    label = format!("{label}#{i}");
                }
                Ok(Model { label, dir: Some(c.clone()), bundle: checkpoint::load_bundle(c, None)? })
            })
            .collect();
    }
    let manifest = manifest.ok_or_else(|| Error::Config("training needs a corpus".into()))?;
    let spec = config.model.generator_spec(config.experiment)?;
    let options = AssembleOptions {
        disc_base_channels: config.model.disc_base_channels,
        init: config.model.init,
        seed: config.seed,
    };
    let mut models = Vec::new();
    for split_spec in &config.splits {
        let name = slug(&split_spec.name);
        let split = build_split(manifest, split_spec, test_ids)?;
        write_json(&dir.join("splits").join(format!("split_{name}.json")), &split)?;
        log::info!(
            "training {} on split {} ({} + {} pairs)",
            config.model.kind,
            split_spec.name,
            split.majority_count,
            split.minority_count
        );
        let bundle = assemble(config.model.kind, &spec, &options)?;
        let run = dir.join("models").join(&name);
        let outcome = train(&config.training, bundle, manifest, &split, &run)?;
        models.push(Model { label: split_spec.name.clone(), dir: Some(run), bundle: outcome.bundle });
    }
    Ok(models)
}

fn write_reports(
    dir: &Path,
    probes: &ProbeSet,
    reports: &[BiasReport],
    labels: &[&str],
    confound: Option<&ConfoundEstimate>,
) -> Result<Vec<PathBuf>> {
    let sub = dir.join(REPORTS_DIR).join(probes.kind.to_string());
    let mut written = Vec::new();
    let mut names = Vec::new();
    for (r, label) in reports.iter().zip(labels) {
        let name = format!("{}.json", slug(label));
        let path = sub.join(&name);
        write_text(&path, &(r.to_json()? + "\n"))?;
        names.push(name);
        written.push(path);
    }
    write_json(
        &sub.join(INDEX_FILE),
        &ReportIndex { probe_kind: probes.kind, probe_set_id: probe_set_id(probes), reports: names },
    )?;
    if let Some(c) = confound {
        write_json(&sub.join("confound.json"), c)?;
    }
    let tables = report_tables(reports, confound)?;
    write_text(&sub.join("table.csv"), &tables.summary.to_csv()?)?;
    write_text(&sub.join("table.txt"), &tables.text())?;
    if let Some(p) = &tables.pivot {
        write_text(&sub.join("pivot.csv"), &p.to_csv()?)?;
    }
    Ok(written)
}

fn probe_all(
    models: &[Model],
    probes: &ProbeSet,
    manifest: Option<&FacePairManifest>,
    client: &dyn FaceAnalysisClient,
    repeats: usize,
) -> Result<Vec<BiasReport>> {
    models
        .iter()
        .map(|m| {
            let opts = ProbeOptions { repeats, split_name: m.label.clone() };
            probe_model(&m.bundle, probes, manifest, client, &opts)
        })
        .collect()
}

fn execute(config: &ExperimentConfig, dir: &Path) -> Result<RunArtifact> {
    let manifest = load_corpus(config, dir)?;
    let test_ids = match &manifest {
        Some(m) => subject_test_ids(m, config.evaluation.test_subjects_per_attribute),
        None => HashSet::new(),
    };
    let mut sorted_test: Vec<String> = test_ids.iter().cloned().collect();
    sorted_test.sort();
    if manifest.is_some() {
        write_json(&dir.join("test_ids.json"), &sorted_test)?;
    }
    let models = obtain_models(config, dir, manifest.as_ref(), &test_ids)?;
    let labels: Vec<&str> = models.iter().map(|m| m.label.as_str()).collect();
    let resolution = config.model.resolution;
    let mut reports = Vec::new();
    let figures: Vec<Figure>;

    match config.experiment {
        Experiment::GenderBias | Experiment::Ablation => {
            let m = manifest.as_ref().expect("validated: training needs a corpus");
            let client = make_client(&config.evaluation)?;
            let probes = in_distribution_probes(m, &sorted_test)?;
            let rs = probe_all(&models, &probes, Some(m), client.as_ref(), config.evaluation.repeats)?;
            let confound = confound_estimate(client.as_ref(), m, Some(&sorted_test))?;
            reports.extend(write_reports(dir, &probes, &rs, &labels, Some(&confound))?);
            figures = vec![Figure::RecoveryBars, Figure::MatchBars];
        }
        Experiment::LatentProbe => {
            let client = make_client(&config.evaluation)?;
            let noise = make_probe_set(ProbeKind::GaussianNoise, resolution, config.seed)?;
            let gray = make_probe_set(ProbeKind::GrayRamp, resolution, 0)?;
            for set in [&noise, &gray] {
                let rs = probe_all(&models, set, None, client.as_ref(), config.evaluation.repeats)?;
                reports.extend(write_reports(dir, set, &rs, &labels, None)?);
            }
            let map = latent_map(&models, &[&noise, &gray], manifest.as_ref(), &sorted_test)?;
            write_json(&dir.join("pca").join("scatter.json"), &map)?;
            figures = vec![Figure::PcaScatter];
        }
        Experiment::LayerVariance => {
            let gray = make_probe_set(ProbeKind::GrayRamp, resolution, 0)?;
            let batch = preprocess_batch(&gray.images, resolution)?;
            let id = probe_set_id(&gray);
            let mut traces = Vec::new();
            for m in &models {
                for (role, g) in &m.bundle.generators {
                    traces.push(variance_trace(g, &format!("{}/{}", m.label, role.name()), &batch, &id)?);
                }
            }
            write_json(&dir.join("variance").join("traces.json"), &traces)?;
            figures = vec![Figure::VarianceCurves];
        }
        Experiment::FilterAudit => {
            write_json(&dir.join("filters").join("models.json"), &labels)?;
            for (role, _) in &models[0].bundle.generators {
                let gens = models
                    .iter()
                    .map(|m| {
                        m.bundle
                            .generator(*role)
                            .ok_or_else(|| Error::Invalid(format!("model {} has no {} generator", m.label, role.name())))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let scatters = filter_audit(&gens, config.filter_reference, DEFAULT_MARGIN)?;
                write_json(&dir.join("filters").join(format!("audit_{}.json", role.name())), &scatters)?;
            }
            figures = vec![Figure::FilterScatter];
        }
    }

    let mut plots = Vec::new();
    for f in figures {
        plots.extend(plot::plot(dir, f)?);
    }
    let checkpoints: Vec<PathBuf> = models.iter().filter_map(|m| m.dir.clone()).collect();
    let logs = checkpoints
        .iter()
        .map(|c| c.join(LOG_FILE))
        .filter(|p| p.starts_with(dir) && p.exists())
        .collect();
    Ok(RunArtifact {
        dir: dir.to_path_buf(),
        config: config.clone(),
        checkpoints,
        logs,
        reports,
        plots,
        files: Vec::new(),
    })
}

/// PCA map of probe inputs, every generator's outputs and, when a corpus
/// is at hand, the held-out real frontals of each attribute.
fn latent_map(
    models: &[Model],
    sets: &[&ProbeSet],
    manifest: Option<&FacePairManifest>,
    test_ids: &[String],
) -> Result<crate::instrumentation::DistributionMap> {
    let mut images = Vec::new();
    let mut tags = Vec::new();
    for set in sets {
        for (img, label) in set.images.iter().zip(&set.labels) {
            images.push(img.clone());
            tags.push((format!("input/{}", set.kind), label.column()));
        }
    }
    for m in models {
        let res = m.bundle.spec.input_resolution;
        for (role, g) in &m.bundle.generators {
            for set in sets {
                let out = g.predict(&preprocess_batch(&set.images, res)?)?;
                for (i, label) in set.labels.iter().enumerate() {
                    let mut img = crate::dataset::postprocess(&out, i);
                    if img.width() as usize != set.images[i].width() as usize {
                        img = image::imageops::resize(
                            &img,
                            set.images[i].width(),
                            set.images[i].height(),
                            image::imageops::FilterType::Triangle,
                        );
                    }
                    images.push(img);
                    tags.push((format!("{}/{}/{}", m.label, role.name(), set.kind), label.column()));
                }
            }
        }
    }
    if let Some(man) = manifest {
        let size = sets.first().and_then(|s| s.images.first()).map(|i| (i.width(), i.height()));
        let mut fronts: Vec<&str> = test_ids.iter().filter_map(|id| man.pair(id)).map(|p| p.front.as_str()).collect();
        fronts.sort();
        fronts.dedup();
        for f in fronts {
            let rec = man.record(f).expect("front comes from the manifest");
            debug_assert_eq!(rec.pose, Pose::Front);
            let mut img = man.load_record_image(f)?;
            if let Some((w, h)) = size {
                if (img.width(), img.height()) != (w, h) {
                    img = image::imageops::resize(&img, w, h, image::imageops::FilterType::Triangle);
                }
            }
            images.push(img);
            tags.push((format!("real/{}", rec.attribute), f.to_string()));
        }
    }
    distribution_map(&images, &tags, 2)
}
