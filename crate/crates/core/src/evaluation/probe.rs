use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::client::{ClientKind, FaceAnalysisClient, FaceAnalysisResult};
use super::metrics::{AttributeRates, GroupCounts};
use crate::dataset::{postprocess, preprocess, Attribute, FacePairManifest, ProbeKind, ProbeLabel, ProbeSet};
use crate::error::{Error, Result};
use crate::exec;
use crate::models::{ModelBundle, ModelKind, Role};

pub const DEFAULT_REPEATS: usize = 10;

#[derive(Clone, Debug)]
pub struct ProbeOptions {
    pub repeats: usize,
    /// Recorded in the report; usually the training split's name.
    pub split_name: String,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self { repeats: DEFAULT_REPEATS, split_name: String::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    OutputA,
    OutputB,
    /// Generators fed the same pose-less probe disagree.
    Mixed,
    NoFace,
    Failed,
}

impl Outcome {
    pub const ALL: [Outcome; 5] = [Self::OutputA, Self::OutputB, Self::Mixed, Self::NoFace, Self::Failed];

    pub fn name(self) -> &'static str {
        match self {
            Self::OutputA => "output_A",
            Self::OutputB => "output_B",
            Self::Mixed => "mixed",
            Self::NoFace => "no_face",
            Self::Failed => "failed",
        }
    }

    fn for_attribute(a: Attribute) -> Self {
        match a {
            Attribute::A => Self::OutputA,
            Attribute::B => Self::OutputB,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tallies {
    #[serde(rename = "output_A")]
    pub output_a: usize,
    #[serde(rename = "output_B")]
    pub output_b: usize,
    pub mixed: usize,
    pub no_face: usize,
    pub failed: usize,
}

impl Tallies {
    pub fn add(&mut self, o: Outcome, n: usize) {
        *self.slot(o) += n;
    }

    pub fn get(&self, o: Outcome) -> usize {
        match o {
            Outcome::OutputA => self.output_a,
            Outcome::OutputB => self.output_b,
            Outcome::Mixed => self.mixed,
            Outcome::NoFace => self.no_face,
            Outcome::Failed => self.failed,
        }
    }

    fn slot(&mut self, o: Outcome) -> &mut usize {
        match o {
            Outcome::OutputA => &mut self.output_a,
            Outcome::OutputB => &mut self.output_b,
            Outcome::Mixed => &mut self.mixed,
            Outcome::NoFace => &mut self.no_face,
            Outcome::Failed => &mut self.failed,
        }
    }

    pub fn total(&self) -> usize {
        Outcome::ALL.iter().map(|&o| self.get(o)).sum()
    }
}

/// One generator's answer for one probe. Repeats are bit-identical, so a
/// single analysis stands for all of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteResult {
    pub role: Role,
    /// SHA-256 of the generated image's raw RGB bytes.
    pub output_sha256: String,
    pub result: Option<FaceAnalysisResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub label: ProbeLabel,
    pub ground_truth: Option<Attribute>,
    pub routes: Vec<RouteResult>,
    pub outcome: Outcome,
    /// Outcome counted once per repeat.
    pub tallies: Tallies,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeCounts {
    #[serde(rename = "A")]
    pub a: GroupCounts,
    #[serde(rename = "B")]
    pub b: GroupCounts,
}

impl AttributeCounts {
    pub fn get(&self, attr: Attribute) -> &GroupCounts {
        match attr {
            Attribute::A => &self.a,
            Attribute::B => &self.b,
        }
    }

    fn get_mut(&mut self, attr: Attribute) -> &mut GroupCounts {
        match attr {
            Attribute::A => &mut self.a,
            Attribute::B => &mut self.b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub model_id: String,
    pub model_kind: ModelKind,
    pub split_name: String,
    pub probe_set_id: String,
    pub probe_kind: ProbeKind,
    pub client: ClientKind,
    pub repeats: usize,
    /// Counts over (probe × repeat) evaluations with a ground truth.
    pub counts: AttributeCounts,
    pub recovery_rate: AttributeRates,
    pub match_rate: AttributeRates,
    /// Over (probe × repeat) evaluations.
    pub tallies: Tallies,
    /// One count per probe, repeats collapsed.
    pub probe_tallies: Tallies,
    pub analyses: usize,
    pub failed_analyses: usize,
    pub probes: Vec<ProbeRecord>,
}

impl BiasReport {
    /// Column heading used by report tables.
    pub fn column(&self) -> String {
        if self.split_name.is_empty() {
            self.model_id.clone()
        } else {
            self.split_name.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Stable id for a probe set: its kind plus a digest of its labels.
pub fn probe_set_id(set: &ProbeSet) -> String {
    let labels = serde_json::to_vec(&set.labels).expect("labels serialize");
    let digest = hex::encode(Sha256::digest(labels));
    format!("{}-{}", set.kind, &digest[..12])
}

fn combine(routes: &[RouteResult]) -> Outcome {
    if routes.iter().any(|r| r.result.is_none()) {
        return Outcome::Failed;
    }
    let mut seen: Vec<Attribute> = routes.iter().filter_map(|r| r.result.and_then(|x| x.attribute)).collect();
    seen.sort();
    seen.dedup();
    match seen.as_slice() {
        [] => Outcome::NoFace,
        [a] => Outcome::for_attribute(*a),
        _ => Outcome::Mixed,
    }
}

struct Route {
    role: Role,
    truth: Option<Attribute>,
}

fn routes_for(bundle: &ModelBundle, label: &ProbeLabel, manifest: Option<&FacePairManifest>) -> Result<Vec<Route>> {
    match label {
        ProbeLabel::Pair { side, .. } => {
            let m = manifest.ok_or_else(|| Error::Invalid("in-distribution probes need the manifest".into()))?;
            let pair = m.pair(side).ok_or_else(|| Error::Invalid(format!("unknown pair `{side}`")))?;
            let rec = m.record(side).expect("pair side is a record");
            Ok(vec![Route { role: bundle.role_for_pose(rec.pose), truth: Some(m.pair_attribute(pair)) }])
        }
        ProbeLabel::Gray { .. } | ProbeLabel::Noise { .. } => {
            Ok(bundle.poseless_roles().into_iter().map(|role| Route { role, truth: None }).collect())
        }
    }
}

fn run_route(
    bundle: &ModelBundle,
    route: &Route,
    input: &crate::Tensor,
    repeats: usize,
    client: &dyn FaceAnalysisClient,
    label: &ProbeLabel,
) -> Result<RouteResult> {
    let g = bundle
        .generator(route.role)
        .ok_or_else(|| Error::Invalid(format!("bundle has no {:?} generator", route.role)))?;
    let first = g.predict(input)?;
    for _ in 1..repeats {
        let again = g.predict(input)?;
        if !again.bit_eq(&first) {
            return Err(Error::Invalid(format!(
                "{:?} generator is not deterministic on probe {}",
                route.role,
                label.column()
            )));
        }
    }
    let image = postprocess(&first, 0);
    let output_sha256 = hex::encode(Sha256::digest(image.as_raw()));
    let (result, error) = match client.analyze(&image) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(RouteResult { role: route.role, output_sha256, result, error })
}

/// Runs every probe through the generator(s) responsible for it, `repeats`
/// times, classifies the outputs and aggregates the bias report.
///
/// Left/right pair probes go to their pose's generator; gray and noise
/// probes go to every generator and disagreeing attributes are tallied as
/// mixed. Client failures are counted, not treated as "no face"; the report
/// fails if fewer than half the analyses succeed.
pub fn probe_model(
    bundle: &ModelBundle,
    probes: &ProbeSet,
    manifest: Option<&FacePairManifest>,
    client: &dyn FaceAnalysisClient,
    options: &ProbeOptions,
) -> Result<BiasReport> {
    if probes.is_empty() {
        return Err(Error::Invalid("empty probe set".into()));
    }
    if options.repeats == 0 {
        return Err(Error::Invalid("repeats must be at least 1".into()));
    }
    let resolution = bundle.spec.input_resolution;
    let indices: Vec<usize> = (0..probes.len()).collect();
    let records = exec::map(&indices, |&i| -> Result<(ProbeRecord, Vec<Option<Attribute>>)> {
        let label = &probes.labels[i];
        let routes = routes_for(bundle, label, manifest)?;
        let input = preprocess(&probes.images[i], resolution)?;
        let results = routes
            .iter()
            .map(|r| run_route(bundle, r, &input, options.repeats, client, label))
            .collect::<Result<Vec<_>>>()?;
        let outcome = combine(&results);
        let mut tallies = Tallies::default();
        tallies.add(outcome, options.repeats);
        let truths = routes.iter().map(|r| r.truth).collect();
        let ground_truth = routes.iter().find_map(|r| r.truth);
        Ok((ProbeRecord { label: label.clone(), ground_truth, routes: results, outcome, tallies }, truths))
    });

    let mut report = BiasReport {
        model_id: bundle.id.clone(),
        model_kind: bundle.kind,
        split_name: options.split_name.clone(),
        probe_set_id: probe_set_id(probes),
        probe_kind: probes.kind,
        client: client.kind(),
        repeats: options.repeats,
        counts: AttributeCounts::default(),
        recovery_rate: AttributeRates::default(),
        match_rate: AttributeRates::default(),
        tallies: Tallies::default(),
        probe_tallies: Tallies::default(),
        analyses: 0,
        failed_analyses: 0,
        probes: Vec::with_capacity(probes.len()),
    };
    for item in records {
        let (record, truths) = item?;
        for (route, truth) in record.routes.iter().zip(truths) {
            report.analyses += 1;
            match (&route.result, truth) {
                (None, _) => report.failed_analyses += 1,
                (Some(r), Some(t)) => report.counts.get_mut(t).add(t, r, options.repeats),
                (Some(_), None) => {}
            }
        }
        report.tallies.add(record.outcome, options.repeats);
        report.probe_tallies.add(record.outcome, 1);
        report.probes.push(record);
    }
    if 2 * (report.analyses - report.failed_analyses) < report.analyses {
        return Err(Error::Analysis(format!(
            "{} of {} analyses failed; refusing to report",
            report.failed_analyses, report.analyses
        )));
    }
    report.recovery_rate = AttributeRates { a: report.counts.a.recovery(), b: report.counts.b.recovery() };
    report.match_rate = AttributeRates { a: report.counts.a.matching(), b: report.counts.b.matching() };
    Ok(report)
}
