use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{SplitSpec, SynthOptions};
use crate::error::{Error, IoContext, Result};
use crate::evaluation::{ClientKind, DEFAULT_REPEATS};
use crate::instrumentation::AUDIT_MODELS;
use crate::models::{modified_pairwise_preset, GeneratorSpec, ModelKind};
use crate::nn::Init;
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Train one model per split and measure recovery/match rates.
    GenderBias,
    /// Noise and gray-ramp probes plus a PCA map of the outputs.
    LatentProbe,
    /// Per-layer activation variance on the gray ramp.
    LayerVariance,
    /// Cross-model filter PCA over six models.
    FilterAudit,
    /// `GenderBias` with the skip-ablated generator.
    Ablation,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::GenderBias => "gender_bias",
            Self::LatentProbe => "latent_probe",
            Self::LayerVariance => "layer_variance",
            Self::FilterAudit => "filter_audit",
            Self::Ablation => "ablation",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Either a manifest path or `synthetic:n=100,r=32,seed=7,ratio=0.5`.
#[derive(Clone, Debug, PartialEq)]
pub enum CorpusSource {
    Manifest(PathBuf),
    Synthetic(SynthOptions),
}

impl FromStr for CorpusSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let Some(params) = s.strip_prefix("synthetic:") else {
            return Ok(Self::Manifest(PathBuf::from(s)));
        };
        let mut opts = SynthOptions { n_subjects: 100, resolution: 32, seed: 0, attribute_ratio: 0.5 };
        for kv in params.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("corpus parameter `{kv}` is not key=value")))?;
            let bad = |e: &dyn fmt::Display| Error::Config(format!("corpus parameter `{kv}`: {e}"));
            match k.trim() {
                "n" => opts.n_subjects = v.trim().parse().map_err(|e| bad(&e))?,
                "r" => opts.resolution = v.trim().parse().map_err(|e| bad(&e))?,
                "seed" => opts.seed = v.trim().parse().map_err(|e| bad(&e))?,
                "ratio" => opts.attribute_ratio = v.trim().parse().map_err(|e| bad(&e))?,
                other => return Err(Error::Config(format!("unknown corpus parameter `{other}`"))),
            }
        }
        Ok(Self::Synthetic(opts))
    }
}

impl fmt::Display for CorpusSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Manifest(p) => write!(f, "{}", p.display()),
            Self::Synthetic(o) => write!(
                f,
                "synthetic:n={},r={},seed={},ratio={}",
                o.n_subjects, o.resolution, o.seed, o.attribute_ratio
            ),
        }
    }
}

impl Serialize for CorpusSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CorpusSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub depth: usize,
    pub resolution: usize,
    pub base_channels: usize,
    /// Overrides the all-on default; ignored by `ablation`, which applies
    /// the skip-ablation preset instead.
    #[serde(default)]
    pub skip_mask: Option<Vec<bool>>,
    pub disc_base_channels: usize,
    #[serde(default)]
    pub init: Init,
}

impl ModelConfig {
    pub fn generator_spec(&self, experiment: Experiment) -> Result<GeneratorSpec> {
        let mut spec = GeneratorSpec::new(self.depth, self.resolution, self.base_channels);
        if let Some(mask) = &self.skip_mask {
            spec = spec.with_skip_mask(mask.clone());
        }
        if experiment == Experiment::Ablation {
            spec = modified_pairwise_preset(&spec)?;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub client: ClientKind,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Whole subjects per attribute held out as in-distribution probes.
    #[serde(default = "default_test_subjects")]
    pub test_subjects_per_attribute: usize,
    /// Content-addressed result cache shared across runs.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Remote requests per second.
    #[serde(default = "default_rate")]
    pub rate_limit: f64,
}

fn default_repeats() -> usize {
    DEFAULT_REPEATS
}

fn default_test_subjects() -> usize {
    10
}

fn default_timeout() -> f64 {
    30.0
}

fn default_rate() -> f64 {
    1.0
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            client: ClientKind::Stub,
            repeats: default_repeats(),
            test_subjects_per_attribute: default_test_subjects(),
            cache_dir: None,
            timeout_secs: default_timeout(),
            rate_limit: default_rate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub corpus: Option<CorpusSource>,
    #[serde(default)]
    pub splits: Vec<SplitSpec>,
    pub model: ModelConfig,
    pub training: TrainConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    /// Existing run directories (from an earlier run's `models/`) used
    /// instead of training.
    #[serde(default)]
    pub checkpoints: Vec<PathBuf>,
    /// Index of the unbiased model for `filter_audit`.
    #[serde(default)]
    pub filter_reference: usize,
    pub output_dir: PathBuf,
    /// Model initialization and noise-probe seed.
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Whether models come from training rather than `checkpoints`.
    pub fn trains(&self) -> bool {
        match self.experiment {
            Experiment::GenderBias | Experiment::Ablation => true,
            _ => self.checkpoints.is_empty(),
        }
    }

    /// Checks everything that can be checked before any compute.
    pub fn validate(&self) -> Result<()> {
        let exp = self.experiment;
        if self.trains() {
            if self.splits.is_empty() {
                return Err(Error::Config(format!("{exp} needs at least one split to train")));
            }
            match &self.corpus {
                None => return Err(Error::Config(format!("{exp} needs a corpus to train on"))),
                Some(CorpusSource::Manifest(p)) if !p.exists() => {
                    return Err(Error::Config(format!("corpus manifest {} does not exist", p.display())))
                }
                _ => {}
            }
            let mut names = HashSet::new();
            for s in &self.splits {
                s.validate()?;
                if !names.insert(slug(&s.name)) {
                    return Err(Error::Config(format!("duplicate split name `{}`", s.name)));
                }
            }
            if self.training.model_kind != self.model.kind {
                return Err(Error::Config(format!(
                    "training.model_kind ({}) differs from model.kind ({})",
                    self.training.model_kind, self.model.kind
                )));
            }
            self.training.validate()?;
        }
        for c in &self.checkpoints {
            if !c.join("bundle.json").exists() {
                return Err(Error::Config(format!("checkpoint {} has no bundle.json", c.display())));
            }
        }
        if exp == Experiment::FilterAudit {
            let n = if self.checkpoints.is_empty() { self.splits.len() } else { self.checkpoints.len() };
            if n != AUDIT_MODELS {
                return Err(Error::Config(format!(
                    "filter_audit needs exactly {AUDIT_MODELS} trained checkpoints or splits to train, got {n}"
                )));
            }
            if self.filter_reference >= AUDIT_MODELS {
                return Err(Error::Config(format!("filter_reference must be < {AUDIT_MODELS}")));
            }
        }
        if matches!(exp, Experiment::GenderBias | Experiment::Ablation) && self.evaluation.test_subjects_per_attribute == 0 {
            return Err(Error::Config("test_subjects_per_attribute must be > 0".into()));
        }
        if self.evaluation.repeats == 0 {
            return Err(Error::Config("evaluation.repeats must be > 0".into()));
        }
        self.model.generator_spec(exp)?;
        Ok(())
    }
}

/// Filesystem-safe form of a split name (`10:0` → `10_0`).
pub fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}
