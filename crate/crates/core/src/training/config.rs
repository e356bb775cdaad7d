use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelKind;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    #[default]
    Linear,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub mode: DecayMode,
}

impl DecaySchedule {
    pub fn linear(start: f64, end: f64) -> Self {
        Self {
            start,
            end,
            mode: DecayMode::Linear,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            start: value,
            end: value,
            mode: DecayMode::Constant,
        }
    }

    /// Weight at 0-based `epoch` of a run of `total_epochs`: `start` at the
    /// first epoch, `end` at the last, straight line in between.
    pub fn value(&self, epoch: usize, total_epochs: usize) -> f64 {
        match self.mode {
            DecayMode::Constant => self.start,
            DecayMode::Linear if total_epochs <= 1 => self.start,
            DecayMode::Linear => {
                let t = epoch.min(total_epochs - 1) as f64 / (total_epochs - 1) as f64;
                if t == 1.0 {
                    self.end
                } else {
                    self.start + (self.end - self.start) * t
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub adv: f64,
    pub l1: f64,
    pub identity: DecaySchedule,
    pub pair: DecaySchedule,
}

impl LossWeights {
    /// Adversarial 2, L1 0.5; no identity or pair terms.
    pub fn pix2pix() -> Self {
        Self {
            adv: 2.0,
            l1: 0.5,
            identity: DecaySchedule::constant(0.0),
            pair: DecaySchedule::constant(0.0),
        }
    }

    /// 10 : 3 : identity 10→5 : pair 10→2.
    pub fn pairwise() -> Self {
        Self {
            adv: 10.0,
            l1: 3.0,
            identity: DecaySchedule::linear(10.0, 5.0),
            pair: DecaySchedule::linear(10.0, 2.0),
        }
    }

    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Pix2pix => Self::pix2pix(),
            ModelKind::Pairwise => Self::pairwise(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.adv.is_finite() && self.adv > 0.0) {
            return Err(Error::Config(format!("adversarial weight must be > 0, got {}", self.adv)));
        }
        if !ok(self.l1) {
            return Err(Error::Config(format!("L1 weight must be >= 0, got {}", self.l1)));
        }
        for (name, s) in [("identity", self.identity), ("pair", self.pair)] {
            if !ok(s.start) || !ok(s.end) {
                return Err(Error::Config(format!("{name} schedule must stay non-negative")));
            }
        }
        Ok(())
    }
}

fn default_batch() -> usize {
    1
}
fn default_lr() -> f64 {
    2e-4
}
fn default_beta1() -> f64 {
    0.5
}
fn default_decay() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Pix2pix epochs. Pairwise runs twice as many so each of its generators
    /// sees as many samples as the shared pix2pix generator.
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    /// Per-epoch multiplicative LR decay; 1.0 disables it.
    #[serde(default = "default_decay")]
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub model_kind: ModelKind,
    pub weights: LossWeights,
    /// Save a checkpoint every this many epochs (the final epoch is always saved).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Record a layer-variance trace on the gray-ramp probes after each epoch.
    #[serde(default)]
    pub instrumentation: bool,
}

impl TrainConfig {
    pub fn new(kind: ModelKind, epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: 1,
            learning_rate: default_lr(),
            adam_beta1: default_beta1(),
            lr_decay_factor: 1.0,
            seed,
            model_kind: kind,
            weights: LossWeights::for_kind(kind),
            checkpoint_every: 0,
            instrumentation: false,
        }
    }

    /// Full-length schedule: 125 epochs, i.e. 250 passes for pairwise.
    pub fn full_scale(kind: ModelKind) -> Self {
        Self::new(kind, 125, 0)
    }

    pub fn effective_epochs(&self) -> usize {
        match self.model_kind {
            ModelKind::Pix2pix => self.epochs,
            ModelKind::Pairwise => 2 * self.epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be > 0".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return Err(Error::Config("adam_beta1 must lie in [0,1)".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config("lr_decay_factor must lie in (0,1]".into()));
        }
        self.weights.validate()
    }
}
