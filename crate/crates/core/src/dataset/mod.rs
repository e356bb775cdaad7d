//! Face-pair manifests, ratio-controlled splits, preprocessing, probe sets
//! and the procedural avatar corpus.

mod manifest;
mod preprocess;
mod probes;
mod split;
mod stats;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use manifest::{load_manifest, load_image, FacePair, FacePairManifest, FaceRecord};
pub use preprocess::{postprocess, preprocess, preprocess_batch};
pub use probes::{in_distribution_probes, make_probe_set, ProbeKind, ProbeLabel, ProbeSet, GRAY_LEVELS};
pub use split::{build_split, read_split, subject_test_ids, write_split, SplitSpec, TrainSplit};
pub use stats::{image_rgb_stats, mean_rgb, Region, RgbStats};
pub use synth::{make_synthetic_corpus, SynthOptions};

use crate::error::Error;

/// Binary demographic attribute of a subject.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Attribute {
    A,
    B,
}

impl Attribute {
    pub fn other(self) -> Self {
        match self {
            Attribute::A => Attribute::B,
            Attribute::B => Attribute::A,
        }
    }

    pub const ALL: [Attribute; 2] = [Attribute::A, Attribute::B];
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "A" => Ok(Attribute::A),
            "B" => Ok(Attribute::B),
            other => Err(Error::Invalid(format!("attribute must be A or B, got `{other}`"))),
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attribute::A => "A",
            Attribute::B => "B",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pose {
    Left,
    Right,
    Front,
}

impl Pose {
    pub fn is_side(self) -> bool {
        self != Pose::Front
    }
}

impl FromStr for Pose {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "left" => Ok(Pose::Left),
            "right" => Ok(Pose::Right),
            "front" => Ok(Pose::Front),
            other => Err(Error::Invalid(format!(
                "pose must be left, right or front, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pose::Left => "left",
            Pose::Right => "right",
            Pose::Front => "front",
        })
    }
}
