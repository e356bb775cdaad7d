use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::FacePairManifest;
use crate::error::{Error, Result};
use crate::exec;

pub const GRAY_LEVELS: [u8; 9] = [0, 32, 64, 96, 128, 160, 192, 224, 255];
const NOISE_IMAGES: usize = 5;
const NOISE_MEAN: f64 = 127.5;
const NOISE_STD: f64 = 42.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    InDistribution,
    GaussianNoise,
    GrayRamp,
}

impl std::str::FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in_distribution" => Ok(Self::InDistribution),
            "gaussian_noise" => Ok(Self::GaussianNoise),
            "gray_ramp" => Ok(Self::GrayRamp),
            other => Err(Error::Invalid(format!("unknown probe kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::InDistribution => "in_distribution",
            Self::GaussianNoise => "gaussian_noise",
            Self::GrayRamp => "gray_ramp",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProbeLabel {
    Gray { level: u8 },
    Noise { seed: u64, index: usize },
    /// Side-pose input of a test pair; `front` is the ground-truth record.
    Pair { side: String, front: String },
}

impl ProbeLabel {
    /// Short column name used in report tables.
    pub fn column(&self) -> String {
        match self {
            Self::Gray { level } => level.to_string(),
            Self::Noise { index, .. } => format!("noise{}", index + 1),
            Self::Pair { side, .. } => side.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProbeSet {
    pub kind: ProbeKind,
    pub images: Vec<RgbImage>,
    pub labels: Vec<ProbeLabel>,
}

impl ProbeSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Synthetic probes: the 9-level gray ramp or 5 clipped-normal noise images.
pub fn make_probe_set(kind: ProbeKind, resolution: usize, seed: u64) -> Result<ProbeSet> {
    if resolution == 0 {
        return Err(Error::Invalid("probe resolution must be positive".into()));
    }
    let r = resolution as u32;
    match kind {
        ProbeKind::GrayRamp => Ok(ProbeSet {
            kind,
            images: GRAY_LEVELS
                .iter()
                .map(|&v| RgbImage::from_pixel(r, r, image::Rgb([v; 3])))
                .collect(),
            labels: GRAY_LEVELS.iter().map(|&level| ProbeLabel::Gray { level }).collect(),
        }),
        ProbeKind::GaussianNoise => {
            let normal = Normal::new(NOISE_MEAN, NOISE_STD).expect("valid normal");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let images = (0..NOISE_IMAGES)
                .map(|_| {
                    let mut img = RgbImage::new(r, r);
                    for v in img.iter_mut() {
                        *v = normal.sample(&mut rng).round().clamp(0.0, 255.0) as u8;
                    }
                    img
                })
                .collect();
            Ok(ProbeSet {
                kind,
                images,
                labels: (0..NOISE_IMAGES).map(|index| ProbeLabel::Noise { seed, index }).collect(),
            })
        }
        ProbeKind::InDistribution => Err(Error::Invalid(
            "in-distribution probes come from a manifest; use in_distribution_probes".into(),
        )),
    }
}

/// Side-pose images of the given pairs, in the order given.
pub fn in_distribution_probes(manifest: &FacePairManifest, pair_ids: &[String]) -> Result<ProbeSet> {
    let pairs = pair_ids
        .iter()
        .map(|id| {
            manifest
                .pair(id)
                .ok_or_else(|| Error::Invalid(format!("unknown test pair `{id}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let images = exec::map(&pairs, |p| manifest.load_record_image(&p.side))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeSet {
        kind: ProbeKind::InDistribution,
        images,
        labels: pairs
            .iter()
            .map(|p| ProbeLabel::Pair {
                side: p.side.clone(),
                front: p.front.clone(),
            })
            .collect(),
    })
}
