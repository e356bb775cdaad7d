use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::FacePairManifest;
use super::Attribute;
use crate::error::{Error, IoContext, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    pub ratio_majority: u32,
    pub ratio_minority: u32,
    pub majority_cap: usize,
    pub seed: u64,
    /// Which attribute plays the majority role.
    #[serde(default = "default_majority")]
    pub majority: Attribute,
}

fn default_majority() -> Attribute {
    Attribute::A
}

impl SplitSpec {
    pub fn new(name: &str, ratio_majority: u32, ratio_minority: u32, majority_cap: usize, seed: u64) -> Self {
        Self {
            name: name.into(),
            ratio_majority,
            ratio_minority,
            majority_cap,
            seed,
            majority: Attribute::A,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratio_majority + self.ratio_minority != 10 {
            return Err(Error::Split(format!(
                "ratios must sum to 10, got {}:{}",
                self.ratio_majority, self.ratio_minority
            )));
        }
        if self.ratio_majority == 0 {
            return Err(Error::Split("ratio_majority = 0 leaves the split undefined".into()));
        }
        if self.majority_cap == 0 {
            return Err(Error::Split("majority_cap must be positive".into()));
        }
        Ok(())
    }
}

/// Realized training split. `pair_ids` lists the majority pairs first, then
/// the minority pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSplit {
    pub spec: SplitSpec,
    pub majority_count: usize,
    pub minority_count: usize,
    pub pair_ids: Vec<String>,
}

impl TrainSplit {
    pub fn majority_ids(&self) -> &[String] {
        &self.pair_ids[..self.majority_count]
    }

    pub fn minority_ids(&self) -> &[String] {
        &self.pair_ids[self.majority_count..]
    }
}

/// Minority pairs needed to honour `r_min / r_maj` for `majority` pairs,
/// rounding up. Rounding up reproduces the 7:3 row (1454 → 624) where
/// nearest rounding would give 623.
fn minority_for(majority: usize, r_maj: usize, r_min: usize) -> usize {
    (majority * r_min).div_ceil(r_maj)
}

/// Builds a ratio-controlled split from the pairs not listed in `test_ids`.
///
/// The majority count is the cap (or what is available). If the ratio then
/// asks for more minority pairs than exist, the majority is shrunk to
/// `floor(available_minority * r_maj / r_min)`. Each attribute's pool is
/// sorted by id, shuffled with the split seed and truncated.
pub fn build_split(manifest: &FacePairManifest, spec: &SplitSpec, test_ids: &HashSet<String>) -> Result<TrainSplit> {
    spec.validate()?;
    let mut pools: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    for pair in &manifest.pairs {
        if test_ids.contains(pair.id()) {
            continue;
        }
        let attr = manifest.pair_attribute(pair);
        pools[(attr != spec.majority) as usize].push(pair.id().to_string());
    }
    let [mut maj_pool, mut min_pool] = pools;
    if maj_pool.is_empty() {
        return Err(Error::Split(format!(
            "no {} pairs available outside the test set",
            spec.majority
        )));
    }

    let (r_maj, r_min) = (spec.ratio_majority as usize, spec.ratio_minority as usize);
    let mut majority = spec.majority_cap.min(maj_pool.len());
    let mut minority = minority_for(majority, r_maj, r_min);
    if minority > min_pool.len() {
        majority = majority.min(min_pool.len() * r_maj / r_min);
        minority = minority_for(majority, r_maj, r_min).min(min_pool.len());
    }
    if majority == 0 {
        return Err(Error::Split("not enough minority pairs for any majority pair".into()));
    }

    for (pool, salt) in [(&mut maj_pool, 0u64), (&mut min_pool, 1)] {
        pool.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        pool.shuffle(&mut rng);
    }
    maj_pool.truncate(majority);
    min_pool.truncate(minority);
    maj_pool.extend(min_pool);
    Ok(TrainSplit {
        spec: spec.clone(),
        majority_count: majority,
        minority_count: minority,
        pair_ids: maj_pool,
    })
}

/// Pair ids of `n_per_attribute` subjects of each attribute, picked by
/// sorted subject id. Holding out whole subjects keeps identities out of the
/// training pool.
pub fn subject_test_ids(manifest: &FacePairManifest, n_per_attribute: usize) -> HashSet<String> {
    let mut subjects: [BTreeSet<&str>; 2] = [BTreeSet::new(), BTreeSet::new()];
    for pair in &manifest.pairs {
        let r = manifest.record(&pair.side).expect("pair references known record");
        subjects[(r.attribute == Attribute::B) as usize].insert(&r.subject_id);
    }
    let chosen: HashSet<&str> = subjects
        .iter()
        .flat_map(|s| s.iter().take(n_per_attribute).copied())
        .collect();
    manifest
        .pairs
        .iter()
        .filter(|p| chosen.contains(manifest.record(&p.side).unwrap().subject_id.as_str()))
        .map(|p| p.id().to_string())
        .collect()
}

/// Writes the split as `split_<name>.json` next to the manifest.
pub fn write_split(split: &TrainSplit, manifest_path: &Path) -> Result<PathBuf> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let path = dir.join(format!("split_{}.json", split.spec.name));
    fs::write(&path, serde_json::to_vec_pretty(split)?).at(&path)?;
    Ok(path)
}

pub fn read_split(path: &Path) -> Result<TrainSplit> {
    Ok(serde_json::from_slice(&fs::read(path).at(path)?)?)
}
