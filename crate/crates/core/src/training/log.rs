use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};
use crate::instrumentation::LayerVarianceTrace;

/// Per-epoch mean losses. For pairwise runs the side terms are averaged over
/// the two generators, and `loss_G = adv·loss_G_adv + l1·loss_L1 +
/// w_identity·loss_identity + w_pair·loss_pair`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(rename = "loss_D")]
    pub loss_d: f64,
    #[serde(rename = "loss_G_adv")]
    pub loss_g_adv: f64,
    #[serde(rename = "loss_L1")]
    pub loss_l1: f64,
    pub loss_identity: f64,
    pub loss_pair: f64,
    #[serde(rename = "loss_G")]
    pub loss_g: f64,
    pub w_identity: f64,
    pub w_pair: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub wall_seconds: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variance: Vec<LayerVarianceTrace>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    /// Loss columns only, with timing stripped, for run-to-run comparison.
    pub fn loss_sequence(&self) -> Vec<[f64; 6]> {
        self.records
            .iter()
            .map(|r| [r.loss_d, r.loss_g_adv, r.loss_l1, r.loss_identity, r.loss_pair, r.loss_g])
            .collect()
    }

    pub fn append_jsonl(record: &EpochRecord, path: &Path) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(path).at(path)?;
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        f.write_all(&line).at(path)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { records })
    }
}
