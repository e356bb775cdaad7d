use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a U-Net generator.
///
/// Level `k` (1-based) of `channel_schedule` is the width of down-level `k`.
/// `skip_mask[j - 1]` controls the skip into up-level `j`, counted from the
/// middle layer; that skip carries the output of the mirrored down-level
/// `depth + 1 - j`, which has the same spatial size as up-level `j`'s input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub depth: usize,
    pub base_channels: usize,
    pub channel_schedule: Vec<usize>,
    pub skip_mask: Vec<bool>,
    pub input_resolution: usize,
    pub io_channels: usize,
}

impl GeneratorSpec {
    /// All skips on, widths doubling from `base_channels` and capped at 8×.
    pub fn new(depth: usize, resolution: usize, base_channels: usize) -> Self {
        let channel_schedule = (0..depth)
            .map(|k| base_channels * (1usize << k.min(3)))
            .collect();
        Self {
            depth,
            base_channels,
            channel_schedule,
            skip_mask: vec![true; depth],
            input_resolution: resolution,
            io_channels: 3,
        }
    }

    pub fn with_skip_mask(mut self, mask: Vec<bool>) -> Self {
        self.skip_mask = mask;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 3 {
            return Err(Error::Spec(format!("depth must be at least 3, got {}", self.depth)));
        }
        if self.channel_schedule.len() != self.depth || self.skip_mask.len() != self.depth {
            return Err(Error::Spec(format!(
                "channel schedule ({}) and skip mask ({}) must both have depth {} entries",
                self.channel_schedule.len(),
                self.skip_mask.len(),
                self.depth
            )));
        }
        if self.channel_schedule.iter().any(|&c| c == 0) || self.io_channels == 0 {
            return Err(Error::Spec("channel counts must be positive".into()));
        }
        let min = 1usize
            .checked_shl(self.depth as u32)
            .ok_or_else(|| Error::Spec("depth too large".into()))?;
        if self.input_resolution < min {
            return Err(Error::Spec(format!(
                "resolution {} is below 2^depth = {min}",
                self.input_resolution
            )));
        }
        Ok(())
    }

    pub fn skip_count(&self) -> usize {
        self.skip_mask.iter().filter(|&&s| s).count()
    }
}

/// Severs the skips into the three up-levels nearest the output
/// (levels `depth-2`, `depth-1` and `depth`, counted from the middle layer).
pub fn modified_pairwise_preset(spec: &GeneratorSpec) -> Result<GeneratorSpec> {
    if spec.depth < 4 {
        return Err(Error::Spec(format!(
            "the ablation preset needs depth >= 4, got {}",
            spec.depth
        )));
    }
    let mut out = spec.clone();
    let d = out.skip_mask.len();
    for m in &mut out.skip_mask[d - 3..] {
        *m = false;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_caps_at_eight_times_base() {
        let s = GeneratorSpec::new(7, 256, 64);
        assert_eq!(s.channel_schedule, vec![64, 128, 256, 512, 512, 512, 512]);
    }

    #[test]
    fn preset_on_depth_seven_keeps_four_skips() {
        let s = modified_pairwise_preset(&GeneratorSpec::new(7, 256, 64)).unwrap();
        assert_eq!(s.skip_mask, vec![true, true, true, true, false, false, false]);
        assert_eq!(s.skip_count(), 4);
    }

    #[test]
    fn preset_on_depth_four() {
        let s = modified_pairwise_preset(&GeneratorSpec::new(4, 32, 8)).unwrap();
        assert_eq!(s.skip_mask, vec![true, false, false, false]);
    }

    #[test]
    fn preset_is_idempotent_and_leaves_other_entries() {
        let base = GeneratorSpec::new(6, 64, 8).with_skip_mask(vec![false, true, true, true, true, true]);
        let once = modified_pairwise_preset(&base).unwrap();
        assert_eq!(once.skip_mask, vec![false, true, true, false, false, false]);
        assert_eq!(modified_pairwise_preset(&once).unwrap(), once);
    }

    #[test]
    fn preset_rejects_shallow_specs() {
        assert!(modified_pairwise_preset(&GeneratorSpec::new(3, 32, 8)).is_err());
    }

    #[test]
    fn validation() {
        assert!(GeneratorSpec::new(3, 8, 4).validate().is_ok());
        assert!(GeneratorSpec::new(3, 7, 4).validate().is_err());
        assert!(GeneratorSpec::new(2, 64, 4).validate().is_err());
        let mut s = GeneratorSpec::new(3, 32, 4);
        s.skip_mask.pop();
        assert!(s.validate().is_err());
    }
}
