use std::collections::BTreeSet;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::manifest::FacePairManifest;
use super::split::TrainSplit;
use super::Attribute;
use crate::error::{Error, Result};
use crate::exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Whole,
    /// Central 50%×50% crop.
    FaceBox,
}

impl std::str::FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whole" => Ok(Self::Whole),
            "face_box" => Ok(Self::FaceBox),
            other => Err(Error::Invalid(format!("unknown region `{other}`"))),
        }
    }
}

/// Mean pixel value per attribute group; `None` when the group is empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RgbStats {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub images_a: usize,
    pub images_b: usize,
}

impl RgbStats {
    pub fn get(&self, attr: Attribute) -> Option<f64> {
        match attr {
            Attribute::A => self.a,
            Attribute::B => self.b,
        }
    }

    /// Pools pixel sums across images of each group.
    pub fn from_images<'a>(images: impl IntoIterator<Item = (Attribute, &'a RgbImage)>, region: Region) -> Self {
        let mut sums = [(0u64, 0u64, 0usize); 2];
        for (attr, img) in images {
            let (s, n) = region_sum(img, region);
            let slot = &mut sums[(attr == Attribute::B) as usize];
            slot.0 += s;
            slot.1 += n;
            slot.2 += 1;
        }
        let mean = |(s, n, _): (u64, u64, usize)| (n > 0).then(|| s as f64 / n as f64);
        Self {
            a: mean(sums[0]),
            b: mean(sums[1]),
            images_a: sums[0].2,
            images_b: sums[1].2,
        }
    }
}

fn bounds(len: u32, region: Region) -> (u32, u32) {
    match region {
        Region::Whole => (0, len),
        Region::FaceBox => {
            let lo = len / 4;
            (lo, (lo + len.div_ceil(2)).min(len))
        }
    }
}

fn region_sum(img: &RgbImage, region: Region) -> (u64, u64) {
    let (x0, x1) = bounds(img.width(), region);
    let (y0, y1) = bounds(img.height(), region);
    let mut sum = 0u64;
    for y in y0..y1 {
        for x in x0..x1 {
            let p = img.get_pixel(x, y);
            sum += p[0] as u64 + p[1] as u64 + p[2] as u64;
        }
    }
    (sum, 3 * (x1 - x0) as u64 * (y1 - y0) as u64)
}

/// Mean over all channels of one image's region.
pub fn mean_rgb(img: &RgbImage, region: Region) -> f64 {
    let (s, n) = region_sum(img, region);
    if n == 0 {
        0.0
    } else {
        s as f64 / n as f64
    }
}

/// Per-attribute mean pixel value over every distinct image (side and front)
/// referenced by the split.
pub fn image_rgb_stats(manifest: &FacePairManifest, split: &TrainSplit, region: Region) -> Result<RgbStats> {
    let mut ids = BTreeSet::new();
    for id in &split.pair_ids {
        let pair = manifest
            .pair(id)
            .ok_or_else(|| Error::Invalid(format!("split references unknown pair `{id}`")))?;
        ids.insert(pair.side.as_str());
        ids.insert(pair.front.as_str());
    }
    let ids: Vec<&str> = ids.into_iter().collect();
    let loaded = exec::map(&ids, |id| {
        let attr = manifest.record(id).expect("known record").attribute;
        manifest.load_record_image(id).map(|img| (attr, img))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(RgbStats::from_images(loaded.iter().map(|(a, i)| (*a, i)), region))
}
