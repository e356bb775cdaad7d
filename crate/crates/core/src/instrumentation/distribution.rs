use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::pca::pca_top_k;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub group: String,
    pub label: String,
    pub coords: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionMap {
    pub points: Vec<MapPoint>,
    pub explained_ratio: Vec<f64>,
}

impl DistributionMap {
    pub fn group(&self, name: &str) -> Vec<&MapPoint> {
        self.points.iter().filter(|p| p.group == name).collect()
    }
}

/// Projects raw `[0,255]` pixel vectors onto their top-`k` principal
/// components. `tags` gives `(group, label)` per image.
pub fn distribution_map(images: &[RgbImage], tags: &[(String, String)], k: usize) -> Result<DistributionMap> {
    if images.len() != tags.len() {
        return Err(Error::Invalid("one (group, label) tag per image is required".into()));
    }
    let first = images
        .first()
        .ok_or_else(|| Error::Invalid("distribution map needs images".into()))?;
    if images.iter().any(|i| i.dimensions() != first.dimensions()) {
        return Err(Error::Invalid("distribution map images differ in resolution".into()));
    }
    let rows: Vec<Vec<f64>> = images
        .iter()
        .map(|i| i.as_raw().iter().map(|&v| v as f64).collect())
        .collect();
    let pca = pca_top_k(&rows, k)?;
    Ok(DistributionMap {
        points: tags
            .iter()
            .zip(pca.projections)
            .map(|((group, label), coords)| MapPoint {
                group: group.clone(),
                label: label.clone(),
                coords,
            })
            .collect(),
        explained_ratio: pca.explained_ratio,
    })
}

/// Largest perpendicular distance of 2-D points from their total-least-squares
/// line, and the extent of the points along that line.
pub fn line_fit_residual(points: &[[f64; 2]]) -> (f64, f64) {
    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
    let Ok(pca) = pca_top_k(&rows, 1) else {
        return (0.0, 0.0);
    };
    let dir = &pca.components[0];
    let normal = [-dir[1], dir[0]];
    let mut residual = 0.0f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        let c = [p[0] - pca.mean[0], p[1] - pca.mean[1]];
        residual = residual.max((c[0] * normal[0] + c[1] * normal[1]).abs());
        let along = c[0] * dir[0] + c[1] * dir[1];
        lo = lo.min(along);
        hi = hi.max(along);
    }
    (residual, hi - lo)
}

/// Centroid and RMS radius of a cloud of points.
pub fn centroid_and_radius(points: &[&MapPoint]) -> (Vec<f64>, f64) {
    let dim = points.first().map_or(0, |p| p.coords.len());
    let n = points.len().max(1) as f64;
    let mut c = vec![0.0; dim];
    for p in points {
        for (ci, x) in c.iter_mut().zip(&p.coords) {
            *ci += x / n;
        }
    }
    let ms = points
        .iter()
        .map(|p| p.coords.iter().zip(&c).map(|(x, m)| (x - m).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    (c, ms.sqrt())
}
