use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::pca::pca_top_k;
use crate::error::{Error, Result};
use crate::models::{checkpoint, Generator};

pub const AUDIT_MODELS: usize = 6;
pub const DEFAULT_MARGIN: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterPoint {
    pub model_index: usize,
    pub filter_index: usize,
    pub pca_value: f64,
    pub is_outlier: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterScatter {
    pub layer_name: String,
    pub points: Vec<FilterPoint>,
    pub reference_interval: (f64, f64),
    pub explained_ratio: f64,
}

impl FilterScatter {
    pub fn outliers(&self) -> impl Iterator<Item = &FilterPoint> {
        self.points.iter().filter(|p| p.is_outlier)
    }
}

/// `[h, w, in, out]` kernel averaged over `in` and laid out as `out` rows of
/// `h·w` values, one row per filter.
pub fn pooled_filters(shape: &[usize], data: &[f32]) -> Vec<Vec<f64>> {
    let (hw, cin, cout) = (shape[0] * shape[1], shape[2], shape[3]);
    let mut rows = vec![vec![0.0; hw]; cout];
    for s in 0..hw {
        for c in 0..cin {
            for (o, row) in rows.iter_mut().enumerate() {
                row[s] += data[(s * cin + c) * cout + o] as f64;
            }
        }
    }
    for row in &mut rows {
        row.iter_mut().for_each(|v| *v /= cin as f64);
    }
    rows
}

/// Cross-model filter PCA on one layer.
///
/// Each model's kernel is averaged over input channels, giving one
/// `h·w`-vector per output filter. The filters of all six models are pooled
/// and projected on their first principal component. The reference model's
/// values span `[min, max]`, widened by `margin` of that width on each side;
/// any filter outside is an outlier.
pub fn filter_analysis(models: &[&Generator], layer: &str, reference: usize, margin: f64) -> Result<FilterScatter> {
    if models.len() != AUDIT_MODELS {
        return Err(Error::Invalid(format!(
            "filter analysis needs exactly {AUDIT_MODELS} models, got {}",
            models.len()
        )));
    }
    if reference >= models.len() {
        return Err(Error::Invalid(format!("reference index {reference} out of range")));
    }
    let graph = models[0].graph();
    for (i, m) in models.iter().enumerate() {
        if m.graph().layer(layer) != graph.layer(layer) {
            return Err(Error::Invalid(format!(
                "layer `{layer}` of model {i} does not match model 0"
            )));
        }
    }
    let mut rows = Vec::new();
    let mut owners = Vec::new();
    for (mi, m) in models.iter().enumerate() {
        let (shape, data) = m
            .filters_hwio(layer)
            .ok_or_else(|| Error::Invalid(format!("layer `{layer}` has no filters")))?;
        for (fi, r) in pooled_filters(&shape, &data).into_iter().enumerate() {
            rows.push(r);
            owners.push((mi, fi));
        }
    }
    let pca = pca_top_k(&rows, 1)?;
    let values: Vec<f64> = pca.projections.iter().map(|p| p[0]).collect();
    let (lo, hi) = owners
        .iter()
        .zip(&values)
        .filter(|((mi, _), _)| *mi == reference)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, &v)| (lo.min(v), hi.max(v)));
    let pad = (hi - lo) * margin;
    let (lo, hi) = (lo - pad, hi + pad);
    Ok(FilterScatter {
        layer_name: layer.into(),
        points: owners
            .into_iter()
            .zip(values)
            .map(|((model_index, filter_index), pca_value)| FilterPoint {
                model_index,
                filter_index,
                pca_value,
                is_outlier: pca_value < lo || pca_value > hi,
            })
            .collect(),
        reference_interval: (lo, hi),
        explained_ratio: pca.explained_ratio[0],
    })
}

/// Runs `filter_analysis` on every layer that carries a kernel.
pub fn filter_audit(models: &[&Generator], reference: usize, margin: f64) -> Result<Vec<FilterScatter>> {
    let first = models
        .first()
        .ok_or_else(|| Error::Invalid("no models to audit".into()))?;
    if models.iter().any(|m| m.graph() != first.graph()) {
        return Err(Error::Invalid("audited models have different architecture graphs".into()));
    }
    first
        .graph()
        .layers
        .iter()
        .filter(|l| l.has_filters())
        .map(|l| filter_analysis(models, &l.name, reference, margin))
        .collect()
}

/// Loads six generator checkpoint directories and audits all layers.
pub fn audit_checkpoints(dirs: &[PathBuf], reference: usize, margin: f64) -> Result<Vec<FilterScatter>> {
    if dirs.len() != AUDIT_MODELS {
        return Err(Error::Invalid(format!(
            "filter audit needs exactly {AUDIT_MODELS} checkpoints, got {}",
            dirs.len()
        )));
    }
    let models = dirs
        .iter()
        .map(|d| checkpoint::load_generator(d))
        .collect::<Result<Vec<_>>>()?;
    filter_audit(&models.iter().collect::<Vec<_>>(), reference, margin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_averages_input_channels() {
        // h=w=1, in=2, out=2: filter o gets mean of (in0, in1).
        let rows = pooled_filters(&[1, 1, 2, 2], &[1.0, 10.0, 3.0, 30.0]);
        assert_eq!(rows, vec![vec![2.0], vec![20.0]]);
    }
}
