use serde::{Deserialize, Serialize};

use super::capture::{capture, ActivationDump};
use crate::error::{Error, Result};
use crate::models::Generator;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerVariance {
    pub layer: String,
    pub variance: f64,
}

/// Per-layer activation variance of one model over one probe set, in
/// forward order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerVarianceTrace {
    pub model_id: String,
    pub probe_set_id: String,
    pub entries: Vec<LayerVariance>,
}

impl LayerVarianceTrace {
    pub fn get(&self, layer: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.layer == layer).map(|e| e.variance)
    }
}

/// Population variance of every element, pooled over the batch (two-pass,
/// f64 accumulation).
pub fn tensor_variance(t: &Tensor) -> f64 {
    let n = t.len() as f64;
    let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
}

pub fn layer_variance(dump: &ActivationDump) -> Result<f64> {
    if dump.tensor.is_empty() {
        return Err(Error::Invalid(format!("layer `{}` has an empty activation", dump.layer_name)));
    }
    Ok(tensor_variance(&dump.tensor))
}

pub fn trace_from_dumps(dumps: &[ActivationDump]) -> Result<LayerVarianceTrace> {
    let first = dumps
        .first()
        .ok_or_else(|| Error::Invalid("no activation dumps".into()))?;
    Ok(LayerVarianceTrace {
        model_id: first.model_id.clone(),
        probe_set_id: first.probe_id.clone(),
        entries: dumps
            .iter()
            .map(|d| {
                Ok(LayerVariance {
                    layer: d.layer_name.clone(),
                    variance: layer_variance(d)?,
                })
            })
            .collect::<Result<_>>()?,
    })
}

/// Captures `probes` (already preprocessed) and reduces each layer to its variance.
pub fn variance_trace(g: &Generator, model_id: &str, probes: &Tensor, probe_set_id: &str) -> Result<LayerVarianceTrace> {
    let (dumps, _) = capture(g, model_id, probes, probe_set_id)?;
    trace_from_dumps(&dumps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert_eq!(tensor_variance(&Tensor::full([2, 1, 3, 3], 4.0)), 0.0);
        let t = Tensor::from_vec([1, 1, 2, 2], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        assert_eq!(tensor_variance(&t), 1.0);
    }
}
