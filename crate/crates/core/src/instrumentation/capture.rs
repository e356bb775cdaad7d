use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::models::{Generator, LayerDesc};
use crate::tensor::Tensor;

/// Activations of one layer over a whole probe set (batch = probe count).
#[derive(Clone, Debug)]
pub struct ActivationDump {
    pub model_id: String,
    pub layer_name: String,
    pub tensor: Tensor,
    pub probe_id: String,
}

/// Runs `probes` through `g` in inference mode and records every graph
/// layer's output, in forward order. Also returns the generator output,
/// which is bit-identical to an uninstrumented `predict`.
pub fn capture(g: &Generator, model_id: &str, probes: &Tensor, probe_id: &str) -> Result<(Vec<ActivationDump>, Tensor)> {
    let layers = &g.graph().layers;
    let mut seen = HashSet::new();
    for l in layers {
        if !seen.insert(l.name.as_str()) {
            return Err(Error::Invalid(format!("layer name `{}` appears twice in the graph", l.name)));
        }
    }
    let mut per_layer: Vec<Vec<Tensor>> = vec![Vec::with_capacity(probes.batch()); layers.len()];
    let mut cursor = 0usize;
    let mut observe = |desc: &LayerDesc, t: &Tensor| {
        let idx = cursor % layers.len();
        debug_assert_eq!(layers[idx].name, desc.name);
        per_layer[idx].push(t.clone());
        cursor += 1;
    };
    let output = g.predict_observed(probes, Some(&mut observe))?;
    let dumps = layers
        .iter()
        .zip(per_layer)
        .map(|(l, parts)| {
            Ok(ActivationDump {
                model_id: model_id.into(),
                layer_name: l.name.clone(),
                tensor: Tensor::stack(&parts.iter().collect::<Vec<_>>())?,
                probe_id: probe_id.into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((dumps, output))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DumpEntry {
    name: String,
    shape: [usize; 4],
    dtype: String,
    file: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DumpIndex {
    model_id: String,
    probe_set_id: String,
    layers: Vec<DumpEntry>,
}

/// Writes one little-endian f32 file per layer plus `index.json`.
pub fn save_dumps(dumps: &[ActivationDump], dir: &Path) -> Result<()> {
    let first = dumps
        .first()
        .ok_or_else(|| Error::Invalid("no activation dumps to save".into()))?;
    fs::create_dir_all(dir).at(dir)?;
    let mut layers = Vec::with_capacity(dumps.len());
    for (i, d) in dumps.iter().enumerate() {
        if d.model_id != first.model_id || d.probe_id != first.probe_id {
            return Err(Error::Invalid("dumps from different models or probe sets".into()));
        }
        let file = format!("{i:02}_{}.f32", d.layer_name);
        let bytes: Vec<u8> = d.tensor.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&file);
        fs::write(&path, bytes).at(&path)?;
        layers.push(DumpEntry {
            name: d.layer_name.clone(),
            shape: d.tensor.shape(),
            dtype: "f32le".into(),
            file,
        });
    }
    let index = DumpIndex {
        model_id: first.model_id.clone(),
        probe_set_id: first.probe_id.clone(),
        layers,
    };
    let path = dir.join("index.json");
    fs::write(&path, serde_json::to_vec_pretty(&index)?).at(&path)
}

pub fn load_dumps(dir: &Path) -> Result<Vec<ActivationDump>> {
    let path = dir.join("index.json");
    let index: DumpIndex = serde_json::from_slice(&fs::read(&path).at(&path)?)?;
    index
        .layers
        .iter()
        .map(|e| {
            if e.dtype != "f32le" {
                return Err(Error::Invalid(format!("unsupported dump dtype `{}`", e.dtype)));
            }
            let p = dir.join(&e.file);
            let bytes = fs::read(&p).at(&p)?;
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Ok(ActivationDump {
                model_id: index.model_id.clone(),
                layer_name: e.name.clone(),
                tensor: Tensor::from_vec(e.shape, data)?,
                probe_id: index.probe_set_id.clone(),
            })
        })
        .collect()
}
