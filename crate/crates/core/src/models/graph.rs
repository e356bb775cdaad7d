use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    ConvDown,
    Middle,
    ConvUp,
    Output,
}

/// One realized layer. `spatial_size` is the (square) output side length.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    /// Alternate label; the down path is also called "decoder k" and the up
    /// path "encoder k" in some of the bias literature.
    pub alias: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub spatial_size: usize,
    pub kernel: usize,
    pub stride: usize,
    pub bias: bool,
    pub norm: bool,
    pub skip_source: Option<String>,
}

impl LayerDesc {
    /// Trainable scalars in this layer (kernel, optional bias, optional norm scale/shift).
    pub fn param_count(&self) -> usize {
        if self.kind == LayerKind::Input {
            return 0;
        }
        self.in_channels * self.out_channels * self.kernel * self.kernel
            + if self.bias { self.out_channels } else { 0 }
            + if self.norm { 2 * self.out_channels } else { 0 }
    }

    pub fn has_filters(&self) -> bool {
        self.kind != LayerKind::Input
    }
}

/// Ordered layer list of a network, in forward order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureGraph {
    pub layers: Vec<LayerDesc>,
}

impl ArchitectureGraph {
    pub fn skip_edges(&self) -> Vec<(&str, &str)> {
        self.layers
            .iter()
            .filter_map(|l| l.skip_source.as_deref().map(|s| (s, l.name.as_str())))
            .collect()
    }

    pub fn layer(&self, name: &str) -> Option<&LayerDesc> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerDesc::param_count).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
