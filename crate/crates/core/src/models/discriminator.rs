use super::generator::LEAK;
use super::graph::{ArchitectureGraph, LayerDesc, LayerKind};
use crate::error::{Error, Result};
use crate::nn::{self, BatchNorm2d, Conv2d, Init, NormCache, Param, ParamRng};
use crate::tensor::Tensor;

const BLOCKS: usize = 4;

/// Conditional PatchGAN: four stride-2 blocks and a size-preserving 1-channel
/// head, applied to `[condition, candidate]` stacked along channels.
/// Emits raw logits; callers apply the sigmoid.
#[derive(Clone, Debug)]
pub struct Discriminator {
    resolution: usize,
    blocks: Vec<(Conv2d, Option<BatchNorm2d>)>,
    head: Conv2d,
    graph: ArchitectureGraph,
}

pub struct DiscriminatorTrace {
    inputs: Vec<Tensor>,
    norms: Vec<Option<NormCache>>,
    outs: Vec<Tensor>,
    head_input: Tensor,
}

impl Discriminator {
    pub const INPUT_CHANNELS: usize = 6;

    pub fn new(resolution: usize, base_channels: usize, init: Init, rng: &mut ParamRng) -> Result<Self> {
        if resolution < 16 {
            return Err(Error::Spec(format!(
                "discriminator needs resolution >= 16 for four halvings, got {resolution}"
            )));
        }
        if base_channels == 0 {
            return Err(Error::Spec("discriminator base channels must be positive".into()));
        }
        let mut layers = vec![LayerDesc {
            name: "input".into(),
            alias: "input".into(),
            kind: LayerKind::Input,
            in_channels: Self::INPUT_CHANNELS,
            out_channels: Self::INPUT_CHANNELS,
            spatial_size: resolution,
            kernel: 0,
            stride: 1,
            bias: false,
            norm: false,
            skip_source: None,
        }];
        let mut blocks = Vec::with_capacity(BLOCKS);
        let (mut prev, mut size) = (Self::INPUT_CHANNELS, resolution);
        for k in 1..=BLOCKS {
            let out = base_channels << (k - 1);
            let first = k == 1;
            let name = format!("block{k}");
            let mut conv = Conv2d::new(&name, prev, out, 4, 2, 1, first);
            init.fill_kernel(&mut conv.weight, rng);
            let norm = (!first).then(|| {
                let mut n = BatchNorm2d::new(&format!("{name}.norm"), out);
                Init::fill_norm(&mut n.gamma, &mut n.beta, rng);
                n
            });
            size = nn::conv_out_size(size, 4, 2, 1);
            layers.push(LayerDesc {
                name,
                alias: format!("block {k}"),
                kind: LayerKind::ConvDown,
                in_channels: prev,
                out_channels: out,
                spatial_size: size,
                kernel: 4,
                stride: 2,
                bias: first,
                norm: !first,
                skip_source: None,
            });
            blocks.push((conv, norm));
            prev = out;
        }
        let mut head = Conv2d::new("head", prev, 1, 3, 1, 1, true);
        init.fill_kernel(&mut head.weight, rng);
        layers.push(LayerDesc {
            name: "head".into(),
            alias: "head".into(),
            kind: LayerKind::Output,
            in_channels: prev,
            out_channels: 1,
            spatial_size: size,
            kernel: 3,
            stride: 1,
            bias: true,
            norm: false,
            skip_source: None,
        });
        Ok(Self {
            resolution,
            blocks,
            head,
            graph: ArchitectureGraph { layers },
        })
    }

    pub fn graph(&self) -> &ArchitectureGraph {
        &self.graph
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Side length of the patch map.
    pub fn patch_size(&self) -> usize {
        self.graph.layers.last().unwrap().spatial_size
    }

    /// Scores `candidate` given `condition`.
    pub fn forward(&self, condition: &Tensor, candidate: &Tensor) -> Result<(Tensor, DiscriminatorTrace)> {
        condition.check_same_shape(candidate, "discriminator condition/candidate")?;
        self.forward_stacked(&Tensor::concat_channels(condition, candidate)?)
    }

    /// Scores an already-stacked 6-channel input.
    pub fn forward_stacked(&self, x: &Tensor) -> Result<(Tensor, DiscriminatorTrace)> {
        if x.channels() != Self::INPUT_CHANNELS {
            return Err(Error::Shape(format!(
                "discriminator expects {} input channels, got {}",
                Self::INPUT_CHANNELS,
                x.channels()
            )));
        }
        if x.height() != self.resolution || x.width() != self.resolution {
            return Err(Error::Shape(format!(
                "discriminator built for {r}x{r}, got {:?}",
                x.shape(),
                r = self.resolution
            )));
        }
        let mut inputs = Vec::with_capacity(BLOCKS);
        let mut norms = Vec::with_capacity(BLOCKS);
        let mut outs = Vec::with_capacity(BLOCKS);
        let mut cur = x.clone();
        for (conv, norm) in &self.blocks {
            let z = conv.forward(&cur)?;
            let (z, c) = match norm {
                Some(n) => {
                    let (y, c) = n.forward(&z);
                    (y, Some(c))
                }
                None => (z, None),
            };
            let out = nn::leaky_relu(&z, LEAK);
            inputs.push(std::mem::replace(&mut cur, out.clone()));
            norms.push(c);
            outs.push(out);
        }
        let logits = self.head.forward(&cur)?;
        Ok((
            logits,
            DiscriminatorTrace {
                inputs,
                norms,
                outs,
                head_input: cur,
            },
        ))
    }

    /// Returns the gradient w.r.t. the stacked 6-channel input.
    pub fn backward(&mut self, trace: &DiscriminatorTrace, d_logits: &Tensor) -> Tensor {
        let mut grad = self.head.backward(&trace.head_input, d_logits);
        for i in (0..self.blocks.len()).rev() {
            let (conv, norm) = &mut self.blocks[i];
            let g = nn::leaky_relu_backward(&trace.outs[i], &grad, LEAK);
            let g = match (norm, &trace.norms[i]) {
                (Some(n), Some(c)) => n.backward(c, &g),
                _ => g,
            };
            grad = conv.backward(&trace.inputs[i], &g);
        }
        grad
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for (c, n) in &self.blocks {
            v.extend(c.params());
            if let Some(n) = n {
                v.extend(n.params());
            }
        }
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for (c, n) in &mut self.blocks {
            v.extend(c.params_mut());
            if let Some(n) = n {
                v.extend(n.params_mut());
            }
        }
        v.extend(self.head.params_mut());
        v
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
