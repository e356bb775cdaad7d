use super::graph::{ArchitectureGraph, LayerDesc, LayerKind};
use super::spec::GeneratorSpec;
use crate::error::{Error, Result};
use crate::nn::{self, BatchNorm2d, Conv2d, ConvTranspose2d, Init, NormCache, Param, ParamRng};
use crate::tensor::Tensor;

pub(crate) const LEAK: f32 = 0.2;

/// Receives every layer output during a forward pass, in graph order.
pub type LayerObserver<'a> = &'a mut dyn FnMut(&LayerDesc, &Tensor);

#[derive(Clone, Debug)]
struct DownBlock {
    conv: Conv2d,
    norm: Option<BatchNorm2d>,
}

#[derive(Clone, Debug)]
struct UpBlock {
    conv: ConvTranspose2d,
    norm: Option<BatchNorm2d>,
    skip: bool,
    output: bool,
}

/// Saved activations for one block.
struct BlockTrace {
    input: Tensor,
    norm: Option<NormCache>,
    out: Tensor,
}

/// Everything [`Generator::backward`] needs from a forward pass.
pub struct GeneratorTrace {
    input: Tensor,
    downs: Vec<BlockTrace>,
    middle: BlockTrace,
    ups: Vec<BlockTrace>,
}

/// U-Net generator with a per-level skip mask.
#[derive(Clone, Debug)]
pub struct Generator {
    spec: GeneratorSpec,
    downs: Vec<DownBlock>,
    middle: Conv2d,
    ups: Vec<UpBlock>,
    graph: ArchitectureGraph,
}

fn sizes(spec: &GeneratorSpec) -> Vec<usize> {
    // sizes[k] = spatial size after down-level k (sizes[0] = input).
    let mut s = vec![spec.input_resolution];
    for _ in 0..spec.depth {
        let prev = *s.last().unwrap();
        s.push(nn::conv_out_size(prev, 4, 2, 1));
    }
    s
}

impl Generator {
    pub fn new(spec: &GeneratorSpec, init: Init, rng: &mut ParamRng) -> Result<Self> {
        spec.validate()?;
        let d = spec.depth;
        let ch = &spec.channel_schedule;
        let size = sizes(spec);

        let mut layers = vec![LayerDesc {
            name: "input".into(),
            alias: "input".into(),
            kind: LayerKind::Input,
            in_channels: spec.io_channels,
            out_channels: spec.io_channels,
            spatial_size: spec.input_resolution,
            kernel: 0,
            stride: 1,
            bias: false,
            norm: false,
            skip_source: None,
        }];

        let mut downs = Vec::with_capacity(d);
        let mut prev = spec.io_channels;
        for k in 1..=d {
            let name = format!("down{k}");
            let first = k == 1;
            let conv = Conv2d::new(&name, prev, ch[k - 1], 4, 2, 1, first);
            let norm = (!first).then(|| BatchNorm2d::new(&format!("{name}.norm"), ch[k - 1]));
            layers.push(LayerDesc {
                name,
                alias: format!("decoder {k}"),
                kind: LayerKind::ConvDown,
                in_channels: prev,
                out_channels: ch[k - 1],
                spatial_size: size[k],
                kernel: 4,
                stride: 2,
                bias: first,
                norm: !first,
                skip_source: None,
            });
            downs.push(DownBlock { conv, norm });
            prev = ch[k - 1];
        }

        let middle = Conv2d::new("middle", prev, prev, 3, 1, 1, true);
        layers.push(LayerDesc {
            name: "middle".into(),
            alias: "middle".into(),
            kind: LayerKind::Middle,
            in_channels: prev,
            out_channels: prev,
            spatial_size: size[d],
            kernel: 3,
            stride: 1,
            bias: true,
            norm: false,
            skip_source: None,
        });

        let mut ups = Vec::with_capacity(d);
        for j in 1..=d {
            let output = j == d;
            let skip = spec.skip_mask[j - 1];
            let source_level = d + 1 - j;
            let in_ch = prev + if skip { ch[source_level - 1] } else { 0 };
            let out_ch = if output { spec.io_channels } else { ch[d - 1 - j] };
            let name = format!("up{j}");
            let conv = ConvTranspose2d::new(&name, in_ch, out_ch, 4, 2, 1, output);
            let norm = (!output).then(|| BatchNorm2d::new(&format!("{name}.norm"), out_ch));
            layers.push(LayerDesc {
                name,
                alias: format!("encoder {j}"),
                kind: if output { LayerKind::Output } else { LayerKind::ConvUp },
                in_channels: in_ch,
                out_channels: out_ch,
                spatial_size: size[d - j],
                kernel: 4,
                stride: 2,
                bias: output,
                norm: !output,
                skip_source: skip.then(|| format!("down{source_level}")),
            });
            ups.push(UpBlock {
                conv,
                norm,
                skip,
                output,
            });
            prev = out_ch;
        }

        let mut g = Self {
            spec: spec.clone(),
            downs,
            middle,
            ups,
            graph: ArchitectureGraph { layers },
        };
        g.initialize(init, rng);
        Ok(g)
    }

    fn initialize(&mut self, init: Init, rng: &mut ParamRng) {
        for b in &mut self.downs {
            init.fill_kernel(&mut b.conv.weight, rng);
            if let Some(n) = &mut b.norm {
                Init::fill_norm(&mut n.gamma, &mut n.beta, rng);
            }
        }
        init.fill_kernel(&mut self.middle.weight, rng);
        for b in &mut self.ups {
            init.fill_kernel(&mut b.conv.weight, rng);
            if let Some(n) = &mut b.norm {
                Init::fill_norm(&mut n.gamma, &mut n.beta, rng);
            }
        }
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn graph(&self) -> &ArchitectureGraph {
        &self.graph
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let r = self.spec.input_resolution;
        if x.shape()[1..] != [self.spec.io_channels, r, r] {
            return Err(Error::Shape(format!(
                "generator expects Bx{}x{r}x{r}, got {:?}",
                self.spec.io_channels,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Training-mode forward pass over a batch (normalization uses batch statistics).
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, GeneratorTrace)> {
        self.forward_observed(x, None)
    }

    pub fn forward_observed(
        &self,
        x: &Tensor,
        mut observer: Option<LayerObserver<'_>>,
    ) -> Result<(Tensor, GeneratorTrace)> {
        self.check_input(x)?;
        let layers = &self.graph.layers;
        let mut emit = |idx: usize, t: &Tensor| {
            if let Some(o) = observer.as_mut() {
                o(&layers[idx], t);
            }
        };
        emit(0, x);

        let mut downs = Vec::with_capacity(self.downs.len());
        let mut cur = x.clone();
        for (i, b) in self.downs.iter().enumerate() {
            let z = b.conv.forward(&cur)?;
            let (z, norm) = match &b.norm {
                Some(n) => {
                    let (y, c) = n.forward(&z);
                    (y, Some(c))
                }
                None => (z, None),
            };
            let out = nn::leaky_relu(&z, LEAK);
            emit(1 + i, &out);
            downs.push(BlockTrace {
                input: std::mem::replace(&mut cur, out.clone()),
                norm,
                out,
            });
        }

        let m = nn::relu(&self.middle.forward(&cur)?);
        let d = self.downs.len();
        emit(1 + d, &m);
        let middle = BlockTrace {
            input: std::mem::replace(&mut cur, m.clone()),
            norm: None,
            out: m,
        };

        let mut ups = Vec::with_capacity(d);
        for (i, b) in self.ups.iter().enumerate() {
            let j = i + 1;
            let source = &downs[d - j];
            let input = if b.skip {
                Tensor::concat_channels(&cur, &source.out)?
            } else {
                cur.clone()
            };
            // Target size is the input size of the mirrored down level.
            let target = if j == d { x } else { &downs[d - j - 1].out };
            let z = b.conv.forward(&input, target.height(), target.width())?;
            let (z, norm) = match &b.norm {
                Some(n) => {
                    let (y, c) = n.forward(&z);
                    (y, Some(c))
                }
                None => (z, None),
            };
            let out = if b.output { nn::tanh(&z) } else { nn::relu(&z) };
            emit(2 + d + i, &out);
            cur = out.clone();
            ups.push(BlockTrace { input, norm, out });
        }

        Ok((
            cur,
            GeneratorTrace {
                input: x.clone(),
                downs,
                middle,
                ups,
            },
        ))
    }

    /// Inference: each batch item is run on its own so results do not depend
    /// on what else is in the batch.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.predict_observed(x, None)
    }

    pub fn predict_observed(&self, x: &Tensor, mut observer: Option<LayerObserver<'_>>) -> Result<Tensor> {
        self.check_input(x)?;
        let mut outs = Vec::with_capacity(x.batch());
        for n in 0..x.batch() {
            let (y, _) = match observer.as_mut() {
                Some(o) => self.forward_observed(&x.select(n), Some(&mut **o))?,
                None => self.forward(&x.select(n))?,
            };
            outs.push(y);
        }
        Tensor::stack(&outs.iter().collect::<Vec<_>>())
    }

    /// Backpropagates `dy` (gradient w.r.t. the output), accumulating into
    /// parameter gradients. Returns the gradient w.r.t. the input.
    pub fn backward(&mut self, trace: &GeneratorTrace, dy: &Tensor) -> Tensor {
        let d = self.downs.len();
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; d];
        let mut grad = dy.clone();

        for i in (0..d).rev() {
            let j = i + 1;
            let b = &mut self.ups[i];
            let t = &trace.ups[i];
            let g = if b.output {
                nn::tanh_backward(&t.out, &grad)
            } else {
                nn::relu_backward(&t.out, &grad)
            };
            let g = match (&mut b.norm, &t.norm) {
                (Some(n), Some(c)) => n.backward(c, &g),
                _ => g,
            };
            let g_in = b.conv.backward(&t.input, &g);
            grad = if b.skip {
                let prev_ch = t.input.channels() - trace.downs[d - j].out.channels();
                let (g_prev, g_skip) = g_in.split_channels(prev_ch);
                accumulate(&mut skip_grads[d - j], g_skip);
                g_prev
            } else {
                g_in
            };
        }

        let g = nn::relu_backward(&trace.middle.out, &grad);
        grad = self.middle.backward(&trace.middle.input, &g);

        for i in (0..d).rev() {
            if let Some(s) = skip_grads[i].take() {
                grad.add_assign(&s);
            }
            let b = &mut self.downs[i];
            let t = &trace.downs[i];
            let g = nn::leaky_relu_backward(&t.out, &grad, LEAK);
            let g = match (&mut b.norm, &t.norm) {
                (Some(n), Some(c)) => n.backward(c, &g),
                _ => g,
            };
            grad = b.conv.backward(&t.input, &g);
        }
        debug_assert_eq!(grad.shape(), trace.input.shape());
        grad
    }

    /// Parameters in a fixed order (down path, middle, up path).
    pub fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for b in &self.downs {
            v.extend(b.conv.params());
            if let Some(n) = &b.norm {
                v.extend(n.params());
            }
        }
        v.extend(self.middle.params());
        for b in &self.ups {
            v.extend(b.conv.params());
            if let Some(n) = &b.norm {
                v.extend(n.params());
            }
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for b in &mut self.downs {
            v.extend(b.conv.params_mut());
            if let Some(n) = &mut b.norm {
                v.extend(n.params_mut());
            }
        }
        v.extend(self.middle.params_mut());
        for b in &mut self.ups {
            v.extend(b.conv.params_mut());
            if let Some(n) = &mut b.norm {
                v.extend(n.params_mut());
            }
        }
        v
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Kernel of a graph layer as `[h, w, in, out]`, where `in`/`out` are the
    /// layer's input and output channels.
    pub fn filters_hwio(&self, layer: &str) -> Option<(Vec<usize>, Vec<f32>)> {
        let desc = self.graph.layer(layer)?;
        let (weight, transposed) = match desc.kind {
            LayerKind::Input => return None,
            LayerKind::ConvDown => {
                let idx: usize = layer.strip_prefix("down")?.parse().ok()?;
                (&self.downs[idx - 1].conv.weight, false)
            }
            LayerKind::Middle => (&self.middle.weight, false),
            LayerKind::ConvUp | LayerKind::Output => {
                let idx: usize = layer.strip_prefix("up")?.parse().ok()?;
                (&self.ups[idx - 1].conv.weight, true)
            }
        };
        Some(to_hwio(weight, transposed))
    }
}

/// Reorders an `[out, in, k, k]` (or `[in, out, k, k]` when `transposed`) kernel to `[k, k, in, out]`.
pub(crate) fn to_hwio(weight: &Param, transposed: bool) -> (Vec<usize>, Vec<f32>) {
    let (a, b, kh, kw) = (weight.shape[0], weight.shape[1], weight.shape[2], weight.shape[3]);
    let (cin, cout) = if transposed { (a, b) } else { (b, a) };
    let mut out = vec![0.0; weight.len()];
    for i in 0..a {
        for j in 0..b {
            for y in 0..kh {
                for x in 0..kw {
                    let v = weight.value[((i * b + j) * kh + y) * kw + x];
                    let (ci, co) = if transposed { (i, j) } else { (j, i) };
                    out[((y * kw + x) * cin + ci) * cout + co] = v;
                }
            }
        }
    }
    (vec![kh, kw, cin, cout], out)
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(s) => s.add_assign(&g),
        None => *slot = Some(g),
    }
}
