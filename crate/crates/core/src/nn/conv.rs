//! Strided 2-D convolution and transposed convolution via im2col + GEMM.

use super::conv_out_size;
use super::gemm::{gemm, MatRef};
use super::param::Param;
use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `image` (`channels × height × width`) into `col` (`channels·k² × out_h·out_w`).
fn im2col(g: &Geometry, image: &[f32], col: &mut [f32]) {
    let kk = g.kernel * g.kernel;
    let cols = g.cols();
    let plane = g.height * g.width;
    exec::for_each_chunk(col, kk * cols, |c, rows| {
        let src = &image[c * plane..(c + 1) * plane];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = &mut rows[(ky * g.kernel + kx) * cols..][..cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let line = &src[iy as usize * g.width..][..g.width];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            line[ix as usize]
                        };
                    }
                }
            }
        }
    });
}

/// Adjoint of [`im2col`]: scatter-adds `col` back into `image`.
fn col2im(g: &Geometry, col: &[f32], image: &mut [f32]) {
    let kk = g.kernel * g.kernel;
    let cols = g.cols();
    let plane = g.height * g.width;
    exec::for_each_chunk(image, plane, |c, dst| {
        let rows = &col[c * kk * cols..(c + 1) * kk * cols];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = &rows[(ky * g.kernel + kx) * cols..][..cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let line = &mut dst[iy as usize * g.width..][..g.width];
                    let src = &row[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            line[ix as usize] += *s;
                        }
                    }
                }
            }
        }
    });
}

fn add_bias(out: &mut [f32], bias: &[f32], plane: usize) {
    for (c, b) in bias.iter().enumerate() {
        out[c * plane..(c + 1) * plane]
            .iter_mut()
            .for_each(|v| *v += *b);
    }
}

fn accumulate_bias_grad(grad: &mut [f32], dy: &[f32], plane: usize) {
    for (c, g) in grad.iter_mut().enumerate() {
        // f64 accumulation keeps the sum independent of plane size effects.
        let s: f64 = dy[c * plane..(c + 1) * plane]
            .iter()
            .map(|&v| v as f64)
            .sum();
        *g += s as f32;
    }
}

/// Square-kernel convolution. Weight layout `[out, in, k, k]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let weight = Param::new(
            format!("{name}.weight"),
            vec![out_channels, in_channels, kernel, kernel],
            vec![0.0; out_channels * in_channels * kernel * kernel],
        );
        let bias =
            bias.then(|| Param::new(format!("{name}.bias"), vec![out_channels], vec![0.0; out_channels]));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out_size(h, self.kernel, self.stride, self.pad),
            conv_out_size(w, self.kernel, self.stride, self.pad),
        )
    }

    fn geometry(&self, x: &Tensor) -> Geometry {
        let (out_h, out_w) = self.output_size(x.height(), x.width());
        Geometry {
            channels: self.in_channels,
            height: x.height(),
            width: x.width(),
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            out_h,
            out_w,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "{} expects {} input channels, got {}",
                self.weight.name,
                self.in_channels,
                x.channels()
            )));
        }
        if x.height() + 2 * self.pad < self.kernel || x.width() + 2 * self.pad < self.kernel {
            return Err(Error::Shape(format!(
                "{}: input {:?} smaller than kernel",
                self.weight.name,
                x.shape()
            )));
        }
        let g = self.geometry(x);
        let (rows, cols) = (g.rows(), g.cols());
        let mut out = Tensor::zeros([x.batch(), self.out_channels, g.out_h, g.out_w]);
        let mut col = vec![0.0; rows * cols];
        for n in 0..x.batch() {
            im2col(&g, x.item(n), &mut col);
            let y = out.item_mut(n);
            gemm(
                self.out_channels,
                rows,
                cols,
                1.0,
                MatRef::row_major(&self.weight.value, rows),
                MatRef::row_major(&col, cols),
                0.0,
                y,
            );
            if let Some(b) = &self.bias {
                add_bias(y, &b.value, cols);
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let g = self.geometry(x);
        let (rows, cols) = (g.rows(), g.cols());
        assert_eq!(dy.shape(), [x.batch(), self.out_channels, g.out_h, g.out_w]);
        let mut dx = Tensor::zeros(x.shape());
        let mut col = vec![0.0; rows * cols];
        let mut dcol = vec![0.0; rows * cols];
        for n in 0..x.batch() {
            im2col(&g, x.item(n), &mut col);
            let dyn_ = dy.item(n);
            gemm(
                self.out_channels,
                cols,
                rows,
                1.0,
                MatRef::row_major(dyn_, cols),
                MatRef::transposed(&col, cols),
                1.0,
                &mut self.weight.grad,
            );
            if let Some(b) = &mut self.bias {
                accumulate_bias_grad(&mut b.grad, dyn_, cols);
            }
            gemm(
                rows,
                self.out_channels,
                cols,
                1.0,
                MatRef::transposed(&self.weight.value, rows),
                MatRef::row_major(dyn_, cols),
                0.0,
                &mut dcol,
            );
            col2im(&g, &dcol, dx.item_mut(n));
        }
        dx
    }

    pub fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight)
            .chain(self.bias.as_mut())
            .collect()
    }
}

/// Transposed convolution (fractionally strided). Weight layout `[in, out, k, k]`.
///
/// The output size is `(h - 1)·stride - 2·pad + k + extra`, where `extra` is
/// chosen per call so the output can match an odd-sized skip tensor.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let weight = Param::new(
            format!("{name}.weight"),
            vec![in_channels, out_channels, kernel, kernel],
            vec![0.0; out_channels * in_channels * kernel * kernel],
        );
        let bias =
            bias.then(|| Param::new(format!("{name}.bias"), vec![out_channels], vec![0.0; out_channels]));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    /// Smallest output size for an input of `input` pixels.
    pub fn base_output_size(&self, input: usize) -> usize {
        ((input - 1) * self.stride + self.kernel).saturating_sub(2 * self.pad)
    }

    fn geometry(&self, x: &Tensor, out_h: usize, out_w: usize) -> Result<Geometry> {
        let (bh, bw) = (
            self.base_output_size(x.height()),
            self.base_output_size(x.width()),
        );
        if out_h < bh || out_h >= bh + self.stride || out_w < bw || out_w >= bw + self.stride {
            return Err(Error::Shape(format!(
                "{}: cannot produce {}x{} from {:?}",
                self.weight.name,
                out_h,
                out_w,
                x.shape()
            )));
        }
        Ok(Geometry {
            channels: self.out_channels,
            height: out_h,
            width: out_w,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            out_h: x.height(),
            out_w: x.width(),
        })
    }

    pub fn forward(&self, x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
        if x.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "{} expects {} input channels, got {}",
                self.weight.name,
                self.in_channels,
                x.channels()
            )));
        }
        let g = self.geometry(x, out_h, out_w)?;
        let (rows, cols) = (g.rows(), g.cols());
        let mut out = Tensor::zeros([x.batch(), self.out_channels, out_h, out_w]);
        let mut col = vec![0.0; rows * cols];
        for n in 0..x.batch() {
            gemm(
                rows,
                self.in_channels,
                cols,
                1.0,
                MatRef::transposed(&self.weight.value, rows),
                MatRef::row_major(x.item(n), cols),
                0.0,
                &mut col,
            );
            let y = out.item_mut(n);
            col2im(&g, &col, y);
            if let Some(b) = &self.bias {
                add_bias(y, &b.value, out_h * out_w);
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let g = self
            .geometry(x, dy.height(), dy.width())
            .expect("backward geometry matches forward");
        let (rows, cols) = (g.rows(), g.cols());
        let mut dx = Tensor::zeros(x.shape());
        let mut dcol = vec![0.0; rows * cols];
        for n in 0..x.batch() {
            let dyn_ = dy.item(n);
            im2col(&g, dyn_, &mut dcol);
            gemm(
                self.in_channels,
                cols,
                rows,
                1.0,
                MatRef::row_major(x.item(n), cols),
                MatRef::transposed(&dcol, cols),
                1.0,
                &mut self.weight.grad,
            );
            if let Some(b) = &mut self.bias {
                accumulate_bias_grad(&mut b.grad, dyn_, dy.plane());
            }
            gemm(
                self.in_channels,
                rows,
                cols,
                1.0,
                MatRef::row_major(&self.weight.value, rows),
                MatRef::row_major(&dcol, cols),
                0.0,
                dx.item_mut(n),
            );
        }
        dx
    }

    pub fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight)
            .chain(self.bias.as_mut())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fill(p: &mut Param, seed: u32) {
        for (i, v) in p.value.iter_mut().enumerate() {
            *v = (((i as u32).wrapping_mul(2654435761).wrapping_add(seed) >> 16) % 97) as f32 / 97.0 - 0.5;
        }
    }

    fn tensor(shape: [usize; 4], seed: u32) -> Tensor {
        let n = shape.iter().product::<usize>();
        Tensor::from_vec(
            shape,
            (0..n)
                .map(|i| (((i as u32).wrapping_mul(40503).wrapping_add(seed) >> 3) % 89) as f32 / 89.0 - 0.5)
                .collect(),
        )
        .unwrap()
    }

    /// Direct-loop reference convolution.
    fn conv_ref(c: &Conv2d, x: &Tensor) -> Tensor {
        let (oh, ow) = c.output_size(x.height(), x.width());
        let mut out = Tensor::zeros([x.batch(), c.out_channels, oh, ow]);
        let k = c.kernel;
        for n in 0..x.batch() {
            for o in 0..c.out_channels {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut s = c.bias.as_ref().map_or(0.0, |b| b.value[o]) as f64;
                        for i in 0..c.in_channels {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (y * c.stride + ky) as isize - c.pad as isize;
                                    let ix = (xx * c.stride + kx) as isize - c.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= x.height() as isize || ix >= x.width() as isize {
                                        continue;
                                    }
                                    let xv = x.item(n)[(i * x.height() + iy as usize) * x.width() + ix as usize];
                                    let wv = c.weight.value[((o * c.in_channels + i) * k + ky) * k + kx];
                                    s += (xv * wv) as f64;
                                }
                            }
                        }
                        out.item_mut(n)[(o * oh + y) * ow + xx] = s as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut c = Conv2d::new("c", 3, 5, 4, 2, 1, true);
        fill(&mut c.weight, 1);
        fill(c.bias.as_mut().unwrap(), 2);
        let x = tensor([2, 3, 9, 8], 3);
        let got = c.forward(&x).unwrap();
        let want = conv_ref(&c, &x);
        assert_eq!(got.shape(), [2, 5, 4, 4]);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    /// <dy, conv(x)> = <convᵀ(dy), x>: the backward input map is the adjoint.
    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        let mut c = Conv2d::new("c", 2, 3, 3, 2, 1, false);
        fill(&mut c.weight, 9);
        let x = tensor([1, 2, 7, 7], 4);
        let y = c.forward(&x).unwrap();
        let dy = tensor(y.shape(), 5);
        let dx = c.backward(&x, &dy);
        let lhs: f64 = y.data().iter().zip(dy.data()).map(|(a, b)| (a * b) as f64).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }

    /// A transposed convolution is the input-adjoint of the matching convolution.
    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        let mut conv = Conv2d::new("c", 4, 3, 4, 2, 1, false);
        fill(&mut conv.weight, 11);
        let mut tconv = ConvTranspose2d::new("t", 3, 4, 4, 2, 1, false);
        // Same [out, in, k, k] buffer reinterpreted as [in, out, k, k].
        tconv.weight.value = conv.weight.value.clone();
        let x = tensor([1, 4, 8, 8], 6);
        let y = conv.forward(&x).unwrap();
        let z = tensor(y.shape(), 7);
        let tz = tconv.forward(&z, 8, 8).unwrap();
        let lhs: f64 = y.data().iter().zip(z.data()).map(|(a, b)| (a * b) as f64).sum();
        let rhs: f64 = x.data().iter().zip(tz.data()).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_transpose_supports_odd_targets() {
        let t = ConvTranspose2d::new("t", 2, 2, 4, 2, 1, true);
        let x = Tensor::zeros([1, 2, 3, 3]);
        assert_eq!(t.forward(&x, 6, 6).unwrap().shape(), [1, 2, 6, 6]);
        assert_eq!(t.forward(&x, 7, 7).unwrap().shape(), [1, 2, 7, 7]);
        assert!(t.forward(&x, 8, 8).is_err());
    }

    #[test]
    fn weight_gradient_matches_finite_difference() {
        let mut c = ConvTranspose2d::new("t", 2, 3, 4, 2, 1, true);
        fill(&mut c.weight, 21);
        let x = tensor([2, 2, 3, 3], 8);
        let y = c.forward(&x, 6, 6).unwrap();
        let dy = tensor(y.shape(), 10);
        c.backward(&x, &dy);
        let loss = |c: &ConvTranspose2d| -> f64 {
            let y = c.forward(&x, 6, 6).unwrap();
            y.data().iter().zip(dy.data()).map(|(a, b)| (a * b) as f64).sum()
        };
        for idx in [0usize, 7, 30, 71] {
            let mut p = c.clone();
            p.weight.value[idx] += 1e-2;
            let mut m = c.clone();
            m.weight.value[idx] -= 1e-2;
            let fd = (loss(&p) - loss(&m)) / 2e-2;
            assert!((fd - c.weight.grad[idx] as f64).abs() < 1e-3, "{fd} vs {}", c.weight.grad[idx]);
        }
        let bias_fd: f64 = (0..2).map(|n| dy.item(n)[..36].iter().map(|&v| v as f64).sum::<f64>()).sum();
        assert!((bias_fd - c.bias.as_ref().unwrap().grad[0] as f64).abs() < 1e-4);
    }
}
