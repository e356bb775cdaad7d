use super::param::Param;
use crate::exec;
use crate::tensor::Tensor;

const EPS: f64 = 1e-5;

/// Batch normalization that always normalizes with the statistics of the
/// batch it is given (no running averages). Inference code feeds one image
/// per call, which makes evaluation independent of batch composition.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub channels: usize,
}

/// Saved state for [`BatchNorm2d::backward`].
#[derive(Clone, Debug)]
pub struct NormCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.weight"), vec![channels], vec![1.0; channels]),
            beta: Param::new(format!("{name}.bias"), vec![channels], vec![0.0; channels]),
            channels,
        }
    }

    /// Per-channel mean and population variance over batch and space.
    fn stats(x: &Tensor) -> Vec<(f64, f64)> {
        let (n, plane) = (x.batch(), x.plane());
        exec::map_range(x.channels(), |c| {
            let m = (n * plane) as f64;
            let mut sum = 0.0;
            for i in 0..n {
                sum += x.item(i)[c * plane..(c + 1) * plane]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
            let mean = sum / m;
            let mut sq = 0.0;
            for i in 0..n {
                sq += x.item(i)[c * plane..(c + 1) * plane]
                    .iter()
                    .map(|&v| (v as f64 - mean).powi(2))
                    .sum::<f64>();
            }
            (mean, sq / m)
        })
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, NormCache) {
        assert_eq!(x.channels(), self.channels);
        let stats = Self::stats(x);
        let inv_std: Vec<f64> = stats.iter().map(|(_, v)| 1.0 / (v + EPS).sqrt()).collect();
        let plane = x.plane();
        let channels = self.channels;
        let mut x_hat = x.clone();
        let mut y = x.clone();
        exec::for_each_chunk(x_hat.data_mut(), plane, |idx, chunk| {
            let c = idx % channels;
            let (mean, _) = stats[c];
            for v in chunk {
                *v = ((*v as f64 - mean) * inv_std[c]) as f32;
            }
        });
        let (g, b) = (&self.gamma.value, &self.beta.value);
        let xh = x_hat.data();
        exec::for_each_chunk(y.data_mut(), plane, |idx, chunk| {
            let c = idx % channels;
            let src = &xh[idx * plane..(idx + 1) * plane];
            for (v, h) in chunk.iter_mut().zip(src) {
                *v = g[c] * h + b[c];
            }
        });
        (y, NormCache { x_hat, inv_std })
    }

    pub fn backward(&mut self, cache: &NormCache, dy: &Tensor) -> Tensor {
        let (n, plane, channels) = (dy.batch(), dy.plane(), self.channels);
        let m = (n * plane) as f64;
        let sums = exec::map_range(channels, |c| {
            let (mut db, mut dg) = (0.0f64, 0.0f64);
            for i in 0..n {
                let d = &dy.item(i)[c * plane..(c + 1) * plane];
                let h = &cache.x_hat.item(i)[c * plane..(c + 1) * plane];
                for (a, b) in d.iter().zip(h) {
                    db += *a as f64;
                    dg += (*a as f64) * (*b as f64);
                }
            }
            (db, dg)
        });
        for (c, (db, dg)) in sums.iter().enumerate() {
            self.beta.grad[c] += *db as f32;
            self.gamma.grad[c] += *dg as f32;
        }
        let gamma = &self.gamma.value;
        let mut dx = dy.clone();
        let xh = cache.x_hat.data();
        exec::for_each_chunk(dx.data_mut(), plane, |idx, chunk| {
            let c = idx % channels;
            let (db, dg) = sums[c];
            let k = gamma[c] as f64 * cache.inv_std[c] / m;
            let h = &xh[idx * plane..(idx + 1) * plane];
            for (v, hv) in chunk.iter_mut().zip(h) {
                *v = (k * (m * *v as f64 - db - *hv as f64 * dg)) as f32;
            }
        });
        dx
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_each_channel() {
        let bn = BatchNorm2d::new("bn", 2);
        let x = Tensor::from_vec([2, 2, 1, 2], vec![1., 3., 10., 10., 5., 7., 0., 20.]).unwrap();
        let (y, _) = bn.forward(&x);
        let c0: Vec<f32> = vec![y.data()[0], y.data()[1], y.data()[4], y.data()[5]];
        let mean: f32 = c0.iter().sum::<f32>() / 4.0;
        let var: f32 = c0.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-3);
    }

    #[test]
    fn backward_matches_finite_difference() {
        let mut bn = BatchNorm2d::new("bn", 2);
        bn.gamma.value = vec![1.3, 0.7];
        bn.beta.value = vec![0.1, -0.2];
        let data: Vec<f32> = (0..16).map(|i| ((i * 7 % 11) as f32) * 0.3 - 1.0).collect();
        let x = Tensor::from_vec([2, 2, 2, 2], data).unwrap();
        let w: Vec<f32> = (0..16).map(|i| ((i * 5 % 7) as f32) * 0.2 - 0.5).collect();
        let loss = |bn: &BatchNorm2d, x: &Tensor| -> f64 {
            let (y, _) = bn.forward(x);
            y.data().iter().zip(&w).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let (_, cache) = bn.forward(&x);
        let dy = Tensor::from_vec([2, 2, 2, 2], w.clone()).unwrap();
        let dx = bn.backward(&cache, &dy);
        for i in [0usize, 3, 9, 14] {
            let mut xp = x.clone();
            xp.data_mut()[i] += 1e-3;
            let mut xm = x.clone();
            xm.data_mut()[i] -= 1e-3;
            let fd = (loss(&bn, &xp) - loss(&bn, &xm)) / 2e-3;
            assert!((fd - dx.data()[i] as f64).abs() < 2e-3, "{fd} vs {}", dx.data()[i]);
        }
    }
}
