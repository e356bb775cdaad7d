use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::param::Param;

pub type ParamRng = ChaCha8Rng;

/// Weight initialization scheme for convolution kernels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// N(0, 0.02²)
    #[default]
    Normal,
    /// Orthogonal rows (or columns) scaled by 0.02.
    Orthogonal,
}

const SCALE: f64 = 0.02;

impl Init {
    pub fn rng(seed: u64) -> ParamRng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn fill_kernel(self, p: &mut Param, rng: &mut ParamRng) {
        match self {
            Init::Normal => {
                let d = Normal::new(0.0, SCALE).unwrap();
                p.value.iter_mut().for_each(|v| *v = d.sample(rng) as f32);
            }
            Init::Orthogonal => {
                let rows = p.shape[0];
                let cols = p.len() / rows.max(1);
                let m = orthogonal(rows, cols, rng);
                p.value
                    .iter_mut()
                    .zip(m)
                    .for_each(|(v, x)| *v = (x * SCALE) as f32);
            }
        }
    }

    /// Norm scale ~ N(1, 0.02²), shift = 0.
    pub fn fill_norm(p_gamma: &mut Param, p_beta: &mut Param, rng: &mut ParamRng) {
        let d = Normal::new(1.0, SCALE).unwrap();
        p_gamma.value.iter_mut().for_each(|v| *v = d.sample(rng) as f32);
        p_beta.value.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Row-major `rows × cols` matrix with orthonormal rows (if rows ≤ cols) or
/// orthonormal columns otherwise, via modified Gram-Schmidt on Gaussian draws.
fn orthogonal(rows: usize, cols: usize, rng: &mut ParamRng) -> Vec<f64> {
    let d = Normal::new(0.0, 1.0).unwrap();
    let (n, dim) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n);
    while vecs.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| d.sample(rng)).collect();
        for u in &vecs {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            vecs.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (i, v) in vecs.iter().enumerate() {
        for (j, x) in v.iter().enumerate() {
            if rows <= cols {
                out[i * cols + j] = *x;
            } else {
                out[j * cols + i] = *x;
            }
        }
    }
    out
}
