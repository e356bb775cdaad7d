use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Top-k principal components of a point cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k` unit-norm, mutually orthogonal rows of length F.
    pub components: Vec<Vec<f64>>,
    /// `N` rows of `k` coordinates.
    pub projections: Vec<Vec<f64>>,
    /// Share of total variance per returned component (0 when the data has none).
    pub explained_ratio: Vec<f64>,
    /// Every non-negative eigenvalue of the covariance, descending.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    /// Explained ratio of every component (the unreturned ones included).
    pub fn explained_ratio_all(&self) -> Vec<f64> {
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            return vec![0.0; self.eigenvalues.len()];
        }
        self.eigenvalues.iter().map(|l| l / total).collect()
    }
}

/// Eigen-decomposition of a symmetric `n×n` row-major matrix by cyclic Jacobi
/// rotations. Returns eigenvalues descending and eigenvectors as rows.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(a.len(), n * n);
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let (app, aqq) = (a[p * n + p], a[q * n + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k * n + i]).collect())
        .collect();
    (values, vectors)
}

/// Flips `v` so its largest-magnitude element (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Mean-centred PCA keeping the top `k` components.
///
/// Uses the F×F covariance when F ≤ N, otherwise the N×N Gram matrix of the
/// centred data (same non-zero spectrum, much smaller when points are few and
/// high-dimensional).
pub fn pca_top_k(rows: &[Vec<f64>], k: usize) -> Result<Pca> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Invalid(format!("PCA needs at least 2 points, got {n}")));
    }
    let f = rows[0].len();
    if k == 0 || k > f {
        return Err(Error::Invalid(format!("PCA needs 1 <= k <= {f}, got {k}")));
    }
    if rows.iter().any(|r| r.len() != f) {
        return Err(Error::Invalid("PCA rows differ in length".into()));
    }
    let mut mean = vec![0.0; f];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let denom = (n - 1) as f64;

    let (mut eigenvalues, mut components) = if f <= n {
        let mut cov = vec![0.0; f * f];
        for r in &centred {
            for i in 0..f {
                for j in i..f {
                    cov[i * f + j] += r[i] * r[j];
                }
            }
        }
        for i in 0..f {
            for j in i..f {
                let v = cov[i * f + j] / denom;
                cov[i * f + j] = v;
                cov[j * f + i] = v;
            }
        }
        symmetric_eigen(&cov, f)
    } else {
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum::<f64>() / denom;
                gram[i * n + j] = v;
                gram[j * n + i] = v;
            }
        }
        let (values, vectors) = symmetric_eigen(&gram, n);
        // Map Gram eigenvectors u back to feature space: v ∝ Xᵀu.
        let comps = vectors
            .iter()
            .take(k)
            .map(|u| {
                let mut v = vec![0.0; f];
                for (ui, r) in u.iter().zip(&centred) {
                    for (vj, x) in v.iter_mut().zip(r) {
                        *vj += ui * x;
                    }
                }
                v
            })
            .collect();
        (values, comps)
    };
    eigenvalues.iter_mut().for_each(|l| *l = l.max(0.0));
    let total: f64 = eigenvalues.iter().sum();
    components.truncate(k);

    let mut explained_ratio = Vec::with_capacity(k);
    for (i, c) in components.iter_mut().enumerate() {
        let norm = normalize(c);
        let lambda = eigenvalues.get(i).copied().unwrap_or(0.0);
        if norm == 0.0 || total <= 0.0 || lambda <= total * 1e-15 {
            // No variance along this direction; pick a canonical axis.
            c.iter_mut().for_each(|x| *x = 0.0);
            c[i % f] = 1.0;
            explained_ratio.push(0.0);
        } else {
            explained_ratio.push(lambda / total);
        }
        fix_sign(c);
    }
    let projections = centred
        .iter()
        .map(|r| {
            components
                .iter()
                .map(|c| c.iter().zip(r).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    Ok(Pca {
        mean,
        components,
        projections,
        explained_ratio,
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_pair() {
        let p = pca_top_k(&[vec![-1.0, 0.0], vec![1.0, 0.0]], 1).unwrap();
        assert_eq!(p.components[0], vec![1.0, 0.0]);
        assert_eq!(p.projections, vec![vec![-1.0], vec![1.0]]);
        assert_eq!(p.explained_ratio, vec![1.0]);
    }

    #[test]
    fn ratios_sum_to_one() {
        let rows: Vec<Vec<f64>> = (0..7)
            .map(|i| (0..4).map(|j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * j as f64).collect())
            .collect();
        let p = pca_top_k(&rows, 2).unwrap();
        let s: f64 = p.explained_ratio_all().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gram_path_agrees_with_covariance_path() {
        // 3 points in 5-D go through the Gram path; pad to 6 points by
        // duplicating to force the covariance path with the same spread.
        let base = vec![
            vec![1.0, 2.0, 0.5, -1.0, 3.0],
            vec![0.0, -1.0, 2.0, 0.0, 1.0],
            vec![2.0, 0.5, -0.5, 1.0, -2.0],
        ];
        let small = pca_top_k(&base, 2).unwrap();
        let doubled: Vec<Vec<f64>> = base.iter().chain(&base).cloned().collect();
        let big = pca_top_k(&doubled, 2).unwrap();
        for (a, b) in small.components.iter().zip(&big.components) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-9, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn zero_variance_is_flagged() {
        let p = pca_top_k(&[vec![3.0, 3.0], vec![3.0, 3.0]], 1).unwrap();
        assert_eq!(p.explained_ratio, vec![0.0]);
        assert_eq!(p.projections, vec![vec![0.0], vec![0.0]]);
    }

    #[test]
    fn bad_inputs() {
        assert!(pca_top_k(&[vec![1.0]], 1).is_err());
        assert!(pca_top_k(&[vec![1.0], vec![2.0]], 2).is_err());
    }
}
