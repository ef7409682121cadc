use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::networks::NetworkParams;
use crate::{Error, Result};

/// Pearson correlation of two equally long series; `None` when either is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa.sqrt() * sbb.sqrt()))
}

/// Average ranks, ties sharing the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end - 1) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = rank;
        }
        start = end;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&ranks(a), &ranks(b))
}

fn pair_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d2: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            out.push(d2.sqrt());
        }
    }
    out
}

/// Squared Pearson correlation between the unordered pairwise Euclidean
/// distances within `set_a` and those within `set_b`, paired by index.
pub fn pairwise_distance_correlation(set_a: &[Vec<f64>], set_b: &[Vec<f64>]) -> Result<f64> {
    if set_a.len() != set_b.len() || set_a.len() < 3 {
        return Err(Error::Config(format!(
            "pairwise_distance_correlation needs two equal sets of at least 3 points, got {} and {}",
            set_a.len(),
            set_b.len()
        )));
    }
    let (da, db) = (pair_distances(set_a), pair_distances(set_b));
    pearson(&da, &db)
        .map(|r| r * r)
        .ok_or_else(|| Error::Undefined("a pairwise distance list is constant".into()))
}

/// Images flattened to 64-bit pixel vectors.
pub fn pixel_vectors(images: &[Tensor<f32>]) -> Vec<Vec<f64>> {
    images.iter().map(Tensor::to_f64_vec).collect()
}

/// Eval-mode siamese embeddings of `images`.
pub fn latent_vectors(
    siamese: &NetworkParams<f32>,
    images: &[Tensor<f32>],
) -> Result<Vec<Vec<f64>>> {
    Ok(siamese
        .infer_many(images, 64)?
        .iter()
        .map(Tensor::to_f64_vec)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    /// One `k`-vector per input point.
    pub points: Vec<Vec<f64>>,
    /// Variance along each kept component (unbiased).
    pub explained_variance: Vec<f64>,
    /// `explained_variance` over total variance.
    pub explained_ratio: Vec<f64>,
    /// Set when fewer than `k` components carry variance.
    pub rank_deficient: bool,
}

/// Projects centered points onto their top-`k` principal components. Each
/// component is signed so its largest-magnitude loading is positive.
pub fn pca_projection(points: &[Vec<f64>], k: usize) -> Result<PcaProjection> {
    let n = points.len();
    if k == 0 || n <= k {
        return Err(Error::Config(format!(
            "pca needs more than k={k} points, got {n}"
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Config("pca points differ in dimension".into()));
    }
    let centered = {
        let mean: Vec<f64> = (0..dim)
            .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        DMatrix::from_fn(n, dim, |i, j| points[i][j] - mean[j])
    };
    let scale = 1.0 / (n - 1) as f64;
    // Eigenpairs of the covariance, through the smaller Gram matrix when n < dim.
    let (values, vectors) = if n < dim {
        let gram = &centered * centered.transpose() * scale;
        let eig = SymmetricEigen::new(gram);
        let lifted = centered.transpose() * &eig.eigenvectors;
        (eig.eigenvalues, lifted)
    } else {
        let cov = centered.transpose() * &centered * scale;
        let eig = SymmetricEigen::new(cov);
        (eig.eigenvalues, eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let tol = 1e-12 * total.max(f64::MIN_POSITIVE);

    let mut components = Vec::with_capacity(k);
    let mut variance = Vec::with_capacity(k);
    let mut rank_deficient = false;
    for &idx in order.iter().take(k) {
        let lambda = values[idx].max(0.0);
        let mut axis = vectors.column(idx).into_owned();
        let norm = axis.norm();
        if lambda <= tol || norm == 0.0 {
            rank_deficient = true;
            components.push(None);
            variance.push(0.0);
            continue;
        }
        axis /= norm;
        let lead = axis
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if lead < 0.0 {
            axis = -axis;
        }
        components.push(Some(axis));
        variance.push(lambda);
    }
    let projected = (0..n)
        .map(|i| {
            let row = centered.row(i);
            components
                .iter()
                .map(|c| c.as_ref().map_or(0.0, |axis| row.dot(&axis.transpose())))
                .collect()
        })
        .collect();
    Ok(PcaProjection {
        points: projected,
        explained_ratio: variance
            .iter()
            .map(|v| if total > 0.0 { v / total } else { 0.0 })
            .collect(),
        explained_variance: variance,
        rank_deficient,
    })
}
