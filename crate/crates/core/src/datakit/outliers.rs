//! PCA-based outlier scoring.

use nalgebra::DMatrix;

use super::DataError;

const EIGENVALUE_FLOOR: f64 = 1e-12;

/// Index sets produced by [`remove_outliers`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutlierSplit {
    pub kept: Vec<usize>,
    pub flagged: Vec<usize>,
}

/// Flag the `floor(contamination * N)` highest-scoring vectors.
///
/// Score: center the vectors, eigendecompose the covariance, then sum
/// `(projection onto axis j)^2 / eigenvalue_j` over all axes with
/// eigenvalue above 1e-12 (variance-normalized reconstruction energy).
/// Ties are broken toward the lower index; results depend only on the
/// input.
pub fn remove_outliers(
    features: &[Vec<f32>],
    contamination: f64,
) -> Result<OutlierSplit, DataError> {
    if !(0.0..0.5).contains(&contamination) {
        return Err(DataError::ContaminationRange(contamination));
    }
    let n = features.len();
    if n < 2 {
        return Err(DataError::TooFewVectors(n));
    }
    let d = features[0].len();
    for f in features {
        if f.len() != d {
            return Err(DataError::RaggedFeatures(d, f.len()));
        }
    }

    let k = (contamination * n as f64).floor() as usize;
    if k == 0 {
        return Ok(OutlierSplit {
            kept: (0..n).collect(),
            flagged: Vec::new(),
        });
    }

    let scores = outlier_scores(features);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut flagged: Vec<usize> = order[..k].to_vec();
    flagged.sort_unstable();
    let kept: Vec<usize> = (0..n).filter(|i| !flagged.contains(i)).collect();
    Ok(OutlierSplit { kept, flagged })
}

/// Variance-normalized projection energy per sample.
pub fn outlier_scores(features: &[Vec<f32>]) -> Vec<f64> {
    let n = features.len();
    let d = features[0].len();
    let mut mean = vec![0.0f64; d];
    for f in features {
        for (m, &v) in mean.iter_mut().zip(f) {
            *m += f64::from(v);
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    // Centered data, n x d.
    let x = DMatrix::from_fn(n, d, |i, j| f64::from(features[i][j]) - mean[j]);
    let denom = (n - 1) as f64;

    if d <= n {
        let cov = (x.transpose() * &x) / denom;
        let eig = cov.symmetric_eigen();
        let mut scores = vec![0.0f64; n];
        for j in 0..d {
            let lambda = eig.eigenvalues[j];
            if lambda <= EIGENVALUE_FLOOR {
                continue;
            }
            let axis = eig.eigenvectors.column(j);
            for i in 0..n {
                let proj: f64 = x.row(i).iter().zip(axis.iter()).map(|(a, b)| a * b).sum();
                scores[i] += proj * proj / lambda;
            }
        }
        scores
    } else {
        // Gram trick: eigenvectors v of X Xᵀ/(n-1) share eigenvalues with the
        // covariance, and the projection of sample i onto covariance axis j
        // satisfies projᵢⱼ² / λⱼ = (n-1) vⱼ[i]².
        let gram = (&x * x.transpose()) / denom;
        let eig = gram.symmetric_eigen();
        let mut scores = vec![0.0f64; n];
        for j in 0..n {
            let lambda = eig.eigenvalues[j];
            if lambda <= EIGENVALUE_FLOOR {
                continue;
            }
            let v = eig.eigenvectors.column(j);
            for i in 0..n {
                scores[i] += denom * v[i] * v[i];
            }
        }
        scores
    }
}
