//! Classical outlier detectors used as comparison points: mean distance to
//! the k nearest training points, and PCA reconstruction error.
//!
//! Both scores follow the higher-is-more-outlying convention.

use crate::data::LabeledDataset;
use crate::error::{NusaError, Result};
use crate::linalg::{symmetric_eigen, DenseMatrix, DenseVector, OrthonormalBasis};

/// Fraction of total variance the default PCA component count must explain.
pub const DEFAULT_EXPLAINED_VARIANCE: f64 = 0.90;

/// Anything that maps a sample to an outlier score (higher = more outlying).
pub trait OutlierScorer: Sync {
    fn score(&self, x: &DenseVector) -> Result<f64>;

    fn score_all(&self, xs: &[DenseVector]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.score(x)).collect()
    }
}

fn check_dim(expected: usize, x: &DenseVector) -> Result<()> {
    if x.dim() != expected {
        return Err(NusaError::DimensionMismatch {
            expected,
            actual: x.dim(),
        });
    }
    Ok(())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnDetector {
    k: usize,
    training_points: Vec<DenseVector>,
}

impl KnnDetector {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn training_points(&self) -> &[DenseVector] {
        &self.training_points
    }
}

/// Retains the training features. Training points are not excluded when
/// they are later queried, so a training point scores 0 at `k = 1`.
pub fn knn_fit(data: &LabeledDataset, k: usize) -> Result<KnnDetector> {
    if data.is_empty() {
        return Err(NusaError::EmptyDataset);
    }
    if k == 0 || k > data.len() {
        return Err(NusaError::invalid(format!(
            "k must be in 1..={}, got {k}",
            data.len()
        )));
    }
    Ok(KnnDetector {
        k,
        training_points: data.features().to_vec(),
    })
}

/// Mean Euclidean distance from `x` to its `k` nearest training points.
pub fn knn_score(det: &KnnDetector, x: &DenseVector) -> Result<f64> {
    check_dim(det.training_points[0].dim(), x)?;
    let mut d: Vec<f64> = det
        .training_points
        .iter()
        .map(|p| distance(p.as_slice(), x.as_slice()))
        .collect();
    let k = det.k;
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, f64::total_cmp);
    }
    Ok(d[..k].iter().sum::<f64>() / k as f64)
}

impl OutlierScorer for KnnDetector {
    fn score(&self, x: &DenseVector) -> Result<f64> {
        knn_score(self, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaDetector {
    mean: DenseVector,
    components: OrthonormalBasis,
    /// Covariance eigenvalues in descending order.
    explained_variance: Vec<f64>,
}

impl PcaDetector {
    pub fn mean(&self) -> &DenseVector {
        &self.mean
    }

    pub fn components(&self) -> &OrthonormalBasis {
        &self.components
    }

    pub fn num_components(&self) -> usize {
        self.components.rank()
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }
}

/// Fits principal directions of the centered training features.
///
/// `num_components = None` keeps the smallest count explaining at least 90%
/// of the variance. A request above the numerical rank of the covariance is
/// reduced to the rank with a warning.
pub fn pca_fit(data: &LabeledDataset, num_components: Option<usize>) -> Result<PcaDetector> {
    let n = data.len();
    if n < 2 {
        return Err(NusaError::invalid(format!(
            "PCA needs at least 2 samples, got {n}"
        )));
    }
    let dim = data.dim();
    if let Some(c) = num_components {
        if c > dim {
            return Err(NusaError::invalid(format!(
                "num_components {c} exceeds feature dimension {dim}"
            )));
        }
    }

    let mut mean = vec![0.0; dim];
    for x in data.features() {
        mean.iter_mut().zip(x.as_slice()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = vec![0.0; dim * dim];
    let mut centered = vec![0.0; dim];
    for x in data.features() {
        centered
            .iter_mut()
            .zip(x.as_slice().iter().zip(&mean))
            .for_each(|(c, (v, m))| *c = v - m);
        for i in 0..dim {
            let ci = centered[i];
            for j in i..dim {
                cov[i * dim + j] += ci * centered[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / (n - 1) as f64;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    let (values, vectors) = symmetric_eigen(&DenseMatrix::new(dim, dim, cov)?)?;
    let values: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let top = values.first().copied().unwrap_or(0.0);
    let rank = values
        .iter()
        .filter(|&&v| v > 1e-10 * top && v > 0.0)
        .count();

    let wanted = match num_components {
        Some(c) => c,
        None => {
            let mut acc = 0.0;
            let mut count = 0;
            for v in &values[..rank] {
                if acc >= DEFAULT_EXPLAINED_VARIANCE * total {
                    break;
                }
                acc += v;
                count += 1;
            }
            count
        }
    };
    let kept = if wanted > rank {
        log::warn!(
            "requested {wanted} principal components but the data has rank {rank}; keeping {rank}"
        );
        rank
    } else {
        wanted
    };
    let components = OrthonormalBasis::new(dim, vectors[..kept].to_vec())?;
    Ok(PcaDetector {
        mean: DenseVector::new(mean)?,
        components,
        explained_variance: values,
    })
}

/// Norm of the part of `x − mean` outside the span of the kept components.
pub fn pca_score(det: &PcaDetector, x: &DenseVector) -> Result<f64> {
    check_dim(det.mean.dim(), x)?;
    let mut r: Vec<f64> = x
        .as_slice()
        .iter()
        .zip(det.mean.as_slice())
        .map(|(a, m)| a - m)
        .collect();
    for b in det.components.vectors() {
        let c: f64 = r.iter().zip(b.as_slice()).map(|(a, b)| a * b).sum();
        r.iter_mut()
            .zip(b.as_slice())
            .for_each(|(ri, bi)| *ri -= c * bi);
    }
    Ok(r.iter().map(|v| v * v).sum::<f64>().sqrt())
}

impl OutlierScorer for PcaDetector {
    fn score(&self, x: &DenseVector) -> Result<f64> {
        pca_score(self, x)
    }
}
