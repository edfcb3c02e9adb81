//! Anisotropy measurements: singular-value spectrum statistics, token
//! uniformity, PCA projection and fine-class centroid similarity.

mod svd;

pub use svd::{jacobi_svd, Svd};

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, EmbeddingMatrix, Matrix};
use crate::report::Report;
use crate::store::LabeledDataset;

/// Below this second central moment the skewness is reported as 0.
const DEGENERATE_M2: f64 = 1e-18;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Raw singular values, descending.
    pub singular_values: Vec<f64>,
    /// Singular values divided by their sum.
    pub normalized_values: Vec<f64>,
    pub median_norm: f64,
    /// Population variance of the raw singular values.
    pub variance_raw: f64,
    /// Fisher–Pearson population skewness of the raw singular values.
    pub skewness_raw: f64,
    pub token_uniformity: f64,
}

impl SpectrumReport {
    pub fn top_share(&self) -> f64 {
        self.normalized_values.first().copied().unwrap_or(0.0)
    }

    pub fn to_report(&self) -> Report {
        let mut r = Report::new();
        r.int("rank_limit", self.singular_values.len())
            .num("top_singular_value", self.singular_values[0])
            .num("top_share", self.top_share())
            .num("median_norm", self.median_norm)
            .num("variance_raw", self.variance_raw)
            .num("skewness_raw", self.skewness_raw)
            .num("token_uniformity", self.token_uniformity);
        r
    }

    /// Full normalized spectrum as CSV.
    pub fn spectrum_csv(&self) -> String {
        let mut out = String::from("index,singular_value,normalized\n");
        for (i, (s, p)) in self
            .singular_values
            .iter()
            .zip(&self.normalized_values)
            .enumerate()
        {
            out.push_str(&format!("{i},{s:e},{p:e}\n"));
        }
        out
    }
}

fn check_finite(m: &Matrix) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::Value("matrix contains non-finite values".into()))
    }
}

pub fn svd_values(m: &EmbeddingMatrix) -> Result<Vec<f64>> {
    check_finite(m)?;
    Ok(jacobi_svd(m).singular_values)
}

/// Mean cosine similarity over all unordered row pairs.
///
/// Uses `Σ_{i<j} cos(r_i, r_j) = (‖Σ r̂_i‖² − n) / 2` on the unit-normalized
/// rows, so the cost is linear in `n`.
pub fn token_uniformity(m: &EmbeddingMatrix) -> Result<f64> {
    check_finite(m)?;
    let n = m.rows();
    if n < 2 {
        return Err(Error::Argument(
            "token uniformity needs at least two rows".into(),
        ));
    }
    let mut sum = vec![0.0; m.cols()];
    for (i, row) in m.iter_rows().enumerate() {
        let len = norm(row);
        if len == 0.0 {
            return Err(Error::Value(format!("row {i} is zero")));
        }
        for (s, x) in sum.iter_mut().zip(row) {
            *s += x / len;
        }
    }
    let pairs = (n * (n - 1)) as f64 / 2.0;
    let total = (dot(&sum, &sum) - n as f64) / 2.0;
    Ok((total / pairs).clamp(-1.0, 1.0))
}

fn median(sorted_desc: &[f64]) -> f64 {
    let r = sorted_desc.len();
    if r % 2 == 1 {
        sorted_desc[r / 2]
    } else {
        0.5 * (sorted_desc[r / 2 - 1] + sorted_desc[r / 2])
    }
}

/// Population variance and Fisher–Pearson skewness.
pub fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3) = (0.0, 0.0);
    for &v in values {
        let c = v - mean;
        m2 += c * c;
        m3 += c * c * c;
    }
    m2 /= n;
    m3 /= n;
    let skew = if m2 < DEGENERATE_M2 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    };
    (m2, skew)
}

pub fn spectrum_from_values(singular_values: Vec<f64>, token_uniformity: f64) -> SpectrumReport {
    let total: f64 = singular_values.iter().sum();
    let normalized_values: Vec<f64> = if total > 0.0 {
        singular_values.iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / singular_values.len() as f64; singular_values.len()]
    };
    let (variance_raw, skewness_raw) = moments(&singular_values);
    SpectrumReport {
        median_norm: median(&normalized_values),
        normalized_values,
        variance_raw,
        skewness_raw,
        singular_values,
        token_uniformity,
    }
}

pub fn spectrum_stats(m: &EmbeddingMatrix) -> Result<SpectrumReport> {
    let tu = token_uniformity(m)?;
    let values = svd_values(m)?;
    Ok(spectrum_from_values(values, tu))
}

/// Center rows by the column mean and project onto the top right singular
/// vectors.
pub fn pca_project(m: &EmbeddingMatrix, components: usize) -> Result<Matrix> {
    check_finite(m)?;
    let (n, d) = m.shape();
    if components == 0 || components > n.min(d) {
        return Err(Error::Argument(format!(
            "components must be in [1, {}], got {components}",
            n.min(d)
        )));
    }
    let centered = center_columns(m);
    let svd = jacobi_svd(&centered);
    Ok(Matrix::from_fn(n, components, |i, k| {
        (0..d).map(|j| centered[(i, j)] * svd.v[(j, k)]).sum()
    }))
}

pub fn center_columns(m: &Matrix) -> Matrix {
    let (n, d) = m.shape();
    let mut mean = vec![0.0; d];
    for row in m.iter_rows() {
        for (s, x) in mean.iter_mut().zip(row) {
            *s += x;
        }
    }
    mean.iter_mut().for_each(|s| *s /= n as f64);
    Matrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j])
}

pub fn fine_centroids(dataset: &LabeledDataset, representations: &Matrix) -> Result<Matrix> {
    if representations.rows() != dataset.len() {
        return Err(Error::Consistency(format!(
            "{} representation rows for {} examples",
            representations.rows(),
            dataset.len()
        )));
    }
    let f = dataset.num_fine();
    let d = representations.cols();
    let mut sums = Matrix::zeros(f, d);
    let mut counts = vec![0usize; f];
    for (row, &label) in representations.iter_rows().zip(dataset.fine_labels()) {
        counts[label] += 1;
        for (s, x) in sums.row_mut(label).iter_mut().zip(row) {
            *s += x;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::Value(format!("fine class {c} has no examples")));
        }
        sums.row_mut(c).iter_mut().for_each(|s| *s /= count as f64);
    }
    Ok(sums)
}

/// Pairwise cosine similarity of fine-class centroids.
pub fn class_similarity(dataset: &LabeledDataset, representations: &Matrix) -> Result<Matrix> {
    let centroids = fine_centroids(dataset, representations)?;
    let f = centroids.rows();
    let norms: Vec<f64> = centroids.iter_rows().map(norm).collect();
    if let Some(c) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::Value(format!("fine class {c} has a zero centroid")));
    }
    let mut sim = Matrix::identity(f);
    for i in 0..f {
        for j in i + 1..f {
            let c = dot(centroids.row(i), centroids.row(j)) / (norms[i] * norms[j]);
            sim[(i, j)] = c;
            sim[(j, i)] = c;
        }
    }
    Ok(sim)
}

/// Mean similarity of fine-class pairs sharing a coarse parent, and of pairs
/// that do not. Diagonal entries are excluded.
pub fn block_means(sim: &Matrix, fine_to_coarse: &[usize]) -> (f64, f64) {
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..sim.rows() {
        for j in i + 1..sim.rows() {
            if fine_to_coarse[i] == fine_to_coarse[j] {
                within += sim[(i, j)];
                nw += 1;
            } else {
                cross += sim[(i, j)];
                nc += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    (mean(within, nw), mean(cross, nc))
}
