//! Labeled embedding datasets: file I/O, k-shot splitting and the synthetic
//! narrow-cone generator.

pub mod emb1;
pub mod labels;
mod synth;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;
#[cfg(test)]
use crate::matrix::Matrix;

pub use synth::{generate_narrow_cone, SyntheticConfig};

/// Embeddings with a fine label and its coarse parent per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    embeddings: EmbeddingMatrix,
    fine_labels: Vec<usize>,
    coarse_labels: Vec<usize>,
    fine_to_coarse: Vec<usize>,
    num_coarse: usize,
}

impl LabeledDataset {
    /// Build a dataset from embeddings, fine labels and the fine→coarse map.
    /// Coarse labels are derived from the map.
    pub fn new(
        embeddings: EmbeddingMatrix,
        fine_labels: Vec<usize>,
        fine_to_coarse: Vec<usize>,
    ) -> Result<Self> {
        let num_fine = fine_to_coarse.len();
        if let Some(&bad) = fine_labels.iter().find(|&&f| f >= num_fine) {
            return Err(Error::Label(format!(
                "fine label {bad} outside [0, {num_fine})"
            )));
        }
        let coarse_labels = fine_labels.iter().map(|&f| fine_to_coarse[f]).collect();
        Self::with_coarse(embeddings, fine_labels, coarse_labels, fine_to_coarse)
    }

    /// Build from explicit coarse labels, checking them against the map.
    pub fn with_coarse(
        embeddings: EmbeddingMatrix,
        fine_labels: Vec<usize>,
        coarse_labels: Vec<usize>,
        fine_to_coarse: Vec<usize>,
    ) -> Result<Self> {
        let n = embeddings.rows();
        if fine_labels.len() != n || coarse_labels.len() != n {
            return Err(Error::Consistency(format!(
                "{n} embedding rows but {} fine / {} coarse labels",
                fine_labels.len(),
                coarse_labels.len()
            )));
        }
        let num_fine = fine_to_coarse.len();
        if num_fine == 0 {
            return Err(Error::Label("empty fine_to_coarse map".into()));
        }
        let num_coarse = fine_to_coarse.iter().max().unwrap() + 1;
        let mut seen = vec![false; num_coarse];
        for &c in &fine_to_coarse {
            seen[c] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Label(format!(
                "coarse class {missing} has no fine class in the map"
            )));
        }
        for (j, (&f, &c)) in fine_labels.iter().zip(&coarse_labels).enumerate() {
            if f >= num_fine {
                return Err(Error::Label(format!(
                    "row {j}: fine label {f} outside [0, {num_fine})"
                )));
            }
            if c >= num_coarse {
                return Err(Error::Label(format!(
                    "row {j}: coarse label {c} outside [0, {num_coarse})"
                )));
            }
            if fine_to_coarse[f] != c {
                return Err(Error::Label(format!(
                    "row {j}: coarse label {c} contradicts map {f} -> {}",
                    fine_to_coarse[f]
                )));
            }
        }
        Ok(Self {
            embeddings,
            fine_labels,
            coarse_labels,
            fine_to_coarse,
            num_coarse,
        })
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn fine_labels(&self) -> &[usize] {
        &self.fine_labels
    }

    pub fn coarse_labels(&self) -> &[usize] {
        &self.coarse_labels
    }

    pub fn fine_to_coarse(&self) -> &[usize] {
        &self.fine_to_coarse
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn num_fine(&self) -> usize {
        self.fine_to_coarse.len()
    }

    pub fn num_coarse(&self) -> usize {
        self.num_coarse
    }

    /// Rows selected by index, in the given order. Panics on an empty selection.
    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        assert!(!idx.is_empty(), "empty subset");
        LabeledDataset {
            embeddings: self.embeddings.select_rows(idx),
            fine_labels: idx.iter().map(|&i| self.fine_labels[i]).collect(),
            coarse_labels: idx.iter().map(|&i| self.coarse_labels[i]).collect(),
            fine_to_coarse: self.fine_to_coarse.clone(),
            num_coarse: self.num_coarse,
        }
    }

    /// Same labels, different representation rows (e.g. calibrated outputs).
    pub fn with_embeddings(&self, embeddings: EmbeddingMatrix) -> Result<LabeledDataset> {
        if embeddings.rows() != self.len() {
            return Err(Error::Consistency(format!(
                "{} rows for a {}-row dataset",
                embeddings.rows(),
                self.len()
            )));
        }
        Ok(LabeledDataset {
            embeddings,
            ..self.clone()
        })
    }

    /// Row indices grouped by fine class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_fine()];
        for (i, &f) in self.fine_labels.iter().enumerate() {
            groups[f].push(i);
        }
        groups
    }
}

/// Read an EMB1 file that holds exactly one matrix.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (embeddings, used) = emb1::decode(&bytes)?;
    if used != bytes.len() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            bytes.len() - used
        )));
    }
    Ok(embeddings)
}

pub fn load_dataset(embeddings_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let embeddings = load_embeddings(embeddings_path)?;
    let text = fs::read_to_string(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let table = labels::decode(&text)?;
    if table.fine.len() != embeddings.rows() {
        return Err(Error::Consistency(format!(
            "labels file has {} rows, embeddings file has {}",
            table.fine.len(),
            embeddings.rows()
        )));
    }
    LabeledDataset::with_coarse(embeddings, table.fine, table.coarse, table.fine_to_coarse)
}

pub fn save_dataset(
    dataset: &LabeledDataset,
    embeddings_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    fs::write(embeddings_path, emb1::encode(dataset.embeddings()))
        .map_err(|e| Error::io(embeddings_path, e))?;
    let text = labels::encode(
        dataset.fine_to_coarse(),
        dataset.fine_labels(),
        dataset.coarse_labels(),
    );
    fs::write(labels_path, text).map_err(|e| Error::io(labels_path, e))
}

/// Train/holdout row indices for a k-shot split. Both lists are ascending.
pub fn k_shot_indices(
    dataset: &LabeledDataset,
    k: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let groups = dataset.class_indices();
    for (class, g) in groups.iter().enumerate() {
        if g.len() < k + 1 {
            return Err(Error::InsufficientData {
                class,
                available: g.len(),
                required: k + 1,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; dataset.len()];
    for mut g in groups {
        g.shuffle(&mut rng);
        for &i in &g[..k] {
            in_train[i] = true;
        }
    }
    let (train, holdout): (Vec<usize>, Vec<usize>) =
        (0..dataset.len()).partition(|&i| in_train[i]);
    Ok((train, holdout))
}

/// Exactly `k` examples per fine class for training, the rest held out.
pub fn sample_k_shot(
    dataset: &LabeledDataset,
    k: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let (train, holdout) = k_shot_indices(dataset, k, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&holdout)))
}

/// A small dataset used by unit tests across modules.
#[cfg(test)]
pub(crate) fn toy_dataset(per_class: usize) -> LabeledDataset {
    let map = vec![0, 0, 1];
    let mut rows = Vec::new();
    let mut fine = Vec::new();
    for f in 0..3 {
        for i in 0..per_class {
            rows.push(vec![f as f64 + 0.5, i as f64 * 0.25, 1.0]);
            fine.push(f);
        }
    }
    LabeledDataset::new(Matrix::from_rows(&rows).unwrap(), fine, map).unwrap()
}
