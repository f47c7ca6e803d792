//! Datasets: IDX ingestion, synthetic blobs, class splits and holdout.

mod idx;
mod synth;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{concatenate, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::{seed, ClassLabel};

pub use idx::{load_idx_pair, load_mnist_idx, write_idx_images, write_idx_labels, IMAGES_MAGIC, LABELS_MAGIC};
pub use synth::{synth_blobs, BlobParams, SynthOutput};

/// Feature matrix with values in `[0, 1]`, one row per sample, plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<ClassLabel>,
    class_set: BTreeSet<ClassLabel>,
}

impl Dataset {
    /// Builds a dataset whose class set is the set of labels present.
    pub fn new(features: Array2<f64>, labels: Vec<ClassLabel>) -> Result<Self> {
        let class_set = labels.iter().copied().collect();
        Self::with_classes(features, labels, class_set)
    }

    pub fn with_classes(
        features: Array2<f64>,
        labels: Vec<ClassLabel>,
        class_set: BTreeSet<ClassLabel>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::CountMismatch {
                images: features.nrows(),
                labels: labels.len(),
            });
        }
        if let Some(v) = features.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("feature value {v} outside [0, 1]")));
        }
        if let Some(l) = labels.iter().find(|l| !class_set.contains(l)) {
            return Err(Error::Class(format!("label {l} is not in the declared class set")));
        }
        Ok(Self {
            features,
            labels,
            class_set,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn class_set(&self) -> &BTreeSet<ClassLabel> {
        &self.class_set
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn sample(&self, i: usize) -> (ArrayView1<'_, f64>, ClassLabel) {
        (self.features.row(i), self.labels[i])
    }

    pub fn class_counts(&self) -> BTreeMap<ClassLabel, usize> {
        let mut counts: BTreeMap<ClassLabel, usize> = self.class_set.iter().map(|&c| (c, 0)).collect();
        for l in &self.labels {
            *counts.entry(*l).or_default() += 1;
        }
        counts
    }

    /// Samples at `indices`, in that order. The class set is kept.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_set: self.class_set.clone(),
        }
    }

    /// Samples whose label is in `classes`; the class set becomes `classes`.
    pub fn restrict_to(&self, classes: &BTreeSet<ClassLabel>) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect();
        let mut d = self.subset(&idx);
        d.class_set = classes.clone();
        d
    }

    /// First `n` samples (or all of them).
    pub fn truncate(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn scale_features(&self, factor: f64) -> Result<Dataset> {
        Dataset::with_classes(&self.features * factor, self.labels.clone(), self.class_set.clone())
    }

    /// Row-wise concatenation; class sets are united.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.n_features() != other.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                actual: other.n_features(),
                context: "feature width of concatenated dataset",
            });
        }
        let features = concatenate(Axis(0), &[self.features.view(), other.features.view()])
            .expect("widths checked");
        let labels = self.labels.iter().chain(&other.labels).copied().collect();
        let class_set = self.class_set.union(&other.class_set).copied().collect();
        Ok(Dataset {
            features,
            labels,
            class_set,
        })
    }
}

/// Splits by class membership: the first part holds exactly the samples whose
/// label is in `classes_a`, the second holds the rest.
pub fn split_by_class(d: &Dataset, classes_a: &BTreeSet<ClassLabel>) -> Result<(Dataset, Dataset)> {
    if classes_a.is_empty() {
        return Err(Error::Class("class subset is empty".into()));
    }
    if !classes_a.is_subset(d.class_set()) {
        return Err(Error::Class(format!(
            "class subset {classes_a:?} is not contained in {:?}",
            d.class_set()
        )));
    }
    if classes_a.len() == d.class_set().len() {
        return Err(Error::Class("class subset must be a proper subset".into()));
    }
    let classes_b: BTreeSet<_> = d.class_set().difference(classes_a).copied().collect();
    Ok((d.restrict_to(classes_a), d.restrict_to(&classes_b)))
}

/// Seeded stratified split into `(train, validation)` with `val_count`
/// validation samples. Per-class validation counts are the proportional share
/// rounded by largest remainder, so each is within one sample of exact.
pub fn holdout(d: &Dataset, val_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = d.len();
    if val_count == 0 || val_count >= n {
        return Err(Error::InvalidArgument(format!(
            "validation count {val_count} must lie in 1..{n}"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut by_class: BTreeMap<ClassLabel, Vec<usize>> = BTreeMap::new();
    for (i, &l) in d.labels().iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }

    // Largest-remainder apportionment of val_count over classes.
    let mut quotas: Vec<(ClassLabel, usize, f64)> = by_class
        .iter()
        .map(|(&c, idx)| {
            let exact = val_count as f64 * idx.len() as f64 / n as f64;
            (c, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for &i in order.iter().take(val_count - assigned) {
        quotas[i].1 += 1;
    }

    let mut train_idx = Vec::with_capacity(n - val_count);
    let mut val_idx = Vec::with_capacity(val_count);
    for (c, quota, _) in quotas {
        let idx = by_class.get_mut(&c).expect("class present");
        idx.shuffle(&mut rng);
        val_idx.extend_from_slice(&idx[..quota]);
        train_idx.extend_from_slice(&idx[quota..]);
    }
    train_idx.shuffle(&mut rng);
    val_idx.shuffle(&mut rng);
    Ok((d.subset(&train_idx), d.subset(&val_idx)))
}
