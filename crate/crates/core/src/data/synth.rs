use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug)]
pub struct BlobParams {
    pub n_classes: usize,
    pub n_features: usize,
    pub n_per_class: usize,
    /// Spread of the class centres around 0.5 (centres are uniform in
    /// `0.5 ± center_scale / 2`).
    pub center_scale: f64,
    pub noise_std: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// Number of feature values that fell outside `[0, 1]` and were clipped.
    pub clipped: usize,
}

impl SynthOutput {
    /// Set when clipping was heavy enough to distort the blobs (over 1% of values).
    pub fn clip_warning(&self) -> Option<String> {
        let total = self.dataset.len() * self.dataset.n_features();
        (self.clipped * 100 > total).then(|| {
            format!(
                "{} of {} feature values clipped to [0, 1]; noise_std is large for this center_scale",
                self.clipped, total
            )
        })
    }
}

/// Gaussian blobs labelled `0..n_classes`, class-major order. Centres are
/// drawn once per seed; every feature is clamped to `[0, 1]`.
pub fn synth_blobs(p: BlobParams) -> Result<SynthOutput> {
    if p.n_classes == 0 || p.n_features == 0 || p.n_per_class == 0 {
        return Err(Error::InvalidArgument("blob counts must be positive".into()));
    }
    if !(p.noise_std >= 0.0 && p.center_scale >= 0.0) {
        return Err(Error::InvalidArgument("noise_std and center_scale must be >= 0".into()));
    }
    let mut rng = seed::rng(p.seed);
    let half = (p.center_scale / 2.0).min(0.5);
    let centers = Array2::from_shape_simple_fn((p.n_classes, p.n_features), || 0.5 + rng.gen_range(-half..=half));
    let noise = Normal::new(0.0, p.noise_std).expect("non-negative std");

    let n = p.n_classes * p.n_per_class;
    let mut clipped = 0;
    let mut features = Array2::zeros((n, p.n_features));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let class = i / p.n_per_class;
        labels.push(class as u32);
        for (v, &c) in row.iter_mut().zip(centers.row(class)) {
            let raw = if p.noise_std > 0.0 { c + noise.sample(&mut rng) } else { c };
            if !(0.0..=1.0).contains(&raw) {
                clipped += 1;
            }
            *v = raw.clamp(0.0, 1.0);
        }
    }
    Ok(SynthOutput {
        dataset: Dataset::new(features, labels)?,
        clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> BlobParams {
        BlobParams {
            n_classes: 4,
            n_features: 6,
            n_per_class: 50,
            center_scale: 0.6,
            noise_std: 0.05,
            seed: 11,
        }
    }

    #[test]
    fn sizes() {
        let d = synth_blobs(params()).unwrap().dataset;
        assert_eq!(d.len(), 200);
        assert_eq!(d.class_set().len(), 4);
    }

    #[test]
    fn zero_noise_collapses_classes() {
        let d = synth_blobs(BlobParams { noise_std: 0.0, ..params() }).unwrap().dataset;
        for c in 0..4 {
            let first = d.features().row(c * 50);
            for i in 1..50 {
                assert_eq!(d.features().row(c * 50 + i), first);
            }
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(synth_blobs(params()).unwrap().dataset, synth_blobs(params()).unwrap().dataset);
    }

    #[test]
    fn huge_noise_warns() {
        let out = synth_blobs(BlobParams { noise_std: 2.0, ..params() }).unwrap();
        assert!(out.clip_warning().is_some());
        assert!(out.dataset.features().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(synth_blobs(params()).unwrap().clip_warning().is_none());
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(synth_blobs(BlobParams { n_classes: 0, ..params() }).is_err());
    }
}
