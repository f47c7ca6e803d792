//! Checks of the statistics that make weights summation work: the
//! sign-preservation probability of a perturbed presynaptic sum, the
//! zero-mean weight condition and per-node dominance of the native network's
//! presynaptic signal.

use ndarray::Axis;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::align::require_same_architecture;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nnet::{Network, TrainedModel};
use crate::seed;

/// Monte-Carlo draws per sub-seeded batch.
const PEQ_BATCH: u64 = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeqEstimate {
    pub n_samples: u64,
    /// Draws where `sgn(a + b) = sgn(a)`.
    pub preserved: u64,
    /// Draws where the sign flipped.
    pub flipped: u64,
}

impl PeqEstimate {
    pub fn peq(&self) -> f64 {
        self.preserved as f64 / self.n_samples as f64
    }

    pub fn flip_probability(&self) -> f64 {
        self.flipped as f64 / self.n_samples as f64
    }
}

/// Frequency with which adding `b ~ N(0, σ_B²)` keeps the sign of
/// `a ~ N(0, σ_A²)`. Batches of draws use sub-seeds derived from `seed`.
pub fn estimate_peq(n_samples: u64, sigma_a: f64, sigma_b: f64, seed: u64) -> Result<PeqEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    if !(sigma_a >= 0.0 && sigma_b >= 0.0) || !(sigma_a.is_finite() && sigma_b.is_finite()) {
        return Err(Error::InvalidArgument("sigmas must be finite and non-negative".into()));
    }
    if sigma_a == 0.0 && sigma_b == 0.0 {
        return Err(Error::InvalidArgument("sigma_a and sigma_b cannot both be zero".into()));
    }
    let mut preserved = 0u64;
    let batches = n_samples.div_ceil(PEQ_BATCH);
    for batch in 0..batches {
        let mut rng = seed::rng(seed::derive_seed(seed, batch));
        let count = PEQ_BATCH.min(n_samples - batch * PEQ_BATCH);
        for _ in 0..count {
            let za: f64 = StandardNormal.sample(&mut rng);
            let zb: f64 = StandardNormal.sample(&mut rng);
            let a = sigma_a * za;
            let f = a + sigma_b * zb;
            if sign(f) == sign(a) {
                preserved += 1;
            }
        }
    }
    Ok(PeqEstimate {
        n_samples,
        preserved,
        flipped: n_samples - preserved,
    })
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerWeightStats {
    pub layer: usize,
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    /// `std / √count`.
    pub std_error: f64,
}

/// Per-layer statistics of weight entries (biases excluded).
pub fn weight_mean_report(net: &Network) -> Vec<LayerWeightStats> {
    net.layers()
        .iter()
        .enumerate()
        .map(|(layer, l)| {
            let n = l.weights.len();
            let mean = l.weights.sum() / n as f64;
            let std = if n > 1 {
                (l.weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            LayerWeightStats {
                layer,
                count: n,
                mean,
                std,
                std_error: std / (n as f64).sqrt(),
            }
        })
        .collect()
}

/// Ratio reported when B's presynaptic signal is identically zero.
pub const DOMINANCE_SENTINEL: f64 = f64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    /// One entry per node of the first hidden layer:
    /// `mean |W_A x + b_A| / mean |W_B x + b_B|` over the probes.
    pub ratios: Vec<f64>,
    pub median: f64,
}

pub fn dominance_report(a: &TrainedModel, b: &TrainedModel, probes: &Dataset) -> Result<DominanceReport> {
    require_same_architecture(&a.network, &b.network)?;
    if probes.is_empty() {
        return Err(Error::EmptyDataset("dominance probes"));
    }
    if probes.n_features() != a.network.input_width() {
        return Err(Error::Dimension {
            expected: a.network.input_width(),
            actual: probes.n_features(),
            context: "probe features",
        });
    }
    let mean_abs = |net: &Network| {
        let l = &net.layers()[0];
        let mut z = probes.features().dot(&l.weights.t());
        z += &l.bias;
        z.mapv(f64::abs).mean_axis(Axis(0)).expect("non-empty probes")
    };
    let (na, nb) = (mean_abs(&a.network), mean_abs(&b.network));
    let ratios: Vec<f64> = na
        .iter()
        .zip(&nb)
        .map(|(&x, &y)| match (x == 0.0, y == 0.0) {
            (true, true) => 1.0,
            (false, true) => DOMINANCE_SENTINEL,
            _ => x / y,
        })
        .collect();
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    Ok(DominanceReport { ratios, median })
}

/// Everything the `diag` command reports for a model pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peq: Option<PeqEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peq_estimate: Option<f64>,
    pub weight_stats_a: Vec<LayerWeightStats>,
    pub weight_stats_b: Vec<LayerWeightStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dominance: Option<DominanceReport>,
}
