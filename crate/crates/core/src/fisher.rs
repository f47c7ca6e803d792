//! Diagonal Fisher information (Gauss-Newton diagonal of the loss Hessian).
//!
//! A per-sample weight gradient is an outer product `δ·aᵀ`, so its
//! element-wise square is `δ²·(a²)ᵀ`. Summing over samples turns every
//! layer's diagonal into a single matrix product of squared deltas and squared
//! activations.

use ndarray::{Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nnet::{activation_vjp, backprop_deltas, forward_batch, loss_derivative, LayerParams, LossKind, Network, ParamSet, TrainedModel};
use crate::seed;

const CHUNK: usize = 500;

/// Non-negative per-parameter importance values, shape-parallel to a network.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherDiag(ParamSet);

impl FisherDiag {
    pub fn new(params: ParamSet) -> Result<Self> {
        for (l, layer) in params.layers.iter().enumerate() {
            if let Some((i, &v)) = layer.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
                return Err(Error::BadFisher {
                    value: v,
                    location: format!("layer {l}, flat index {i}"),
                });
            }
        }
        Ok(Self(params))
    }

    pub fn zeros_like(net: &Network) -> Self {
        Self(ParamSet::zeros_like(net))
    }

    pub fn params(&self) -> &ParamSet {
        &self.0
    }

    pub fn into_params(self) -> ParamSet {
        self.0
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.0.layers
    }
}

impl TryFrom<ParamSet> for FisherDiag {
    type Error = Error;

    fn try_from(p: ParamSet) -> Result<Self> {
        Self::new(p)
    }
}

impl From<FisherDiag> for ParamSet {
    fn from(f: FisherDiag) -> Self {
        f.0
    }
}

/// How the expectation over labels is realized for cross-entropy models.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LabelSource {
    /// Gradient at the sample's true label (empirical Fisher).
    #[default]
    TrueLabel,
    /// Label drawn from the model's own output distribution.
    ModelSampled { seed: u64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FisherOptions {
    /// Use only the first `n` samples of the dataset.
    pub max_samples: Option<usize>,
    pub label_source: LabelSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FisherEstimate {
    pub fisher: FisherDiag,
    pub samples_used: usize,
    pub warning: Option<String>,
}

fn loss_mismatch(model: &TrainedModel, expected: LossKind) -> Option<String> {
    let kind = model.meta.as_ref()?.hyper.loss_kind;
    (kind != expected).then(|| format!("model was trained with {kind:?} loss but Fisher assumes {expected:?}"))
}

fn prepare<'a>(data: &'a Dataset, max_samples: Option<usize>, owned: &'a mut Option<Dataset>) -> Result<&'a Dataset> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("Fisher data"));
    }
    Ok(match max_samples {
        Some(n) if n < data.len() => {
            if n == 0 {
                return Err(Error::EmptyDataset("Fisher data"));
            }
            owned.insert(data.truncate(n))
        }
        _ => data,
    })
}

fn label_indices(net: &Network, data: &Dataset) -> Result<Vec<usize>> {
    data.labels()
        .iter()
        .map(|&l| {
            net.class_index(l)
                .ok_or_else(|| Error::Class(format!("label {l} is not an output class of the model")))
        })
        .collect()
}

fn accumulate(acc: &mut ParamSet, sq_deltas: &[Array2<f64>], activations: &[Array2<f64>]) {
    for (l, sq) in sq_deltas.iter().enumerate() {
        let a2 = activations[l].mapv(|v| v * v);
        ndarray::linalg::general_mat_mul(1.0, &sq.t(), &a2, 1.0, &mut acc.layers[l].weights);
        acc.layers[l].bias += &sq.sum_axis(Axis(0));
    }
}

/// Square-loss Hessian diagonal: `F_i = Σ_p Σ_n (∂y_n^p/∂θ_i)²`, a sum over
/// patterns (not a mean).
pub fn fisher_square(model: &TrainedModel, data: &Dataset) -> Result<FisherEstimate> {
    fisher_square_with(model, data, FisherOptions::default())
}

pub fn fisher_square_with(model: &TrainedModel, data: &Dataset, opts: FisherOptions) -> Result<FisherEstimate> {
    let mut owned = None;
    let data = prepare(data, opts.max_samples, &mut owned)?;
    let net = &model.network;
    let k = net.output_width();
    let out_act = net.output_layer().activation;
    let mut acc = ParamSet::zeros_like(net);
    for chunk in data.features().axis_chunks_iter(Axis(0), CHUNK) {
        let trace = forward_batch(net, chunk)?;
        let rows = chunk.nrows();
        let mut sq: Vec<Array2<f64>> = net.layers().iter().map(|l| Array2::zeros((rows, l.out_width()))).collect();
        for n in 0..k {
            let mut seed = Array2::zeros((rows, k));
            seed.column_mut(n).fill(1.0);
            let out_delta = activation_vjp(out_act, trace.output(), seed);
            for (s, d) in sq.iter_mut().zip(backprop_deltas(net, &trace, out_delta)) {
                Zip::from(s).and(&d).for_each(|s, &d| *s += d * d);
            }
        }
        accumulate(&mut acc, &sq, &trace.activations);
    }
    Ok(FisherEstimate {
        fisher: FisherDiag::new(acc)?,
        samples_used: data.len(),
        warning: loss_mismatch(model, LossKind::Square),
    })
}

/// Cross-entropy Fisher diagonal: mean over samples of the squared
/// single-sample loss gradient.
pub fn fisher_xent(model: &TrainedModel, data: &Dataset) -> Result<FisherEstimate> {
    fisher_xent_with(model, data, FisherOptions::default())
}

pub fn fisher_xent_with(model: &TrainedModel, data: &Dataset, opts: FisherOptions) -> Result<FisherEstimate> {
    let mut owned = None;
    let data = prepare(data, opts.max_samples, &mut owned)?;
    let net = &model.network;
    let labels = label_indices(net, data)?;
    let k = net.output_width();
    let out_act = net.output_layer().activation;
    let mut rng = match opts.label_source {
        LabelSource::ModelSampled { seed } => Some(seed::rng(seed)),
        LabelSource::TrueLabel => None,
    };
    let mut acc = ParamSet::zeros_like(net);
    let mut start = 0;
    for chunk in data.features().axis_chunks_iter(Axis(0), CHUNK) {
        let trace = forward_batch(net, chunk)?;
        let out = trace.output();
        let rows = chunk.nrows();
        let mut g = Array2::zeros((rows, k));
        for r in 0..rows {
            let target = match rng.as_mut() {
                None => labels[start + r],
                Some(rng) => sample_class(out.row(r), rng.gen::<f64>()),
            };
            let y = out[[r, target]];
            g[[r, target]] = loss_derivative(y, 1.0, LossKind::CrossEntropy);
        }
        let out_delta = activation_vjp(out_act, out, g);
        let deltas = backprop_deltas(net, &trace, out_delta);
        let sq: Vec<Array2<f64>> = deltas.iter().map(|d| d.mapv(|v| v * v)).collect();
        accumulate(&mut acc, &sq, &trace.activations);
        start += rows;
    }
    acc.scale(1.0 / data.len() as f64);
    Ok(FisherEstimate {
        fisher: FisherDiag::new(acc)?,
        samples_used: data.len(),
        warning: loss_mismatch(model, LossKind::CrossEntropy),
    })
}

/// Inverse-CDF draw from an output row treated as a distribution.
fn sample_class(probs: ndarray::ArrayView1<f64>, u: f64) -> usize {
    let total: f64 = probs.sum();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p / total;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

/// Dispatches on the loss the model was trained with (cross-entropy when
/// unknown).
pub fn fisher_for(model: &TrainedModel, data: &Dataset, opts: FisherOptions) -> Result<FisherEstimate> {
    match model.meta.as_ref().map(|m| m.hyper.loss_kind) {
        Some(LossKind::Square) => fisher_square_with(model, data, opts),
        _ => fisher_xent_with(model, data, opts),
    }
}
