//! Minimal dense feedforward network.
//!
//! Weights are stored `out_width × in_width`, so a layer computes
//! `act(W·x + b)`. Biases are treated as weights on a constant input of 1
//! everywhere: in training, in Fisher computation and in fusion.

mod backward;
mod forward;
mod loss;
mod params;
mod train;

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{seed, ClassLabel};

pub use backward::{backward, backward_batch, per_output_gradients, Gradients};
pub use forward::{forward, forward_batch, predict, BatchTrace, ForwardTrace};
pub use loss::{loss, loss_gradient, LossKind, LOG_FLOOR};
pub use params::{LayerParams, ParamSet};
pub use train::{accuracy, train, EpochStats, TrainHyper, TrainRecord, TrainedModel};

pub(crate) use backward::{activation_vjp, backprop_deltas};
pub(crate) use loss::loss_derivative;

/// Standard deviation of the zero-mean normal used for weight initialization.
pub const INIT_STD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
            Activation::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "softmax" => Ok(Activation::Softmax),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Architecture(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::Shape(format!(
                "weights have {} rows but bias has {} entries",
                weights.nrows(),
                bias.len()
            )));
        }
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::Architecture("layer with zero width".into()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_width(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_width(&self) -> usize {
        self.weights.nrows()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }
}

/// Layered dense classifier. The last layer has one unit per entry of
/// `class_labels`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
    class_labels: Vec<ClassLabel>,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>, class_labels: Vec<ClassLabel>) -> Result<Self> {
        let net = Self {
            layers,
            class_labels,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return Err(Error::Architecture("network has no layers".into()));
        };
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[1].in_width() != pair[0].out_width() {
                return Err(Error::Architecture(format!(
                    "layer {} expects {} inputs but layer {} emits {}",
                    i + 1,
                    pair[1].in_width(),
                    i,
                    pair[0].out_width()
                )));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.activation == Activation::Softmax && i + 1 != self.layers.len() {
                return Err(Error::Architecture(format!(
                    "softmax is only allowed on the output layer (found on layer {i})"
                )));
            }
            if l.weights.nrows() != l.bias.len() {
                return Err(Error::Shape(format!("layer {i}: weight rows != bias length")));
            }
            if !l.params().all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} holds a non-finite parameter"
                )));
            }
        }
        if last.out_width() != self.class_labels.len() {
            return Err(Error::Architecture(format!(
                "output width {} does not match {} class labels",
                last.out_width(),
                self.class_labels.len()
            )));
        }
        let distinct: BTreeSet<_> = self.class_labels.iter().collect();
        if distinct.len() != self.class_labels.len() {
            return Err(Error::Architecture("class labels are not distinct".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn class_labels(&self) -> &[ClassLabel] {
        &self.class_labels
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn output_width(&self) -> usize {
        self.class_labels.len()
    }

    /// Number of hidden layers (all layers but the output one).
    pub fn hidden_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.hidden_count()]
            .iter()
            .map(DenseLayer::out_width)
            .collect()
    }

    pub fn output_layer(&self) -> &DenseLayer {
        self.layers.last().expect("validated non-empty")
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_width: self.input_width(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerSpec {
                    width: l.out_width(),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn class_index(&self, label: ClassLabel) -> Option<usize> {
        self.class_labels.iter().position(|&c| c == label)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn into_parts(self) -> (Vec<DenseLayer>, Vec<ClassLabel>) {
        (self.layers, self.class_labels)
    }

    /// Overwrites every parameter from a shape-parallel set.
    pub fn set_params(&mut self, params: &ParamSet) -> Result<()> {
        params.check_parallel(self, "parameter set")?;
        for (l, p) in self.layers.iter_mut().zip(&params.layers) {
            l.weights.assign(&p.weights);
            l.bias.assign(&p.bias);
        }
        Ok(())
    }

    pub(crate) fn apply_update(&mut self, mut f: impl FnMut(usize, &mut DenseLayer)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(i, l);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

/// Layer widths and activations, input side first. The last entry is the
/// output layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_width: usize,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// `hidden` relu layers of the given widths followed by an output layer.
    pub fn mlp(input_width: usize, hidden: &[usize], outputs: usize, output: Activation) -> Self {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&width| LayerSpec {
                width,
                activation: Activation::Relu,
            })
            .collect();
        layers.push(LayerSpec {
            width: outputs,
            activation: output,
        });
        Self {
            input_width,
            layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 {
            return Err(Error::Architecture("input width must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Architecture("at least one layer is required".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.width == 0 {
                return Err(Error::Architecture(format!("layer {i} has zero width")));
            }
            if l.activation == Activation::Softmax && i + 1 != self.layers.len() {
                return Err(Error::Architecture(format!(
                    "softmax is only allowed on the output layer (found on layer {i})"
                )));
            }
        }
        Ok(())
    }
}

/// Builds a network with weights drawn i.i.d. from N(0, [`INIT_STD`]²) and
/// zero biases. Identical seeds give bit-identical networks.
pub fn init_network(arch: &Architecture, class_labels: Vec<ClassLabel>, seed: u64) -> Result<Network> {
    arch.validate()?;
    let mut rng = seed::rng(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("positive std");
    let mut in_width = arch.input_width;
    let mut layers = Vec::with_capacity(arch.layers.len());
    for spec in &arch.layers {
        let weights = Array2::from_shape_simple_fn((spec.width, in_width), || normal.sample(&mut rng));
        layers.push(DenseLayer::new(weights, Array1::zeros(spec.width), spec.activation)?);
        in_width = spec.width;
    }
    Network::new(layers, class_labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> Architecture {
        Architecture {
            input_width: 2,
            layers: vec![
                LayerSpec {
                    width: 3,
                    activation: Activation::Relu,
                },
                LayerSpec {
                    width: 2,
                    activation: Activation::Softmax,
                },
            ],
        }
    }

    #[test]
    fn init_shapes_and_zero_bias() {
        let net = init_network(&small_arch(), vec![0, 1], 1).unwrap();
        assert_eq!(net.layers()[0].weights.dim(), (3, 2));
        assert_eq!(net.layers()[1].weights.dim(), (2, 3));
        assert!(net.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_network(&small_arch(), vec![0, 1], 42).unwrap();
        let b = init_network(&small_arch(), vec![0, 1], 42).unwrap();
        let c = init_network(&small_arch(), vec![0, 1], 43).unwrap();
        let bits = |n: &Network| -> Vec<u64> {
            n.layers().iter().flat_map(|l| l.params().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn init_std_matches() {
        // 1000 x 1000 = 1e6 weights; the sample std has standard error
        // 0.05 / sqrt(2e6) ~ 3.5e-5, far inside the 1e-3 band.
        let arch = Architecture::mlp(1000, &[], 1000, Activation::Identity);
        let net = init_network(&arch, (0..1000).collect(), 5).unwrap();
        let w = &net.layers()[0].weights;
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - INIT_STD).abs() <= 1e-3, "std {}", var.sqrt());
    }

    #[test]
    fn rejects_bad_architectures() {
        let mut arch = small_arch();
        arch.layers[0].activation = Activation::Softmax;
        assert!(matches!(init_network(&arch, vec![0, 1], 0), Err(Error::Architecture(_))));

        let mut arch = small_arch();
        arch.layers[0].width = 0;
        assert!(matches!(init_network(&arch, vec![0, 1], 0), Err(Error::Architecture(_))));

        assert!(init_network(&small_arch(), vec![0, 1, 2], 0).is_err());
        assert!(init_network(&small_arch(), vec![4, 4], 0).is_err());
    }
}
