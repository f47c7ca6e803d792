use ndarray::{Array1, Array2, Zip};
use super::Network;
use crate::error::{Error, Result};

/// Weight matrix and bias vector of one layer, or any per-parameter quantity
/// laid out the same way (gradients, Adam moments, Fisher values).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerParams {
    pub fn zeros(out_width: usize, in_width: usize) -> Self {
        Self {
            weights: Array2::zeros((out_width, in_width)),
            bias: Array1::zeros(out_width),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weights.dim()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }
}

/// Per-layer parameter-shaped values, parallel to a [`Network`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<LayerParams>,
}

impl ParamSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerParams::zeros(l.out_width(), l.in_width()))
                .collect(),
        }
    }

    /// Copies the weights and biases out of a network.
    pub fn from_network(net: &Network) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerParams {
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.iter())
    }

    pub fn is_parallel_to(&self, net: &Network) -> bool {
        self.layers.len() == net.layers().len()
            && self
                .layers
                .iter()
                .zip(net.layers())
                .all(|(p, l)| p.weights.dim() == l.weights.dim() && p.bias.len() == l.bias.len())
    }

    pub fn check_parallel(&self, net: &Network, what: &str) -> Result<()> {
        if self.is_parallel_to(net) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what} is not shape-parallel to the network"
            )))
        }
    }

    /// `self += alpha * other`, element-wise.
    pub fn scaled_add(&mut self, alpha: f64, other: &ParamSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(alpha, &b.weights);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weights *= alpha;
            l.bias *= alpha;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> ParamSet {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: l.weights.mapv(f),
                    bias: l.bias.mapv(f),
                })
                .collect(),
        }
    }

    /// Largest element-wise `|a-b| / max(|a|, |b|, floor)`.
    pub fn max_relative_diff(&self, other: &ParamSet, floor: f64) -> f64 {
        let mut worst = 0.0f64;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            Zip::from(&a.weights).and(&b.weights).for_each(|&x, &y| {
                worst = worst.max((x - y).abs() / x.abs().max(y.abs()).max(floor));
            });
            Zip::from(&a.bias).and(&b.bias).for_each(|&x, &y| {
                worst = worst.max((x - y).abs() / x.abs().max(y.abs()).max(floor));
            });
        }
        worst
    }
}
