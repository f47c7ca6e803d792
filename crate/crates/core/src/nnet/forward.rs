use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{Activation, Network};
use crate::error::{Error, Result};

/// Post-activation values of every layer for a single input.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `activations[0]` is the input; `activations[l + 1]` is layer `l`'s output.
    pub activations: Vec<Array1<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array1<f64> {
        self.activations.last().expect("trace holds the input at least")
    }
}

/// Batched counterpart of [`ForwardTrace`]; rows are samples.
#[derive(Clone, Debug)]
pub struct BatchTrace {
    pub activations: Vec<Array2<f64>>,
}

impl BatchTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("trace holds the input at least")
    }
}

pub(crate) fn activate_rows(act: Activation, z: &mut Array2<f64>) {
    match act {
        Activation::Identity => {}
        Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        Activation::Sigmoid => z.mapv_inplace(sigmoid),
        Activation::Softmax => {
            for mut row in z.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row /= sum;
            }
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Runs a batch through the network, keeping every layer's output.
pub fn forward_batch(net: &Network, x: ArrayView2<f64>) -> Result<BatchTrace> {
    if x.ncols() != net.input_width() {
        return Err(Error::Dimension {
            expected: net.input_width(),
            actual: x.ncols(),
            context: "input features",
        });
    }
    let mut activations = Vec::with_capacity(net.layers().len() + 1);
    activations.push(x.to_owned());
    for layer in net.layers() {
        let prev = activations.last().expect("non-empty");
        let mut z = prev.dot(&layer.weights.t());
        z += &layer.bias;
        activate_rows(layer.activation, &mut z);
        activations.push(z);
    }
    Ok(BatchTrace { activations })
}

pub fn forward(net: &Network, x: ArrayView1<f64>) -> Result<ForwardTrace> {
    let batch = forward_batch(net, x.insert_axis(Axis(0)))?;
    Ok(ForwardTrace {
        activations: batch
            .activations
            .into_iter()
            .map(|a| a.index_axis_move(Axis(0), 0))
            .collect(),
    })
}

/// Output-unit index of the largest output for each row, ties to the lowest
/// index. Rows are processed in chunks to bound memory.
pub fn predict(net: &Network, x: ArrayView2<f64>) -> Result<Vec<usize>> {
    const CHUNK: usize = 1000;
    let mut out = Vec::with_capacity(x.nrows());
    for chunk in x.axis_chunks_iter(Axis(0), CHUNK) {
        let trace = forward_batch(net, chunk)?;
        out.extend(trace.output().rows().into_iter().map(argmax));
    }
    Ok(out)
}

pub(crate) fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array2};

    use super::*;
    use crate::nnet::{init_network, Architecture, DenseLayer};

    fn zero_net(outputs: usize, act: Activation) -> Network {
        let layer = DenseLayer::new(Array2::zeros((outputs, 3)), Array1::zeros(outputs), act).unwrap();
        Network::new(vec![layer], (0..outputs as u32).collect()).unwrap()
    }

    #[test]
    fn zero_sigmoid_gives_half() {
        let net = zero_net(4, Activation::Sigmoid);
        let t = forward(&net, array![0.3, -2.0, 7.0].view()).unwrap();
        assert!(t.output().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn zero_softmax_gives_uniform() {
        let net = zero_net(5, Activation::Softmax);
        let t = forward(&net, array![1.0, 2.0, 3.0].view()).unwrap();
        assert!(t.output().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn single_relu_unit() {
        let layer = DenseLayer::new(array![[1.0, -1.0]], array![0.0], Activation::Relu).unwrap();
        let net = Network::new(vec![layer], vec![0]).unwrap();
        let t = forward(&net, array![2.0, 1.0].view()).unwrap();
        assert_eq!(t.output()[0], 1.0);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let net = zero_net(2, Activation::Sigmoid);
        assert!(matches!(
            forward(&net, array![1.0, 2.0].view()),
            Err(Error::Dimension { expected: 3, actual: 2, .. })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let arch = Architecture::mlp(4, &[6], 7, Activation::Softmax);
        let mut net = init_network(&arch, (0..7).collect(), 3).unwrap();
        // Large weights stress the max-shift.
        net.apply_update(|_, l| l.weights *= 200.0);
        let x = Array2::from_shape_fn((50, 4), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 3.0 - 1.5);
        let t = forward_batch(&net, x.view()).unwrap();
        for row in t.output().rows() {
            assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(array![0.2, 0.5, 0.5, 0.1].view()), 1);
        assert_eq!(argmax(array![1.0, 1.0].view()), 0);
    }
}
