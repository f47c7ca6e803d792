use ndarray::{Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::forward::{forward_batch, BatchTrace};
use super::loss::{loss, loss_derivative, LossKind};
use super::{Activation, LayerParams, Network, ParamSet};
use crate::error::{Error, Result};

/// Gradient of a scalar with respect to every weight and bias.
pub type Gradients = ParamSet;

/// Vector-Jacobian product of an activation: maps `∂·/∂y` to `∂·/∂z`
/// given the activation output `y`.
pub(crate) fn activation_vjp(act: Activation, y: &Array2<f64>, mut g: Array2<f64>) -> Array2<f64> {
    match act {
        Activation::Identity => {}
        // relu'(0) = 0; y > 0 exactly when z > 0.
        Activation::Relu => Zip::from(&mut g).and(y).for_each(|g, &y| {
            if y <= 0.0 {
                *g = 0.0
            }
        }),
        Activation::Sigmoid => Zip::from(&mut g).and(y).for_each(|g, &y| *g *= y * (1.0 - y)),
        Activation::Softmax => {
            for (mut g_row, y_row) in g.rows_mut().into_iter().zip(y.rows()) {
                let dot = g_row.dot(&y_row);
                Zip::from(&mut g_row).and(&y_row).for_each(|g, &y| *g = y * (*g - dot));
            }
        }
    }
    g
}

/// Propagates `∂·/∂z` of the output layer down the stack. Entry `l` of the
/// result is the derivative with respect to layer `l`'s pre-activation.
pub(crate) fn backprop_deltas(net: &Network, trace: &BatchTrace, out_delta: Array2<f64>) -> Vec<Array2<f64>> {
    let layers = net.layers();
    let mut deltas = Vec::with_capacity(layers.len());
    deltas.push(out_delta);
    for l in (0..layers.len() - 1).rev() {
        let upstream = deltas.last().expect("non-empty").dot(&layers[l + 1].weights);
        deltas.push(activation_vjp(layers[l].activation, &trace.activations[l + 1], upstream));
    }
    deltas.reverse();
    deltas
}

fn gradients_from_deltas(trace: &BatchTrace, deltas: &[Array2<f64>]) -> Gradients {
    ParamSet {
        layers: deltas
            .iter()
            .enumerate()
            .map(|(l, d)| LayerParams {
                weights: d.t().dot(&trace.activations[l]),
                bias: d.sum_axis(Axis(0)),
            })
            .collect(),
    }
}

/// Gradient of the batch-mean loss. Returns `(mean loss, gradients)`.
pub fn backward_batch(
    net: &Network,
    x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    kind: LossKind,
) -> Result<(f64, Gradients)> {
    if targets.dim() != (x.nrows(), net.output_width()) {
        return Err(Error::Shape(format!(
            "targets are {:?}, expected ({}, {})",
            targets.dim(),
            x.nrows(),
            net.output_width()
        )));
    }
    let trace = forward_batch(net, x)?;
    backward_from_trace(net, &trace, targets, kind)
}

pub(crate) fn backward_from_trace(
    net: &Network,
    trace: &BatchTrace,
    targets: ArrayView2<f64>,
    kind: LossKind,
) -> Result<(f64, Gradients)> {
    let out = trace.output();
    let n = out.nrows() as f64;
    let mut total = 0.0;
    for (y, t) in out.rows().into_iter().zip(targets.rows()) {
        total += loss(y, t, kind)?;
    }
    let mut g = Array2::zeros(out.dim());
    Zip::from(&mut g)
        .and(out)
        .and(targets)
        .for_each(|g, &y, &t| *g = loss_derivative(y, t, kind) / n);
    let out_delta = activation_vjp(net.output_layer().activation, out, g);
    let deltas = backprop_deltas(net, trace, out_delta);
    Ok((total / n, gradients_from_deltas(trace, &deltas)))
}

/// Exact gradient of the single-sample loss.
pub fn backward(net: &Network, x: ArrayView1<f64>, target: ArrayView1<f64>, kind: LossKind) -> Result<Gradients> {
    if target.len() != net.output_width() {
        return Err(Error::Dimension {
            expected: net.output_width(),
            actual: target.len(),
            context: "target",
        });
    }
    let (_, g) = backward_batch(net, x.insert_axis(Axis(0)), target.insert_axis(Axis(0)), kind)?;
    Ok(g)
}

/// `∂y_n/∂θ` for every output unit `n`, one gradient structure per unit.
pub fn per_output_gradients(net: &Network, x: ArrayView1<f64>) -> Result<Vec<Gradients>> {
    let trace = forward_batch(net, x.insert_axis(Axis(0)))?;
    let out = trace.output();
    let k = net.output_width();
    Ok((0..k)
        .map(|n| {
            let mut seed = Array2::zeros((1, k));
            seed[[0, n]] = 1.0;
            let delta = activation_vjp(net.output_layer().activation, out, seed);
            gradients_from_deltas(&trace, &backprop_deltas(net, &trace, delta))
        })
        .collect())
}
