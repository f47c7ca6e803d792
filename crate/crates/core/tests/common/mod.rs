//! Helpers shared by the integration and acceptance tests: random networks,
//! finite-difference oracles and brute-force references.

#![allow(dead_code)]

pub mod props;

use knowfuse::align::pair_term;
use knowfuse::data::Dataset;
use knowfuse::fisher::{fisher_square, fisher_xent};
use knowfuse::nnet::{
    backward, forward, loss, per_output_gradients, Activation, DenseLayer, LossKind, Network, ParamSet, TrainedModel,
};
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense network with N(0, std²) weights and biases.
pub fn random_net(rng: &mut ChaCha8Rng, input: usize, layers: &[(usize, Activation)], std: f64) -> Network {
    let normal = Normal::new(0.0, std).unwrap();
    let mut width = input;
    let mut dense = Vec::new();
    for &(out, act) in layers {
        let w = Array2::from_shape_fn((out, width), |_| normal.sample(rng));
        let b = Array1::from_shape_fn(out, |_| normal.sample(rng));
        dense.push(DenseLayer::new(w, b, act).unwrap());
        width = out;
    }
    Network::new(dense, (0..width as u32).collect()).unwrap()
}

pub fn random_inputs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.gen::<f64>())
}

pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: u32) -> Dataset {
    let x = random_inputs(rng, n, d);
    let labels = (0..n).map(|i| if (i as u32) < classes { i as u32 } else { rng.gen_range(0..classes) }).collect();
    Dataset::new(x, labels).unwrap()
}

pub fn one_hot(k: usize, i: usize) -> Array1<f64> {
    let mut t = Array1::zeros(k);
    t[i] = 1.0;
    t
}

/// Largest `|a-b| / max(|a|, |b|, floor)` over all parameters.
pub fn rel_err(a: &ParamSet, b: &ParamSet, floor: f64) -> f64 {
    a.max_relative_diff(b, floor)
}

/// Central differences of `f(θ)` with respect to every parameter.
pub fn finite_difference(net: &Network, h: f64, mut f: impl FnMut(&Network) -> f64) -> ParamSet {
    let base = ParamSet::from_network(net);
    let mut grad = ParamSet::zeros_like(net);
    let mut probe = net.clone();
    let mut eval = |params: &ParamSet, probe: &mut Network| {
        probe.set_params(params).unwrap();
        f(probe)
    };
    for l in 0..base.layers.len() {
        let (rows, cols) = base.layers[l].weights.dim();
        for r in 0..rows {
            for c in 0..cols {
                let mut p = base.clone();
                p.layers[l].weights[[r, c]] += h;
                let up = eval(&p, &mut probe);
                p.layers[l].weights[[r, c]] -= 2.0 * h;
                let down = eval(&p, &mut probe);
                grad.layers[l].weights[[r, c]] = (up - down) / (2.0 * h);
            }
        }
        for r in 0..rows {
            let mut p = base.clone();
            p.layers[l].bias[r] += h;
            let up = eval(&p, &mut probe);
            p.layers[l].bias[r] -= 2.0 * h;
            let down = eval(&p, &mut probe);
            grad.layers[l].bias[r] = (up - down) / (2.0 * h);
        }
    }
    grad
}

pub const FD_STEP: f64 = 1e-5;
/// Gradient entries below this magnitude are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

/// The architectures and losses cycled through by the gradient oracles.
pub fn oracle_case(index: u64) -> (Vec<(usize, Activation)>, LossKind) {
    use Activation::*;
    match index % 5 {
        0 => (vec![(5, Relu), (4, Relu), (3, Softmax)], LossKind::CrossEntropy),
        1 => (vec![(6, Sigmoid), (3, Sigmoid)], LossKind::Square),
        2 => (vec![(4, Identity), (2, Identity)], LossKind::Square),
        3 => (vec![(5, Relu), (4, Sigmoid)], LossKind::CrossEntropy),
        _ => (vec![(3, Sigmoid), (4, Relu), (3, Softmax)], LossKind::Square),
    }
}

/// Backprop against central differences of the loss for one random case.
/// Returns the largest relative error.
pub fn backprop_oracle(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (layers, kind) = oracle_case(seed);
    let input = 3 + (seed % 3) as usize;
    let net = random_net(&mut r, input, &layers, 0.8);
    let x = random_inputs(&mut r, 1, input).row(0).to_owned();
    let k = net.output_width();
    let target = one_hot(k, r.gen_range(0..k));
    let exact = backward(&net, x.view(), target.view(), kind).unwrap();
    let fd = finite_difference(&net, FD_STEP, |n| {
        let y = forward(n, x.view()).unwrap();
        loss(y.output().view(), target.view(), kind).unwrap()
    });
    rel_err(&exact, &fd, FD_FLOOR)
}

/// `∂y_n/∂θ` from the per-output backward mode against central differences.
pub fn per_output_oracle(seed: u64) -> f64 {
    let mut r = rng(seed ^ 0x5eed);
    let (layers, _) = oracle_case(seed);
    let input = 3 + (seed % 4) as usize;
    let net = random_net(&mut r, input, &layers, 0.8);
    let x = random_inputs(&mut r, 1, input).row(0).to_owned();
    let exact = per_output_gradients(&net, x.view()).unwrap();
    exact
        .iter()
        .enumerate()
        .map(|(n, g)| {
            let fd = finite_difference(&net, FD_STEP, |m| forward(m, x.view()).unwrap().output()[n]);
            rel_err(g, &fd, FD_FLOOR)
        })
        .fold(0.0, f64::max)
}

/// Square-loss Fisher against `Σ_p Σ_n (∂y_n/∂θ)²` with finite-difference
/// derivatives.
pub fn fisher_square_oracle(seed: u64) -> f64 {
    let mut r = rng(seed ^ 0xf15e);
    let layers = vec![(4, Activation::Sigmoid), (3, Activation::Sigmoid)];
    let net = random_net(&mut r, 3, &layers, 0.8);
    let data = random_dataset(&mut r, 6, 3, 3);
    let model = TrainedModel::untrained(net.clone());
    let exact = fisher_square(&model, &data).unwrap().fisher.into_params();
    let mut oracle = ParamSet::zeros_like(&net);
    for p in 0..data.len() {
        let x = data.sample(p).0.to_owned();
        for n in 0..net.output_width() {
            let fd = finite_difference(&net, FD_STEP, |m| forward(m, x.view()).unwrap().output()[n]);
            oracle.scaled_add(1.0, &fd.map(|v| v * v));
        }
    }
    rel_err(&exact, &oracle, FD_FLOOR * FD_FLOOR)
}

/// Cross-entropy Fisher against the mean of squared single-sample gradients.
pub fn fisher_xent_oracle(seed: u64) -> f64 {
    let mut r = rng(seed ^ 0xce);
    let layers = vec![(5, Activation::Relu), (3, Activation::Softmax)];
    let net = random_net(&mut r, 4, &layers, 0.8);
    let data = random_dataset(&mut r, 9, 4, 3);
    let exact = fisher_xent(&TrainedModel::untrained(net.clone()), &data)
        .unwrap()
        .fisher
        .into_params();
    let mut oracle = ParamSet::zeros_like(&net);
    for p in 0..data.len() {
        let (x, label) = data.sample(p);
        let t = one_hot(3, label as usize);
        let g = backward(&net, x, t.view(), LossKind::CrossEntropy).unwrap();
        oracle.scaled_add(1.0 / data.len() as f64, &g.map(|v| v * v));
    }
    rel_err(&exact, &oracle, 1e-300)
}

/// Pairing-cost closed form against the loss of the Fisher-weighted mean,
/// `F_A (θ_F − θ_A)² + F_B (θ_F − θ_B)²`, over random draws.
pub fn pair_cost_oracle(seed: u64, draws: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let fa: f64 = r.gen_range(1e-6..10.0);
        let fb: f64 = r.gen_range(1e-6..10.0);
        let ta: f64 = r.gen_range(-2.0..2.0);
        let tb: f64 = r.gen_range(-2.0..2.0);
        let tf = (fa * ta + fb * tb) / (fa + fb);
        let middle = fa * (tf - ta).powi(2) + fb * (tf - tb).powi(2);
        let closed = pair_term(fa, fb, ta, tb);
        worst = worst.max((middle - closed).abs() / middle.abs().max(closed.abs()).max(1e-300));
    }
    worst
}

/// Minimum-cost permutation by exhaustive search (Heap's algorithm).
pub fn brute_force_assignment(cost: &Array2<f64>) -> f64 {
    let n = cost.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    let total = |p: &[usize]| p.iter().enumerate().map(|(k, &l)| cost[[k, l]]).sum::<f64>();
    let mut best = total(&perm);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(total(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

pub fn random_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn max_abs_diff(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
