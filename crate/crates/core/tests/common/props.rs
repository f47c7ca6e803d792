//! Property checks shared by the property suite and the acceptance run.

use std::collections::BTreeSet;

use knowfuse::align::permute_hidden;
use knowfuse::data::{holdout, load_mnist_idx, split_by_class, write_idx_images, write_idx_labels, Dataset};
use knowfuse::eval::evaluate;
use knowfuse::fisher::FisherDiag;
use knowfuse::modelfile::{from_json, to_json};
use knowfuse::nnet::{forward_batch, Activation, Network, ParamSet, TrainedModel};
use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;

pub type Arch = (usize, Vec<(usize, Activation)>);

pub fn hidden_acts() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Relu), Just(Activation::Sigmoid), Just(Activation::Identity)]
}

pub fn out_acts() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Softmax), Just(Activation::Sigmoid), Just(Activation::Identity)]
}

/// Input width and layer list with 1 to 3 hidden layers.
pub fn architectures() -> impl Strategy<Value = Arch> {
    (
        1usize..6,
        prop::collection::vec((1usize..7, hidden_acts()), 1..4),
        (1usize..5, out_acts()),
    )
        .prop_map(|(input, mut hidden, out)| {
            hidden.push(out);
            (input, hidden)
        })
}

pub fn random_fisher(rng: &mut ChaCha8Rng, net: &Network) -> FisherDiag {
    let mut f = ParamSet::zeros_like(net);
    for l in &mut f.layers {
        l.weights.mapv_inplace(|_| rng.gen_range(0.0..2.0));
        l.bias.mapv_inplace(|_| rng.gen_range(0.0..2.0));
    }
    FisherDiag::new(f).unwrap()
}

pub fn check_permutation_invariance((input, layers): Arch, seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let net = random_net(&mut r, input, &layers, 0.7);
    let x = random_inputs(&mut r, 8, input);
    let mut permuted = net.clone();
    for (layer, width) in net.hidden_widths().into_iter().enumerate() {
        permuted = permute_hidden(&permuted, layer, &random_permutation(&mut r, width)).unwrap();
    }
    let y0 = forward_batch(&net, x.view()).unwrap();
    let y1 = forward_batch(&permuted, x.view()).unwrap();
    let diff = (y0.output() - y1.output()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    prop_assert!(diff <= 1e-12, "outputs differ by {diff:e}");
    Ok(())
}

pub fn check_model_file_round_trip((input, layers): Arch, seed: u64, with_fisher: bool) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let net = random_net(&mut r, input, &layers, 0.7);
    let mut model = TrainedModel::untrained(net.clone());
    if with_fisher {
        model = model.with_fisher(random_fisher(&mut r, &net)).unwrap();
    }
    let json = to_json(&model).unwrap();
    let back = from_json(&json).unwrap();
    prop_assert_eq!(back.network.architecture(), net.architecture());
    prop_assert_eq!(back.network.class_labels(), net.class_labels());
    prop_assert_eq!(back.fisher.is_some(), with_fisher);
    let x = random_inputs(&mut r, 8, input);
    let y0 = forward_batch(&net, x.view()).unwrap();
    let y1 = forward_batch(&back.network, x.view()).unwrap();
    for (a, b) in y0.output().iter().zip(y1.output()) {
        prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0), "{} vs {}", a, b);
    }
    // Once stored values are float32, a second round trip is exact.
    let again = to_json(&back).unwrap();
    prop_assert_eq!(&again, &to_json(&from_json(&again).unwrap()).unwrap());
    Ok(())
}

pub fn check_idx_round_trip(rows: usize, cols: usize, n: usize, seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let x = Array2::from_shape_fn((n, rows * cols), |_| r.gen_range(0u8..=255) as f64 / 255.0);
    let labels: Vec<u32> = (0..n).map(|_| r.gen_range(0..10)).collect();
    let d = Dataset::new(x, labels).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    write_idx_images(&img, &d, rows, cols).unwrap();
    write_idx_labels(&lab, &d).unwrap();
    let back = load_mnist_idx(&img, &lab).unwrap();
    prop_assert_eq!(back.labels(), d.labels());
    prop_assert_eq!(back.features(), d.features());
    Ok(())
}

pub fn check_partitions(n: usize, classes: u32, val: usize, seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let d = random_dataset(&mut r, n, 3, classes);
    let all: Vec<u32> = d.class_set().iter().copied().collect();
    let cut = 1 + (seed as usize % (all.len() - 1));
    let a: BTreeSet<u32> = all[..cut].iter().copied().collect();
    let (da, db) = split_by_class(&d, &a).unwrap();
    prop_assert_eq!(da.len() + db.len(), d.len());
    prop_assert!(da.labels().iter().all(|l| a.contains(l)));
    prop_assert!(db.labels().iter().all(|l| !a.contains(l)));
    let (tr, va) = holdout(&d, val, seed).unwrap();
    prop_assert_eq!(va.len(), val);
    prop_assert_eq!(tr.len() + va.len(), d.len());
    let mut counts = tr.class_counts();
    for (c, k) in va.class_counts() {
        *counts.entry(c).or_default() += k;
    }
    prop_assert_eq!(counts, d.class_counts());
    Ok(())
}

pub fn check_confusion_rows((input, layers): Arch, n: usize, seed: u64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let net = random_net(&mut r, input, &layers, 1.0);
    let k = net.output_width() as u32;
    let d = random_dataset(&mut r, n, input, k);
    let ev = evaluate(&net, &d).unwrap();
    let counts = d.class_counts();
    for (label, row_sum) in ev.confusion.classes.iter().zip(ev.confusion.row_sums()) {
        prop_assert_eq!(row_sum as usize, counts.get(label).copied().unwrap_or(0));
    }
    prop_assert_eq!(ev.confusion.total() as usize, n);
    prop_assert_eq!(ev.accuracy, ev.confusion.trace() as f64 / n as f64);
    Ok(())
}

pub const CASES: u32 = 128;

/// Runs `check` on `CASES` generated inputs with a fixed-seed runner.
pub fn run_cases<S: Strategy>(
    strategy: S,
    check: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<u32, String> {
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases: CASES,
            failure_persistence: None,
            ..Config::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    runner.run(&strategy, check).map(|_| CASES).map_err(|e| e.to_string())
}
