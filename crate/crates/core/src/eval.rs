//! Accuracy, confusion matrices and run aggregation.

use std::collections::BTreeSet;

use ndarray::{Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nnet::{forward_batch, Network};
use crate::ClassLabel;

/// Rows are true classes, columns predicted classes, both in `classes` order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<ClassLabel>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<ClassLabel>) -> Self {
        let k = classes.len();
        Self {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Fraction in `[0, 1]`.
    pub accuracy: f64,
    pub correct: u64,
    pub total: u64,
    pub confusion: ConfusionMatrix,
    pub tie_break: String,
}

/// Argmax prediction over the model's outputs; ties go to the lowest output
/// index.
pub fn evaluate(net: &Network, test: &Dataset) -> Result<Evaluation> {
    let all: Vec<usize> = (0..net.output_width()).collect();
    evaluate_units(net, test, &all)
}

/// Evaluates only on samples of `classes`, with the argmax restricted to the
/// output units of those classes.
pub fn evaluate_restricted(net: &Network, test: &Dataset, classes: &BTreeSet<ClassLabel>) -> Result<Evaluation> {
    let units: Vec<usize> = classes
        .iter()
        .map(|&c| {
            net.class_index(c)
                .ok_or_else(|| Error::Class(format!("class {c} is not an output of the model")))
        })
        .collect::<Result<_>>()?;
    let mut units = units;
    units.sort_unstable();
    evaluate_units(net, &test.restrict_to(classes), &units)
}

fn evaluate_units(net: &Network, test: &Dataset, units: &[usize]) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::EmptyDataset("test set"));
    }
    let classes: Vec<ClassLabel> = units.iter().map(|&u| net.class_labels()[u]).collect();
    let row_of = |label: ClassLabel| classes.iter().position(|&c| c == label);
    if let Some(c) = test.class_set().iter().find(|&&c| row_of(c).is_none()) {
        return Err(Error::Class(format!("test class {c} is not an output class of the model")));
    }

    let mut confusion = ConfusionMatrix::new(classes.clone());
    const CHUNK: usize = 1000;
    let mut offset = 0;
    for chunk in test.features().axis_chunks_iter(Axis(0), CHUNK) {
        let trace = forward_batch(net, chunk)?;
        for (r, row) in trace.output().axis_iter(Axis(0)).enumerate() {
            let mut best = 0;
            for (j, &u) in units.iter().enumerate() {
                if row[u] > row[units[best]] {
                    best = j;
                }
            }
            let truth = row_of(test.labels()[offset + r]).expect("checked");
            confusion.counts[truth][best] += 1;
        }
        offset += chunk.nrows();
    }
    let (correct, total) = (confusion.trace(), confusion.total());
    Ok(Evaluation {
        accuracy: correct as f64 / total as f64,
        correct,
        total,
        confusion,
        tie_break: "lowest_index".into(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
    pub runs: usize,
}

pub fn aggregate(runs: &[f64]) -> Result<Aggregate> {
    if runs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "aggregation needs at least 2 runs, got {}",
            runs.len()
        )));
    }
    let n = runs.len() as f64;
    let mean = runs.iter().sum::<f64>() / n;
    let var = runs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Aggregate {
        mean,
        std: var.sqrt(),
        runs: runs.len(),
    })
}

/// Element-wise maximum absolute difference between two networks' outputs on
/// a batch; handy for invariance checks.
pub fn max_output_difference(a: &Network, b: &Network, x: ndarray::ArrayView2<f64>) -> Result<f64> {
    let (ya, yb) = (forward_batch(a, x)?, forward_batch(b, x)?);
    let mut worst = 0.0f64;
    Zip::from(ya.output())
        .and(yb.output())
        .for_each(|p, q| worst = worst.max((p - q).abs()));
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array1, Array2};

    use super::*;
    use crate::nnet::{Activation, DenseLayer};

    /// Copies the one-hot input to the output, so it always predicts the truth.
    fn oracle_net() -> (Network, Dataset) {
        let layer = DenseLayer::new(Array2::eye(3), Array1::zeros(3), Activation::Identity).unwrap();
        let net = Network::new(vec![layer], vec![10, 20, 30]).unwrap();
        let features = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let data = Dataset::new(features, vec![10, 20, 30, 20]).unwrap();
        (net, data)
    }

    #[test]
    fn perfect_model() {
        let (net, data) = oracle_net();
        let e = evaluate(&net, &data).unwrap();
        assert_eq!(e.accuracy, 1.0);
        assert_eq!(e.confusion.counts, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        assert_eq!(e.confusion.row_sums(), vec![1, 2, 1]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let (net, _) = oracle_net();
        let data = Dataset::new(array![[0.0, 0.0, 0.0]], vec![30]).unwrap();
        let e = evaluate(&net, &data).unwrap();
        assert_eq!(e.confusion.counts[2], vec![1, 0, 0]);
    }

    #[test]
    fn unknown_class_rejected() {
        let (net, _) = oracle_net();
        let data = Dataset::new(array![[1.0, 0.0, 0.0]], vec![40]).unwrap();
        assert!(matches!(evaluate(&net, &data), Err(Error::Class(_))));
    }

    #[test]
    fn restricted_ignores_other_outputs() {
        let (net, data) = oracle_net();
        let e = evaluate_restricted(&net, &data, &[10, 30].into()).unwrap();
        assert_eq!(e.total, 2);
        assert_eq!(e.confusion.classes, vec![10, 30]);
        assert_eq!(e.accuracy, 1.0);
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!((a.mean, a.std), (0.5, 0.0));
        let a = aggregate(&[0.0, 1.0]).unwrap();
        assert_eq!(a.mean, 0.5);
        assert!((a.std - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(aggregate(&[0.3]).is_err());
        let x = aggregate(&[0.1, 0.7, 0.4, 0.2]).unwrap();
        let y = aggregate(&[0.4, 0.2, 0.7, 0.1]).unwrap();
        assert!((x.mean - y.mean).abs() < 1e-15 && (x.std - y.std).abs() < 1e-15);
    }
}
