use std::collections::BTreeSet;

use ndarray::{Array2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::backward::backward_from_trace;
use super::forward::{forward_batch, predict};
use super::{LossKind, Network, ParamSet};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fisher::FisherDiag;
use crate::seed;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub patience: usize,
    pub loss_kind: LossKind,
    /// Coefficient of the `(l2/2)·Σw²` penalty on weights (biases excluded).
    pub l2_coeff: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 200,
            max_epochs: 50,
            patience: 5,
            loss_kind: LossKind::CrossEntropy,
            l2_coeff: 0.0,
            seed: 0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        if !(self.l2_coeff >= 0.0) {
            return Err(Error::InvalidArgument("l2_coeff must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub hyper: TrainHyper,
    pub final_train_accuracy: f64,
    pub final_val_accuracy: f64,
    /// 1-based epoch whose snapshot was kept.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub history: Vec<EpochStats>,
}

/// A network together with what was learned about it during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub network: Network,
    pub fisher: Option<FisherDiag>,
    pub meta: Option<TrainRecord>,
}

impl TrainedModel {
    pub fn untrained(network: Network) -> Self {
        Self {
            network,
            fisher: None,
            meta: None,
        }
    }

    pub fn with_fisher(mut self, fisher: FisherDiag) -> Result<Self> {
        fisher.params().check_parallel(&self.network, "Fisher diagonal")?;
        self.fisher = Some(fisher);
        Ok(self)
    }
}

/// Fraction of samples whose argmax output is the true label.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("accuracy"));
    }
    let pred = predict(net, data.features().view())?;
    let correct = pred
        .iter()
        .zip(data.labels())
        .filter(|(&p, &l)| net.class_labels()[p] == l)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

fn check_classes(net: &Network, data: &Dataset, which: &'static str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(which));
    }
    let labels: BTreeSet<_> = net.class_labels().iter().copied().collect();
    if &labels != data.class_set() {
        return Err(Error::Class(format!(
            "{which} classes {:?} differ from network classes {:?}",
            data.class_set(),
            labels
        )));
    }
    Ok(())
}

struct Adam {
    m: ParamSet,
    v: ParamSet,
    step: i32,
}

impl Adam {
    fn new(net: &Network) -> Self {
        Self {
            m: ParamSet::zeros_like(net),
            v: ParamSet::zeros_like(net),
            step: 0,
        }
    }

    fn update(&mut self, net: &mut Network, grads: &ParamSet, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        let (m, v) = (&mut self.m, &mut self.v);
        net.apply_update(|i, layer| {
            let (g, m, v) = (&grads.layers[i], &mut m.layers[i], &mut v.layers[i]);
            adam_step_2d(layer.weights.view_mut(), g.weights.view(), m.weights.view_mut(), v.weights.view_mut(), lr, c1, c2);
            adam_step_1d(layer.bias.view_mut(), g.bias.view(), m.bias.view_mut(), v.bias.view_mut(), lr, c1, c2);
        });
    }
}

#[inline]
fn adam_elem(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, c1: f64, c2: f64) {
    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
}

fn adam_step_2d(
    p: ArrayViewMut2<f64>,
    g: ndarray::ArrayView2<f64>,
    m: ArrayViewMut2<f64>,
    v: ArrayViewMut2<f64>,
    lr: f64,
    c1: f64,
    c2: f64,
) {
    Zip::from(p)
        .and(g)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| adam_elem(p, g, m, v, lr, c1, c2));
}

fn adam_step_1d(
    p: ArrayViewMut1<f64>,
    g: ndarray::ArrayView1<f64>,
    m: ArrayViewMut1<f64>,
    v: ArrayViewMut1<f64>,
    lr: f64,
    c1: f64,
    c2: f64,
) {
    Zip::from(p)
        .and(g)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| adam_elem(p, g, m, v, lr, c1, c2));
}

/// Mini-batch Adam on the batch-mean loss with early stopping on validation
/// accuracy. Returns the snapshot with the best validation accuracy (earliest
/// on ties). Deterministic given `hyper.seed`.
pub fn train(mut net: Network, train_set: &Dataset, val_set: &Dataset, hyper: &TrainHyper) -> Result<TrainedModel> {
    hyper.validate()?;
    check_classes(&net, train_set, "training set")?;
    check_classes(&net, val_set, "validation set")?;
    if train_set.n_features() != net.input_width() {
        return Err(Error::Dimension {
            expected: net.input_width(),
            actual: train_set.n_features(),
            context: "training features",
        });
    }

    let targets_idx: Vec<usize> = train_set
        .labels()
        .iter()
        .map(|&l| net.class_index(l).expect("class sets checked"))
        .collect();
    let k = net.output_width();
    let mut rng = seed::rng(hyper.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut adam = Adam::new(&net);

    let mut best = (f64::NEG_INFINITY, 0usize, net.clone());
    let mut history = Vec::new();
    let mut stale = 0;
    for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let x = train_set.features().select(Axis(0), batch);
            let mut t = Array2::zeros((batch.len(), k));
            for (row, &i) in batch.iter().enumerate() {
                t[[row, targets_idx[i]]] = 1.0;
            }
            let trace = forward_batch(&net, x.view())?;
            let (batch_loss, mut grads) = backward_from_trace(&net, &trace, t.view(), hyper.loss_kind)?;
            loss_sum += batch_loss * batch.len() as f64;
            if hyper.l2_coeff > 0.0 {
                for (g, l) in grads.layers.iter_mut().zip(net.layers()) {
                    g.weights.scaled_add(hyper.l2_coeff, &l.weights);
                }
            }
            adam.update(&mut net, &grads, hyper.learning_rate);
        }
        let val_accuracy = accuracy(&net, val_set)?;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_accuracy,
        });
        if val_accuracy > best.0 {
            best = (val_accuracy, epoch, net.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyper.patience {
                break;
            }
        }
    }

    let (final_val_accuracy, best_epoch, network) = best;
    let final_train_accuracy = accuracy(&network, train_set)?;
    Ok(TrainedModel {
        network,
        fisher: None,
        meta: Some(TrainRecord {
            hyper: hyper.clone(),
            final_train_accuracy,
            final_val_accuracy,
            best_epoch,
            epochs_run: history.len(),
            history,
        }),
    })
}
