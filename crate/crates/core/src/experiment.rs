//! Split-class fusion experiments: for each repetition, draw a random class
//! split, train one constituent per half, fuse by each requested method and
//! evaluate on the full test set.

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{holdout, load_mnist_idx, split_by_class, synth_blobs, BlobParams, Dataset};
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate, Aggregate};
use crate::fisher::{fisher_for, FisherOptions};
use crate::fuse::{fuse_pipeline, FusionReport, FusionSpec};
use crate::nnet::{init_network, train, Activation, Architecture, TrainHyper, TrainedModel};
use crate::seed::{derive_seed, rng};
use crate::ClassLabel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Directory holding the four standard MNIST IDX files.
    Mnist { dir: PathBuf },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Synthetic {
        n_classes: usize,
        n_features: usize,
        n_per_class: usize,
        center_scale: f64,
        noise_std: f64,
        seed: u64,
        /// Samples held out (stratified) as the test set.
        test_count: usize,
    },
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Training and test pools before any class split.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: Dataset,
    pub test: Dataset,
}

impl DataSource {
    pub fn load(&self) -> Result<ExperimentData> {
        match self {
            DataSource::Mnist { dir } => {
                let p = |i: usize| dir.join(MNIST_FILES[i]);
                Ok(ExperimentData {
                    train: load_mnist_idx(p(0), p(1))?,
                    test: load_mnist_idx(p(2), p(3))?,
                })
            }
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => Ok(ExperimentData {
                train: load_mnist_idx(train_images, train_labels)?,
                test: load_mnist_idx(test_images, test_labels)?,
            }),
            &DataSource::Synthetic {
                n_classes,
                n_features,
                n_per_class,
                center_scale,
                noise_std,
                seed,
                test_count,
            } => {
                let all = synth_blobs(BlobParams {
                    n_classes,
                    n_features,
                    n_per_class,
                    center_scale,
                    noise_std,
                    seed,
                })?
                .dataset;
                let (train, test) = holdout(&all, test_count, derive_seed(seed, 1))?;
                Ok(ExperimentData { train, test })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassSplit {
    /// Shuffle the class set each repetition and give the first `size_a`
    /// classes to A (default: half).
    Random { size_a: Option<usize> },
    Fixed { classes_a: BTreeSet<ClassLabel> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Stratified validation samples carved from the training pool.
    pub val_count: usize,
    pub split: ClassSplit,
    pub hidden: Vec<usize>,
    pub output_activation: Activation,
    /// `seed` is overridden per repetition and constituent.
    pub hyper: TrainHyper,
    pub methods: Vec<FusionSpec>,
    #[serde(default)]
    pub fisher: FisherOptions,
    pub repetitions: usize,
    pub master_seed: u64,
}

impl ExperimentConfig {
    /// Split-MNIST defaults: 12000 validation samples, random 5/5 split.
    pub fn mnist(dir: impl Into<PathBuf>, hidden: Vec<usize>) -> Self {
        Self {
            data: DataSource::Mnist { dir: dir.into() },
            val_count: 12_000,
            split: ClassSplit::Random { size_a: None },
            hidden,
            output_activation: Activation::Softmax,
            hyper: TrainHyper::default(),
            methods: vec![FusionSpec::ws(), FusionSpec::ewc()],
            fisher: FisherOptions::default(),
            repetitions: 3,
            master_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("at least one fusion method is required".into()));
        }
        self.hyper.validate()?;
        for m in &self.methods {
            m.policies(self.hidden.len())?;
        }
        Ok(())
    }
}

pub fn method_label(spec: &FusionSpec) -> String {
    let mut s = format!("{:?}", spec.method).to_lowercase();
    if spec.method == crate::fuse::FusionMethod::Ewc && !spec.align {
        s.push_str("-noalign");
    }
    if spec.method == crate::fuse::FusionMethod::Ws && spec.align {
        s.push_str("-aligned");
    }
    if spec.hidden_policy.contains(&crate::fuse::HiddenPolicy::Average) {
        s.push_str("-avg");
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstituentResult {
    pub classes: Vec<ClassLabel>,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    /// Accuracy on the test samples of the constituent's own classes.
    pub test_accuracy: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub accuracy: f64,
    pub report: FusionReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub index: usize,
    pub seed: u64,
    pub a: ConstituentResult,
    pub b: ConstituentResult,
    pub fused: Vec<MethodResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub accuracies: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<Aggregate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub repetitions: Vec<RepetitionResult>,
    pub constituents: MethodSummary,
    pub methods: Vec<MethodSummary>,
    /// Set when a repetition failed; results above are partial.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

/// Seeds of one repetition, all derived from the master seed.
#[derive(Clone, Copy, Debug)]
pub struct RepetitionSeeds {
    pub repetition: u64,
    pub holdout: u64,
    pub split: u64,
    pub init_a: u64,
    pub init_b: u64,
    pub train_a: u64,
    pub train_b: u64,
}

impl RepetitionSeeds {
    pub fn new(master: u64, index: usize) -> Self {
        let r = derive_seed(master, index as u64);
        Self {
            repetition: r,
            holdout: derive_seed(r, 0),
            split: derive_seed(r, 1),
            init_a: derive_seed(r, 2),
            init_b: derive_seed(r, 3),
            train_a: derive_seed(r, 4),
            train_b: derive_seed(r, 5),
        }
    }
}

pub fn choose_classes(all: &BTreeSet<ClassLabel>, split: &ClassSplit, seed: u64) -> Result<BTreeSet<ClassLabel>> {
    match split {
        ClassSplit::Fixed { classes_a } => Ok(classes_a.clone()),
        ClassSplit::Random { size_a } => {
            let size = size_a.unwrap_or(all.len() / 2);
            if size == 0 || size >= all.len() {
                return Err(Error::InvalidArgument(format!(
                    "cannot give {size} of {} classes to A",
                    all.len()
                )));
            }
            let mut classes: Vec<ClassLabel> = all.iter().copied().collect();
            classes.shuffle(&mut rng(seed));
            Ok(classes[..size].iter().copied().collect())
        }
    }
}

/// The two constituents of one repetition and the data they were built on.
pub struct TrainedPair {
    pub a: TrainedModel,
    pub b: TrainedModel,
    pub a_result: ConstituentResult,
    pub b_result: ConstituentResult,
}

/// Trains and Fisher-annotates the two constituents of repetition `index`.
pub fn train_pair(config: &ExperimentConfig, data: &ExperimentData, index: usize) -> Result<TrainedPair> {
    let seeds = RepetitionSeeds::new(config.master_seed, index);
    let (train_pool, val_pool) = holdout(&data.train, config.val_count, seeds.holdout)?;
    let classes_a = choose_classes(data.train.class_set(), &config.split, seeds.split)?;
    let (train_a, train_b) = split_by_class(&train_pool, &classes_a)?;
    let (val_a, val_b) = split_by_class(&val_pool, &classes_a)?;
    let (test_a, test_b) = split_by_class(&data.test, &classes_a)?;

    let side = |train_set: &Dataset, val: &Dataset, test: &Dataset, init: u64, seed: u64| -> Result<(TrainedModel, ConstituentResult)> {
        let labels: Vec<ClassLabel> = train_set.class_set().iter().copied().collect();
        let arch = Architecture::mlp(train_set.n_features(), &config.hidden, labels.len(), config.output_activation);
        let net = init_network(&arch, labels.clone(), init)?;
        let hyper = TrainHyper {
            seed,
            ..config.hyper.clone()
        };
        let model = train(net, train_set, val, &hyper)?;
        let fisher = fisher_for(&model, train_set, config.fisher)?.fisher;
        let model = model.with_fisher(fisher)?;
        let meta = model.meta.as_ref().expect("trained");
        let result = ConstituentResult {
            classes: labels,
            train_accuracy: meta.final_train_accuracy,
            val_accuracy: meta.final_val_accuracy,
            test_accuracy: evaluate(&model.network, test)?.accuracy,
            epochs_run: meta.epochs_run,
            best_epoch: meta.best_epoch,
        };
        Ok((model, result))
    };
    let (a, a_result) = side(&train_a, &val_a, &test_a, seeds.init_a, seeds.train_a)?;
    let (b, b_result) = side(&train_b, &val_b, &test_b, seeds.init_b, seeds.train_b)?;
    Ok(TrainedPair {
        a,
        b,
        a_result,
        b_result,
    })
}

/// Fuses a trained pair by `spec` and evaluates on the full test set.
pub fn fuse_and_evaluate(pair: &TrainedPair, spec: &FusionSpec, test: &Dataset) -> Result<MethodResult> {
    let (fused, mut report) = fuse_pipeline(&pair.a, &pair.b, spec)?;
    let eval = evaluate(&fused.network, test)?;
    report.accuracy = Some(eval.accuracy);
    report.confusion = Some(eval.confusion);
    Ok(MethodResult {
        method: method_label(spec),
        accuracy: eval.accuracy,
        report,
    })
}

pub fn run_repetition(config: &ExperimentConfig, data: &ExperimentData, index: usize) -> Result<RepetitionResult> {
    let pair = train_pair(config, data, index)?;
    let fused = config
        .methods
        .iter()
        .map(|spec| fuse_and_evaluate(&pair, spec, &data.test))
        .collect::<Result<Vec<_>>>()?;
    Ok(RepetitionResult {
        index,
        seed: RepetitionSeeds::new(config.master_seed, index).repetition,
        a: pair.a_result,
        b: pair.b_result,
        fused,
    })
}

fn summarize(method: String, accuracies: Vec<f64>) -> MethodSummary {
    MethodSummary {
        method,
        aggregate: aggregate(&accuracies).ok(),
        accuracies,
    }
}

/// Runs every repetition in order. A failing repetition stops the run and is
/// recorded in `aborted`; completed repetitions are kept.
pub fn run_experiment(
    config: &ExperimentConfig,
    data: &ExperimentData,
    mut progress: impl FnMut(&RepetitionResult),
) -> Result<ExperimentSummary> {
    config.validate()?;
    let mut reps = Vec::with_capacity(config.repetitions);
    let mut aborted = None;
    for i in 0..config.repetitions {
        match run_repetition(config, data, i) {
            Ok(r) => {
                progress(&r);
                reps.push(r);
            }
            Err(e) => {
                aborted = Some(format!("repetition {i} failed: {e}"));
                break;
            }
        }
    }
    let constituents = summarize(
        "constituents".into(),
        reps.iter().flat_map(|r| [r.a.test_accuracy, r.b.test_accuracy]).collect(),
    );
    let methods = config
        .methods
        .iter()
        .enumerate()
        .map(|(m, spec)| summarize(method_label(spec), reps.iter().map(|r| r.fused[m].accuracy).collect()))
        .collect();
    Ok(ExperimentSummary {
        config: config.clone(),
        repetitions: reps,
        constituents,
        methods,
        aborted,
    })
}
