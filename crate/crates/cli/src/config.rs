use std::path::{Path, PathBuf};

use knowfuse::data::{load_mnist_idx, Dataset};
use knowfuse::experiment::{DataSource, MNIST_FILES};
use knowfuse::fisher::FisherOptions;
use knowfuse::nnet::{Activation, TrainHyper};
use knowfuse::ClassLabel;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult, DataArgs, TrainArgs};

/// Everything `train` needs. Loaded from `--config` and overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub data: Option<DataSource>,
    /// Training classes; `None` trains on every class present.
    pub classes: Option<Vec<ClassLabel>>,
    pub val_count: usize,
    pub hidden: Vec<usize>,
    pub output_activation: Activation,
    pub hyper: TrainHyper,
    pub fisher: FisherOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data: None,
            classes: None,
            val_count: 12_000,
            hidden: vec![800],
            output_activation: Activation::Softmax,
            hyper: TrainHyper::default(),
            fisher: FisherOptions::default(),
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Config {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::ConfigJson {
        path: path.to_path_buf(),
        source,
    })
}

impl TrainConfig {
    pub fn resolve(args: &TrainArgs) -> CliResult<Self> {
        let mut cfg: TrainConfig = match &args.config {
            Some(p) => read_json(p)?,
            None => TrainConfig::default(),
        };
        if let Some(src) = args.data.source()? {
            cfg.data = Some(src);
        }
        if let Some(c) = &args.classes {
            cfg.classes = Some(c.clone());
        }
        if let Some(h) = &args.hidden {
            cfg.hidden = h.clone();
        }
        if let Some(a) = args.output_activation {
            cfg.output_activation = a;
        }
        let h = &mut cfg.hyper;
        if let Some(v) = args.loss {
            h.loss_kind = v;
        }
        if let Some(v) = args.learning_rate {
            h.learning_rate = v;
        }
        if let Some(v) = args.batch_size {
            h.batch_size = v;
        }
        if let Some(v) = args.max_epochs {
            h.max_epochs = v;
        }
        if let Some(v) = args.patience {
            h.patience = v;
        }
        if let Some(v) = args.l2 {
            h.l2_coeff = v;
        }
        if let Some(v) = args.seed {
            h.seed = v;
        }
        if let Some(v) = args.val_count {
            cfg.val_count = v;
        }
        if args.fisher_samples.is_some() {
            cfg.fisher.max_samples = args.fisher_samples;
        }
        if cfg.data.is_none() {
            return Err(CliError::Usage(
                "no training data: pass --data-dir or the four --train-*/--test-* paths".into(),
            ));
        }
        Ok(cfg)
    }
}

impl DataArgs {
    pub fn is_empty(&self) -> bool {
        self.data_dir.is_none()
            && self.train_images.is_none()
            && self.train_labels.is_none()
            && self.test_images.is_none()
            && self.test_labels.is_none()
    }

    /// Full train+test source, if any data flag was given.
    pub fn source(&self) -> CliResult<Option<DataSource>> {
        if self.is_empty() {
            return Ok(None);
        }
        if let Some(dir) = &self.data_dir {
            return Ok(Some(DataSource::Mnist { dir: dir.clone() }));
        }
        match (&self.train_images, &self.train_labels, &self.test_images, &self.test_labels) {
            (Some(a), Some(b), Some(c), Some(d)) => Ok(Some(DataSource::Idx {
                train_images: a.clone(),
                train_labels: b.clone(),
                test_images: c.clone(),
                test_labels: d.clone(),
            })),
            _ => Err(CliError::Usage(
                "give --data-dir or all of --train-images, --train-labels, --test-images, --test-labels".into(),
            )),
        }
    }

    fn test_paths(&self) -> CliResult<Option<(PathBuf, PathBuf)>> {
        if let Some(dir) = &self.data_dir {
            return Ok(Some((dir.join(MNIST_FILES[2]), dir.join(MNIST_FILES[3]))));
        }
        match (&self.test_images, &self.test_labels) {
            (Some(i), Some(l)) => Ok(Some((i.clone(), l.clone()))),
            (None, None) => Ok(None),
            _ => Err(CliError::Usage("give both --test-images and --test-labels".into())),
        }
    }

    /// Test split only, if given.
    pub fn test_set(&self) -> CliResult<Option<Dataset>> {
        match self.test_paths()? {
            Some((i, l)) => Ok(Some(load_mnist_idx(i, l)?)),
            None => Ok(None),
        }
    }

    pub fn require_test_set(&self) -> CliResult<Dataset> {
        self.test_set()?
            .ok_or_else(|| CliError::Usage("test data required: pass --data-dir or --test-images/--test-labels".into()))
    }
}
