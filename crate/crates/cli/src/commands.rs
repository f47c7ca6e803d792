use std::collections::BTreeSet;

use knowfuse::data::{holdout, synth_blobs, write_idx_images, write_idx_labels, BlobParams};
use knowfuse::diagnostics::{dominance_report, estimate_peq, weight_mean_report, DiagReport};
use knowfuse::eval::{evaluate, evaluate_restricted};
use knowfuse::experiment::{run_experiment, ExperimentConfig, MNIST_FILES};
use knowfuse::fisher::fisher_for;
use knowfuse::fuse::{fuse_pipeline, pad_model, FusionSpec};
use knowfuse::modelfile::{load_model, save_model};
use knowfuse::nnet::{init_network, train, Architecture, TrainRecord};
use knowfuse::seed::derive_seed;
use knowfuse::{ClassLabel, Error};
use serde::Serialize;

use crate::config::{read_json, TrainConfig};
use crate::pretty;
use crate::{Cli, CliError, CliResult, Command, DiagArgs, EvalArgs, ExperimentArgs, FuseArgs, GenDataArgs, TrainArgs};

pub struct Output {
    pub text: String,
    /// Set when the command produced partial results and must exit nonzero.
    pub aborted: Option<String>,
}

fn emit<T: Serialize>(value: &T, pretty_flag: bool, table: impl FnOnce(&T) -> String) -> CliResult<Output> {
    let text = if pretty_flag {
        table(value)
    } else {
        serde_json::to_string_pretty(value).map_err(Error::from)?
    };
    Ok(Output { text, aborted: None })
}

pub fn run(cli: &Cli) -> CliResult<Output> {
    match &cli.command {
        Command::GenData(a) => gen_data(a, cli.pretty),
        Command::Train(a) => train_cmd(a, cli.pretty),
        Command::Fuse(a) => fuse_cmd(a, cli.pretty),
        Command::Eval(a) => eval_cmd(a, cli.pretty),
        Command::Experiment(a) => experiment_cmd(a, cli.pretty),
        Command::Diag(a) => diag_cmd(a, cli.pretty),
    }
}

#[derive(Serialize)]
pub struct GenDataSummary {
    pub dir: String,
    pub train_samples: usize,
    pub test_samples: usize,
    pub clipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

fn gen_data(a: &GenDataArgs, pretty_flag: bool) -> CliResult<Output> {
    let synth = synth_blobs(BlobParams {
        n_classes: a.classes,
        n_features: a.rows * a.cols,
        n_per_class: a.per_class,
        center_scale: a.center_scale,
        noise_std: a.noise_std,
        seed: a.seed,
    })?;
    let test_count = a.test_per_class * a.classes;
    let (train_set, test_set) = holdout(&synth.dataset, test_count, derive_seed(a.seed, 1))?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let p = |i: usize| a.out.join(MNIST_FILES[i]);
    write_idx_images(p(0), &train_set, a.rows, a.cols)?;
    write_idx_labels(p(1), &train_set)?;
    write_idx_images(p(2), &test_set, a.rows, a.cols)?;
    write_idx_labels(p(3), &test_set)?;
    let summary = GenDataSummary {
        dir: a.out.display().to_string(),
        train_samples: train_set.len(),
        test_samples: test_set.len(),
        clipped: synth.clipped,
        warning: synth.clip_warning(),
    };
    if let Some(w) = &summary.warning {
        eprintln!("warning: {w}");
    }
    emit(&summary, pretty_flag, |s| {
        format!(
            "wrote {} training and {} test samples to {} ({} values clipped)",
            s.train_samples, s.test_samples, s.dir, s.clipped
        )
    })
}

#[derive(Serialize)]
pub struct TrainSummary {
    pub model: String,
    pub classes: Vec<ClassLabel>,
    pub train_samples: usize,
    pub val_samples: usize,
    pub fisher_samples: usize,
    pub record: TrainRecord,
    pub warnings: Vec<String>,
}

fn train_cmd(a: &TrainArgs, pretty_flag: bool) -> CliResult<Output> {
    let cfg = TrainConfig::resolve(a)?;
    let data = cfg.data.as_ref().expect("resolved").load()?;
    let (train_pool, val_pool) = holdout(&data.train, cfg.val_count, derive_seed(cfg.hyper.seed, 0))?;
    let classes: BTreeSet<ClassLabel> = match &cfg.classes {
        Some(c) => c.iter().copied().collect(),
        None => train_pool.class_set().clone(),
    };
    let (train_set, val_set) = (train_pool.restrict_to(&classes), val_pool.restrict_to(&classes));
    if train_set.class_set() != &classes || val_set.class_set() != &classes {
        return Err(Error::Class(format!("some of the classes {classes:?} have no training or validation samples")).into());
    }
    let labels: Vec<ClassLabel> = classes.iter().copied().collect();
    let arch = Architecture::mlp(train_set.n_features(), &cfg.hidden, labels.len(), cfg.output_activation);
    let net = init_network(&arch, labels.clone(), derive_seed(cfg.hyper.seed, 1))?;
    let model = train(net, &train_set, &val_set, &cfg.hyper)?;
    let estimate = fisher_for(&model, &train_set, cfg.fisher)?;
    let model = model.with_fisher(estimate.fisher)?;
    save_model(&a.out, &model)?;
    let summary = TrainSummary {
        model: a.out.display().to_string(),
        classes: labels,
        train_samples: train_set.len(),
        val_samples: val_set.len(),
        fisher_samples: estimate.samples_used,
        record: model.meta.expect("trained"),
        warnings: estimate.warning.into_iter().collect(),
    };
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    emit(&summary, pretty_flag, pretty::train)
}

fn fuse_cmd(a: &FuseArgs, pretty_flag: bool) -> CliResult<Output> {
    let mut ma = load_model(&a.model_a)?;
    let mut mb = load_model(&a.model_b)?;
    if a.pad {
        let (wa, wb) = (ma.network.hidden_widths(), mb.network.hidden_widths());
        if wa.len() != wb.len() {
            return Err(CliError::Usage(format!(
                "cannot pad: models have {} and {} hidden layers",
                wa.len(),
                wb.len()
            )));
        }
        let widths: Vec<usize> = wa.iter().zip(&wb).map(|(x, y)| *x.max(y)).collect();
        ma = pad_model(&ma, &widths)?;
        mb = pad_model(&mb, &widths)?;
    }
    let mut spec = FusionSpec::for_method(a.method);
    if a.no_align {
        spec.align = false;
    }
    if a.align {
        spec.align = true;
    }
    if !a.policy.is_empty() {
        spec.hidden_policy = a.policy.clone();
    }
    if let Some(e) = a.epsilon {
        spec.epsilon = e;
    }
    spec.cost_scope = a.cost_scope;
    let (fused, mut report) = fuse_pipeline(&ma, &mb, &spec).map_err(|e| match e {
        Error::Architecture(msg) => CliError::Usage(format!("{msg}; use --pad to zero-pad the narrower model")),
        other => other.into(),
    })?;
    if let Some(test) = a.data.test_set()? {
        let ev = evaluate(&fused.network, &test)?;
        report.accuracy = Some(ev.accuracy);
        report.confusion = Some(ev.confusion);
    }
    save_model(&a.out, &fused)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    emit(&report, pretty_flag, pretty::fusion)
}

fn eval_cmd(a: &EvalArgs, pretty_flag: bool) -> CliResult<Output> {
    let model = load_model(&a.model)?;
    let test = a.data.require_test_set()?;
    let ev = match &a.classes {
        Some(c) => evaluate_restricted(&model.network, &test, &c.iter().copied().collect())?,
        None => evaluate(&model.network, &test)?,
    };
    emit(&ev, pretty_flag, pretty::evaluation)
}

fn experiment_cmd(a: &ExperimentArgs, pretty_flag: bool) -> CliResult<Output> {
    let mut cfg: ExperimentConfig = read_json(&a.config)?;
    if let Some(r) = a.repetitions {
        cfg.repetitions = r;
    }
    if let Some(s) = a.master_seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    let data = cfg.data.load()?;
    let summary = run_experiment(&cfg, &data, |r| {
        let fused: Vec<String> = r.fused.iter().map(|m| format!("{} {:.4}", m.method, m.accuracy)).collect();
        eprintln!(
            "repetition {}: A {:.4}, B {:.4}, {}",
            r.index,
            r.a.test_accuracy,
            r.b.test_accuracy,
            fused.join(", ")
        );
    })?;
    if let Some(path) = &a.out {
        let json = serde_json::to_string_pretty(&summary).map_err(Error::from)?;
        knowfuse::modelfile::write_atomic(path, json.as_bytes())?;
    }
    let mut out = emit(&summary, pretty_flag, pretty::experiment)?;
    out.aborted = summary.aborted.clone();
    Ok(out)
}

fn diag_cmd(a: &DiagArgs, pretty_flag: bool) -> CliResult<Output> {
    let mut report = DiagReport {
        peq: None,
        peq_estimate: None,
        weight_stats_a: Vec::new(),
        weight_stats_b: Vec::new(),
        dominance: None,
    };
    if let Some(v) = &a.peq {
        let bad = |name: &str| CliError::Usage(format!("--peq: {name} is not a number"));
        let n: u64 = v[0].parse().map_err(|_| bad("N"))?;
        let sa: f64 = v[1].parse().map_err(|_| bad("SIGMA_A"))?;
        let sb: f64 = v[2].parse().map_err(|_| bad("SIGMA_B"))?;
        let seed: u64 = v[3].parse().map_err(|_| bad("SEED"))?;
        let est = estimate_peq(n, sa, sb, seed)?;
        report.peq_estimate = Some(est.peq());
        report.peq = Some(est);
    }
    match a.models.as_slice() {
        [] => {
            if a.peq.is_none() {
                return Err(CliError::Usage("give two model files, --peq, or both".into()));
            }
        }
        [pa, pb] => {
            let ma = load_model(pa)?;
            let mb = load_model(pb)?;
            report.weight_stats_a = weight_mean_report(&ma.network);
            report.weight_stats_b = weight_mean_report(&mb.network);
            if let Some(test) = a.data.test_set()? {
                let probes = test.truncate(a.max_probes);
                report.dominance = Some(dominance_report(&ma, &mb, &probes)?);
            }
        }
        _ => return Err(CliError::Usage("diag takes exactly two model files".into())),
    }
    emit(&report, pretty_flag, pretty::diag)
}
