use std::fmt::Write;

use knowfuse::diagnostics::DiagReport;
use knowfuse::eval::{ConfusionMatrix, Evaluation};
use knowfuse::experiment::ExperimentSummary;
use knowfuse::fuse::FusionReport;

use crate::commands::TrainSummary;

fn confusion(out: &mut String, c: &ConfusionMatrix) {
    let _ = write!(out, "{:>8}", "true\\pred");
    for l in &c.classes {
        let _ = write!(out, "{l:>7}");
    }
    out.push('\n');
    for (l, row) in c.classes.iter().zip(&c.counts) {
        let _ = write!(out, "{l:>9}");
        for n in row {
            let _ = write!(out, "{n:>7}");
        }
        out.push('\n');
    }
}

pub fn train(s: &TrainSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "model       {}", s.model);
    let _ = writeln!(out, "classes     {:?}", s.classes);
    let _ = writeln!(out, "samples     {} train, {} validation", s.train_samples, s.val_samples);
    let _ = writeln!(out, "\n{:>5} {:>12} {:>10}", "epoch", "train loss", "val acc");
    for e in &s.record.history {
        let _ = writeln!(out, "{:>5} {:>12.6} {:>10.4}", e.epoch, e.train_loss, e.val_accuracy);
    }
    let _ = writeln!(
        out,
        "\nbest epoch {} of {}: train {:.4}, validation {:.4}",
        s.record.best_epoch, s.record.epochs_run, s.record.final_train_accuracy, s.record.final_val_accuracy
    );
    for w in &s.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

pub fn fusion(r: &FusionReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "method    {:?}", r.method);
    let _ = writeln!(out, "policies  {:?}", r.hidden_policy);
    let _ = writeln!(out, "aligned   {}", r.aligned);
    let _ = writeln!(out, "classes   {:?}", r.class_labels);
    if !r.alignment.is_empty() {
        let _ = writeln!(out, "\n{:>5} {:>14} {:>14} {:>9}", "layer", "cost before", "cost after", "identity");
        for a in &r.alignment {
            let _ = writeln!(out, "{:>5} {:>14.6e} {:>14.6e} {:>9}", a.layer, a.cost_before, a.cost_after, a.identity);
        }
    }
    if !r.zero_mean_checks.is_empty() {
        let _ = writeln!(out, "\n{:>6} {:>5} {:>12} {:>12} {:>8}", "model", "layer", "mean", "std err", "warn");
    }
    for z in &r.zero_mean_checks {
        let _ = writeln!(
            out,
            "{:>6} {:>5} {:>12.4e} {:>12.4e} {:>8}",
            z.model, z.stats.layer, z.stats.mean, z.stats.std_error, z.warning
        );
    }
    for w in &r.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    if let Some(acc) = r.accuracy {
        let _ = writeln!(out, "\naccuracy  {acc:.4}");
    }
    if let Some(c) = &r.confusion {
        confusion(&mut out, c);
    }
    out
}

pub fn evaluation(e: &Evaluation) -> String {
    let mut out = format!("accuracy {:.4} ({} of {})\n\n", e.accuracy, e.correct, e.total);
    confusion(&mut out, &e.confusion);
    out
}

pub fn experiment(s: &ExperimentSummary) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:>4} {:>8} {:>8}", "rep", "A", "B");
    for m in &s.methods {
        let _ = write!(out, " {:>14}", m.method);
    }
    out.push('\n');
    for r in &s.repetitions {
        let _ = write!(out, "{:>4} {:>8.4} {:>8.4}", r.index, r.a.test_accuracy, r.b.test_accuracy);
        for m in &r.fused {
            let _ = write!(out, " {:>14.4}", m.accuracy);
        }
        out.push('\n');
    }
    out.push('\n');
    for m in std::iter::once(&s.constituents).chain(&s.methods) {
        match &m.aggregate {
            Some(a) => {
                let _ = writeln!(out, "{:<14} {:.4} ± {:.4}", m.method, a.mean, a.std);
            }
            None => {
                let _ = writeln!(out, "{:<14} {:?}", m.method, m.accuracies);
            }
        }
    }
    if let Some(msg) = &s.aborted {
        let _ = writeln!(out, "aborted: {msg}");
    }
    out
}

pub fn diag(d: &DiagReport) -> String {
    let mut out = String::new();
    if let Some(p) = &d.peq {
        let _ = writeln!(
            out,
            "P_eq {:.6} ({} preserved, {} flipped of {})",
            p.peq(),
            p.preserved,
            p.flipped,
            p.n_samples
        );
    }
    for (name, stats) in [("A", &d.weight_stats_a), ("B", &d.weight_stats_b)] {
        for s in stats {
            let _ = writeln!(
                out,
                "{name} layer {}: mean {:.4e}, std {:.4e}, std err {:.4e} over {} weights",
                s.layer, s.mean, s.std, s.std_error, s.count
            );
        }
    }
    if let Some(dom) = &d.dominance {
        let _ = writeln!(out, "dominance median {:.4} over {} nodes", dom.median, dom.ratios.len());
    }
    out
}
