//! Fusion rules: weights summation/averaging, Fisher-weighted consolidation,
//! output-head concatenation and the end-to-end pipeline.

use std::collections::BTreeSet;

use ndarray::{concatenate, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::align::{align_networks, require_same_architecture, AlignOptions, CostScope};
use crate::diagnostics::{weight_mean_report, LayerWeightStats};
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::fisher::FisherDiag;
use crate::nnet::{DenseLayer, LayerParams, Network, ParamSet, TrainedModel};
use crate::ClassLabel;

/// Default guard on `F_A + F_B` below which consolidation falls back to the
/// plain average.
pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    Ws,
    Ewc,
}

impl std::str::FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ws" => Ok(FusionMethod::Ws),
            "ewc" => Ok(FusionMethod::Ewc),
            other => Err(Error::InvalidArgument(format!("unknown fusion method {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenPolicy {
    Sum,
    Average,
    Ewc,
}

impl std::str::FromStr for HiddenPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(HiddenPolicy::Sum),
            "average" | "avg" => Ok(HiddenPolicy::Average),
            "ewc" => Ok(HiddenPolicy::Ewc),
            other => Err(Error::InvalidArgument(format!("unknown hidden policy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionSpec {
    pub method: FusionMethod,
    /// Policy per hidden layer. Empty means the method's default everywhere;
    /// a single entry applies to every hidden layer.
    #[serde(default)]
    pub hidden_policy: Vec<HiddenPolicy>,
    pub align: bool,
    pub epsilon: f64,
    #[serde(default)]
    pub cost_scope: CostScope,
}

impl FusionSpec {
    /// Summation of every hidden layer, no alignment.
    pub fn ws() -> Self {
        Self {
            method: FusionMethod::Ws,
            hidden_policy: vec![HiddenPolicy::Sum],
            align: false,
            epsilon: DEFAULT_EPSILON,
            cost_scope: CostScope::Presynaptic,
        }
    }

    /// Fisher-weighted consolidation after alignment.
    pub fn ewc() -> Self {
        Self {
            method: FusionMethod::Ewc,
            hidden_policy: vec![HiddenPolicy::Ewc],
            align: true,
            epsilon: DEFAULT_EPSILON,
            cost_scope: CostScope::Presynaptic,
        }
    }

    pub fn for_method(method: FusionMethod) -> Self {
        match method {
            FusionMethod::Ws => Self::ws(),
            FusionMethod::Ewc => Self::ewc(),
        }
    }

    /// Resolves the per-layer policies for `hidden` hidden layers.
    pub fn policies(&self, hidden: usize) -> Result<Vec<HiddenPolicy>> {
        let resolved = match self.hidden_policy.len() {
            0 => vec![
                match self.method {
                    FusionMethod::Ws => HiddenPolicy::Sum,
                    FusionMethod::Ewc => HiddenPolicy::Ewc,
                };
                hidden
            ],
            1 => vec![self.hidden_policy[0]; hidden],
            n if n == hidden => self.hidden_policy.clone(),
            n => {
                return Err(Error::InvalidArgument(format!(
                    "{n} hidden policies given for {hidden} hidden layers"
                )))
            }
        };
        for p in &resolved {
            let ok = match self.method {
                FusionMethod::Ws => matches!(p, HiddenPolicy::Sum | HiddenPolicy::Average),
                FusionMethod::Ewc => *p == HiddenPolicy::Ewc,
            };
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "hidden policy {p:?} is not valid for method {:?}",
                    self.method
                )));
            }
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument("epsilon must be non-negative".into()));
        }
        Ok(resolved)
    }
}

fn check_layer_pair(a: &DenseLayer, b: &DenseLayer) -> Result<()> {
    if a.weights.dim() != b.weights.dim() || a.activation != b.activation {
        return Err(Error::Shape(format!(
            "cannot fuse a {:?} {} layer with a {:?} {} layer",
            a.weights.dim(),
            a.activation.name(),
            b.weights.dim(),
            b.activation.name()
        )));
    }
    Ok(())
}

/// Element-wise sum or average of two layers (weights and biases alike).
pub fn ws_fuse_layer(a: &DenseLayer, b: &DenseLayer, policy: HiddenPolicy) -> Result<DenseLayer> {
    check_layer_pair(a, b)?;
    let scale = match policy {
        HiddenPolicy::Sum => 1.0,
        HiddenPolicy::Average => 0.5,
        HiddenPolicy::Ewc => {
            return Err(Error::InvalidArgument(
                "weights summation takes the sum or average policy".into(),
            ))
        }
    };
    let weights = (&a.weights + &b.weights) * scale;
    let bias = (&a.bias + &b.bias) * scale;
    DenseLayer::new(weights, bias, a.activation)
}

#[inline]
fn consolidate(fa: f64, fb: f64, ta: f64, tb: f64, epsilon: f64) -> f64 {
    let denom = fa + fb;
    if ta == tb {
        ta
    } else if denom < epsilon || denom == 0.0 {
        0.5 * (ta + tb)
    } else if fb == 0.0 {
        ta
    } else if fa == 0.0 {
        tb
    } else {
        (fa * ta + fb * tb) / denom
    }
}

/// Fisher-weighted mean of two layers, entry by entry. Entries whose total
/// Fisher is below `epsilon` take the plain average.
pub fn ewc_fuse_layer(
    a: &DenseLayer,
    b: &DenseLayer,
    fa: &LayerParams,
    fb: &LayerParams,
    epsilon: f64,
) -> Result<DenseLayer> {
    check_layer_pair(a, b)?;
    for f in [fa, fb] {
        if f.weights.dim() != a.weights.dim() || f.bias.len() != a.bias.len() {
            return Err(Error::Shape("Fisher values are not shaped like the layer".into()));
        }
        if let Some(v) = f.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::BadFisher {
                value: *v,
                location: "layer Fisher".into(),
            });
        }
    }
    let mut weights = a.weights.clone();
    Zip::from(&mut weights)
        .and(&b.weights)
        .and(&fa.weights)
        .and(&fb.weights)
        .for_each(|w, &tb, &fa, &fb| *w = consolidate(fa, fb, *w, tb, epsilon));
    let mut bias = a.bias.clone();
    Zip::from(&mut bias)
        .and(&b.bias)
        .and(&fa.bias)
        .and(&fb.bias)
        .for_each(|w, &tb, &fa, &fb| *w = consolidate(fa, fb, *w, tb, epsilon));
    DenseLayer::new(weights, bias, a.activation)
}

/// Stacks head A's rows over head B's; the merged class list is A's labels
/// followed by B's.
pub fn concat_output(
    head_a: &DenseLayer,
    labels_a: &[ClassLabel],
    head_b: &DenseLayer,
    labels_b: &[ClassLabel],
) -> Result<(DenseLayer, Vec<ClassLabel>)> {
    if head_a.in_width() != head_b.in_width() {
        return Err(Error::Shape(format!(
            "output heads read {} and {} hidden units",
            head_a.in_width(),
            head_b.in_width()
        )));
    }
    if head_a.activation != head_b.activation {
        return Err(Error::Shape("output heads use different activations".into()));
    }
    let set_a: BTreeSet<_> = labels_a.iter().collect();
    if let Some(dup) = labels_b.iter().find(|l| set_a.contains(l)) {
        return Err(Error::Class(format!(
            "class {dup} appears in both networks; fusion needs disjoint class sets"
        )));
    }
    let weights = concatenate(Axis(0), &[head_a.weights.view(), head_b.weights.view()]).expect("widths checked");
    let bias = concatenate(Axis(0), &[head_a.bias.view(), head_b.bias.view()]).expect("1-d");
    let labels = labels_a.iter().chain(labels_b).copied().collect();
    Ok((DenseLayer::new(weights, bias, head_a.activation)?, labels))
}

fn concat_fisher_head(fa: &LayerParams, fb: &LayerParams) -> LayerParams {
    LayerParams {
        weights: concatenate(Axis(0), &[fa.weights.view(), fb.weights.view()]).expect("same width"),
        bias: concatenate(Axis(0), &[fa.bias.view(), fb.bias.view()]).expect("1-d"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub layer: usize,
    pub cost_before: f64,
    pub cost_after: f64,
    pub identity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroMeanCheck {
    pub model: String,
    #[serde(flatten)]
    pub stats: LayerWeightStats,
    /// `|mean| > 3·std/√n`.
    pub warning: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub method: FusionMethod,
    pub hidden_policy: Vec<HiddenPolicy>,
    pub aligned: bool,
    pub alignment: Vec<AlignmentSummary>,
    pub zero_mean_checks: Vec<ZeroMeanCheck>,
    pub warnings: Vec<String>,
    pub class_labels: Vec<ClassLabel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
}

fn zero_mean_checks(name: &str, net: &Network) -> Vec<ZeroMeanCheck> {
    weight_mean_report(net)
        .into_iter()
        .take(net.hidden_count())
        .map(|stats| ZeroMeanCheck {
            model: name.to_string(),
            warning: stats.mean.abs() > 3.0 * stats.std_error,
            stats,
        })
        .collect()
}

/// Fuses two constituents into one network over the union of their classes.
///
/// With consolidation (and whenever `spec.align` is set) B is first aligned
/// onto A. Hidden layers are then merged by the per-layer policy and the
/// output heads are stacked, A's first.
pub fn fuse_pipeline(a: &TrainedModel, b: &TrainedModel, spec: &FusionSpec) -> Result<(TrainedModel, FusionReport)> {
    require_same_architecture(&a.network, &b.network)?;
    let hidden = a.network.hidden_count();
    let policies = spec.policies(hidden)?;
    if spec.method == FusionMethod::Ewc || spec.align {
        if a.fisher.is_none() {
            return Err(Error::MissingFisher("A"));
        }
        if b.fisher.is_none() {
            return Err(Error::MissingFisher("B"));
        }
    }

    let mut warnings = Vec::new();
    let mut zero_mean = Vec::new();
    if spec.method == FusionMethod::Ws {
        zero_mean.extend(zero_mean_checks("A", &a.network));
        zero_mean.extend(zero_mean_checks("B", &b.network));
        for c in zero_mean.iter().filter(|c| c.warning) {
            warnings.push(format!(
                "layer {} of {} has weight mean {:.3e} (std error {:.3e}); summation assumes zero-mean weights",
                c.stats.layer, c.model, c.stats.mean, c.stats.std_error
            ));
        }
    }

    let (b_aligned, alignment) = if spec.align && hidden > 0 {
        let al = align_networks(a, b, AlignOptions { scope: spec.cost_scope })?;
        let summary = al
            .layers
            .iter()
            .map(|l| AlignmentSummary {
                layer: l.layer,
                cost_before: l.cost_before,
                cost_after: l.solution.total_cost,
                identity: l.solution.is_identity(),
            })
            .collect();
        (al.aligned, summary)
    } else {
        (b.clone(), Vec::new())
    };
    if !spec.align && spec.method == FusionMethod::Ewc {
        warnings.push("alignment disabled: hidden nodes are paired by index".into());
    }

    let (la, lb) = (a.network.layers(), b_aligned.network.layers());
    let mut layers = Vec::with_capacity(la.len());
    for l in 0..hidden {
        let fused = match policies[l] {
            HiddenPolicy::Ewc => {
                let fa = &a.fisher.as_ref().expect("checked").layers()[l];
                let fb = &b_aligned.fisher.as_ref().expect("checked").layers()[l];
                ewc_fuse_layer(&la[l], &lb[l], fa, fb, spec.epsilon)?
            }
            p => ws_fuse_layer(&la[l], &lb[l], p)?,
        };
        layers.push(fused);
    }
    let (head, class_labels) = concat_output(
        a.network.output_layer(),
        a.network.class_labels(),
        b_aligned.network.output_layer(),
        b_aligned.network.class_labels(),
    )?;
    layers.push(head);
    let network = Network::new(layers, class_labels.clone())?;

    let fisher = match (&a.fisher, &b_aligned.fisher) {
        (Some(fa), Some(fb)) => {
            let mut fused = Vec::with_capacity(hidden + 1);
            for l in 0..hidden {
                let (x, y) = (&fa.layers()[l], &fb.layers()[l]);
                fused.push(LayerParams {
                    weights: &x.weights + &y.weights,
                    bias: &x.bias + &y.bias,
                });
            }
            fused.push(concat_fisher_head(&fa.layers()[hidden], &fb.layers()[hidden]));
            Some(FisherDiag::new(ParamSet { layers: fused })?)
        }
        _ => None,
    };

    let report = FusionReport {
        method: spec.method,
        hidden_policy: policies,
        aligned: spec.align && hidden > 0,
        alignment,
        zero_mean_checks: zero_mean,
        warnings,
        class_labels,
        accuracy: None,
        confusion: None,
    };
    Ok((
        TrainedModel {
            network,
            fisher,
            meta: None,
        },
        report,
    ))
}

fn pad_params(params: &ParamSet, hidden_widths: &[usize]) -> Result<ParamSet> {
    let hidden = params.layers.len() - 1;
    if hidden_widths.len() != hidden {
        return Err(Error::InvalidArgument(format!(
            "{} target widths for {hidden} hidden layers",
            hidden_widths.len()
        )));
    }
    for (l, &w) in hidden_widths.iter().enumerate() {
        let cur = params.layers[l].bias.len();
        if w < cur {
            return Err(Error::InvalidArgument(format!(
                "cannot shrink hidden layer {l} from {cur} to {w} units"
            )));
        }
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    for (l, p) in params.layers.iter().enumerate() {
        let (out, inp) = p.shape();
        let new_out = hidden_widths.get(l).copied().unwrap_or(out);
        let new_in = if l == 0 { inp } else { hidden_widths[l - 1] };
        let mut padded = LayerParams::zeros(new_out, new_in);
        padded.weights.slice_mut(ndarray::s![..out, ..inp]).assign(&p.weights);
        padded.bias.slice_mut(ndarray::s![..out]).assign(&p.bias);
        layers.push(padded);
    }
    Ok(ParamSet { layers })
}

/// Grows hidden layers to `hidden_widths` with zero-valued units. The new
/// units have zero incoming and outgoing weights, so outputs are unchanged.
pub fn pad_to_match(net: &Network, hidden_widths: &[usize]) -> Result<Network> {
    let params = pad_params(&ParamSet::from_network(net), hidden_widths)?;
    let layers = params
        .layers
        .into_iter()
        .zip(net.layers())
        .map(|(p, l)| DenseLayer::new(p.weights, p.bias, l.activation))
        .collect::<Result<Vec<_>>>()?;
    Network::new(layers, net.class_labels().to_vec())
}

/// Pads a model and its Fisher values; padded parameters get Fisher 0.
pub fn pad_model(model: &TrainedModel, hidden_widths: &[usize]) -> Result<TrainedModel> {
    Ok(TrainedModel {
        network: pad_to_match(&model.network, hidden_widths)?,
        fisher: model
            .fisher
            .as_ref()
            .map(|f| pad_params(f.params(), hidden_widths).and_then(FisherDiag::new))
            .transpose()?,
        meta: model.meta.clone(),
    })
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array1, Array2};

    use super::*;
    use crate::nnet::{init_network, Activation, Architecture};

    fn layer(seed: u64) -> DenseLayer {
        let net = init_network(&Architecture::mlp(4, &[], 3, Activation::Relu), vec![0, 1, 2], seed).unwrap();
        let mut l = net.layers()[0].clone();
        l.bias = array![0.1, -0.2, 0.3] * (seed as f64 + 1.0);
        l
    }

    fn fisher_like(l: &DenseLayer, f: impl Fn(usize) -> f64) -> LayerParams {
        let mut i = 0;
        let mut next = || {
            i += 1;
            f(i)
        };
        LayerParams {
            weights: Array2::from_shape_simple_fn(l.weights.dim(), &mut next),
            bias: Array1::from_shape_simple_fn(l.bias.len(), &mut next),
        }
    }

    #[test]
    fn ws_with_zero_partner_is_identity() {
        let a = layer(1);
        let mut zero = a.clone();
        zero.weights.fill(0.0);
        zero.bias.fill(0.0);
        assert_eq!(ws_fuse_layer(&a, &zero, HiddenPolicy::Sum).unwrap(), a);
    }

    #[test]
    fn ws_self_fusion() {
        let a = layer(2);
        let s = ws_fuse_layer(&a, &a, HiddenPolicy::Sum).unwrap();
        assert_eq!(s.weights, &a.weights * 2.0);
        assert_eq!(s.bias, &a.bias * 2.0);
        assert_eq!(ws_fuse_layer(&a, &a, HiddenPolicy::Average).unwrap(), a);
    }

    #[test]
    fn sum_minus_average_is_half_sum() {
        let (a, b) = (layer(3), layer(4));
        let s = ws_fuse_layer(&a, &b, HiddenPolicy::Sum).unwrap();
        let m = ws_fuse_layer(&a, &b, HiddenPolicy::Average).unwrap();
        let diff = &s.weights - &m.weights - &s.weights * 0.5;
        assert!(diff.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn ws_rejects_mismatch_and_ewc_policy() {
        let a = layer(1);
        let mut b = layer(2);
        b.activation = Activation::Sigmoid;
        assert!(ws_fuse_layer(&a, &b, HiddenPolicy::Sum).is_err());
        assert!(ws_fuse_layer(&a, &a, HiddenPolicy::Ewc).is_err());
    }

    #[test]
    fn ewc_equal_fisher_is_average() {
        let (a, b) = (layer(5), layer(6));
        let f = fisher_like(&a, |i| 0.1 * i as f64);
        let fused = ewc_fuse_layer(&a, &b, &f, &f, DEFAULT_EPSILON).unwrap();
        let avg = ws_fuse_layer(&a, &b, HiddenPolicy::Average).unwrap();
        assert!((&fused.weights - &avg.weights).iter().all(|v| v.abs() < 1e-15));
        assert!((&fused.bias - &avg.bias).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn ewc_zero_partner_fisher_keeps_a() {
        let (a, b) = (layer(5), layer(6));
        let fa = fisher_like(&a, |i| 0.5 + i as f64);
        let fb = fisher_like(&a, |_| 0.0);
        assert_eq!(ewc_fuse_layer(&a, &b, &fa, &fb, DEFAULT_EPSILON).unwrap(), a);
    }

    #[test]
    fn ewc_self_fusion_and_symmetry() {
        let (a, b) = (layer(7), layer(8));
        let fa = fisher_like(&a, |i| (i % 5) as f64);
        let fb = fisher_like(&a, |i| (i % 3) as f64 * 0.7);
        assert_eq!(ewc_fuse_layer(&a, &a, &fa, &fb, DEFAULT_EPSILON).unwrap(), a);
        let ab = ewc_fuse_layer(&a, &b, &fa, &fb, DEFAULT_EPSILON).unwrap();
        let ba = ewc_fuse_layer(&b, &a, &fb, &fa, DEFAULT_EPSILON).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn ewc_rejects_negative_fisher() {
        let a = layer(1);
        let f = fisher_like(&a, |i| if i == 3 { -1.0 } else { 1.0 });
        assert!(matches!(ewc_fuse_layer(&a, &a, &f, &f, 0.0), Err(Error::BadFisher { .. })));
    }

    #[test]
    fn concat_head_shapes_and_overlap() {
        let net_a = init_network(&Architecture::mlp(4, &[6], 5, Activation::Softmax), vec![0, 1, 2, 3, 4], 1).unwrap();
        let net_b = init_network(&Architecture::mlp(4, &[6], 5, Activation::Softmax), vec![5, 6, 7, 8, 9], 2).unwrap();
        let (head, labels) = concat_output(
            net_a.output_layer(),
            net_a.class_labels(),
            net_b.output_layer(),
            net_b.class_labels(),
        )
        .unwrap();
        assert_eq!(head.out_width(), 10);
        assert_eq!(labels, (0..10).collect::<Vec<_>>());
        let h = array![0.3, 0.0, 1.2, 0.5, 0.1, 0.9];
        let logits = head.weights.dot(&h) + &head.bias;
        let logits_a = net_a.output_layer().weights.dot(&h) + &net_a.output_layer().bias;
        assert_eq!(logits.slice(ndarray::s![..5]), logits_a);

        let err = concat_output(
            net_a.output_layer(),
            net_a.class_labels(),
            net_a.output_layer(),
            &[9, 8, 7, 6, 4],
        );
        assert!(matches!(err, Err(Error::Class(_))));
    }

    #[test]
    fn spec_policy_validation() {
        let mut s = FusionSpec::ws();
        s.hidden_policy = vec![HiddenPolicy::Ewc];
        assert!(s.policies(2).is_err());
        let mut s = FusionSpec::ewc();
        s.hidden_policy = vec![HiddenPolicy::Sum];
        assert!(s.policies(1).is_err());
        let mut s = FusionSpec::ws();
        s.hidden_policy = vec![HiddenPolicy::Average, HiddenPolicy::Sum];
        assert_eq!(s.policies(2).unwrap(), vec![HiddenPolicy::Average, HiddenPolicy::Sum]);
        assert!(s.policies(3).is_err());
        s.hidden_policy.clear();
        assert_eq!(s.policies(3).unwrap(), vec![HiddenPolicy::Sum; 3]);
    }

    #[test]
    fn pad_noop_and_shrink() {
        let net = init_network(&Architecture::mlp(4, &[6, 3], 2, Activation::Softmax), vec![0, 1], 1).unwrap();
        assert_eq!(pad_to_match(&net, &[6, 3]).unwrap(), net);
        assert!(pad_to_match(&net, &[5, 3]).is_err());
        assert!(pad_to_match(&net, &[6]).is_err());
        let padded = pad_to_match(&net, &[8, 7]).unwrap();
        assert_eq!(padded.hidden_widths(), vec![8, 7]);
        assert!(padded.layers()[1].weights.slice(ndarray::s![.., 6..]).iter().all(|&v| v == 0.0));
    }
}
