//! Hidden-node correspondence between two networks of equal architecture.
//!
//! Pairing node `k` of A with node `l` of B costs the Fisher-weighted squared
//! distance between their parameter vectors,
//! `Σ_i F_A F_B / (F_A + F_B) · (θ_A − θ_B)²`, which is the loss increase of
//! merging the two nodes by the Fisher-weighted mean. Layers are zipped from
//! the input side outward so each layer's presynaptic columns are already in
//! A's order when its cost matrix is built.

mod hungarian;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::FisherDiag;
use crate::nnet::{LayerParams, Network, ParamSet, TrainedModel};

pub use hungarian::{assignment_cost, solve_assignment, solve_assignment_with_ties, AssignmentSolution};

/// Square, finite, non-negative cost matrix. Rows index nodes of A, columns
/// nodes of B.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(costs: Array2<f64>) -> Result<Self> {
        let (r, c) = costs.dim();
        if r != c {
            return Err(Error::Shape(format!("cost matrix is {r}x{c}, not square")));
        }
        if let Some(v) = costs.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "cost entries must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self(costs.as_standard_layout().into_owned()))
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[[row, col]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub(crate) fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("standard layout")
    }

    /// Cost of pairing every node with its same-index partner.
    pub fn diagonal_cost(&self) -> f64 {
        self.0.diag().sum()
    }
}

/// Which parameters of a node enter its pairing cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostScope {
    /// Incoming weights and bias.
    #[default]
    Presynaptic,
    /// Incoming weights, bias and outgoing weights (the node's column in the
    /// next layer).
    PresynapticAndPostsynaptic,
}

impl std::str::FromStr for CostScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "presynaptic" => Ok(CostScope::Presynaptic),
            "presynaptic_and_postsynaptic" | "both" => Ok(CostScope::PresynapticAndPostsynaptic),
            other => Err(Error::InvalidArgument(format!("unknown cost scope {other:?}"))),
        }
    }
}

/// One term of the pairing cost. A zero denominator contributes 0, the limit
/// of the closed form.
#[inline]
pub fn pair_term(fa: f64, fb: f64, theta_a: f64, theta_b: f64) -> f64 {
    let denom = fa + fb;
    if denom > 0.0 {
        let d = theta_a - theta_b;
        fa * fb / denom * d * d
    } else {
        0.0
    }
}

/// Per-node parameter vectors: row `k` holds node `k`'s incoming weights,
/// its bias and, optionally, its outgoing weights.
fn node_vectors(layer: &LayerParams, next: Option<&Array2<f64>>) -> Array2<f64> {
    let (out, inp) = layer.shape();
    let post = next.map_or(0, |n| n.nrows());
    let mut m = Array2::zeros((out, inp + 1 + post));
    for k in 0..out {
        let mut row = m.row_mut(k);
        row.slice_mut(ndarray::s![..inp]).assign(&layer.weights.row(k));
        row[inp] = layer.bias[k];
        if let Some(n) = next {
            row.slice_mut(ndarray::s![inp + 1..]).assign(&n.column(k));
        }
    }
    m
}

fn row_cost(ta: ArrayView1<f64>, fa: ArrayView1<f64>, tb: ArrayView1<f64>, fb: ArrayView1<f64>) -> f64 {
    let (ta, fa, tb, fb) = (
        ta.as_slice().expect("contiguous"),
        fa.as_slice().expect("contiguous"),
        tb.as_slice().expect("contiguous"),
        fb.as_slice().expect("contiguous"),
    );
    let mut s = 0.0;
    for i in 0..ta.len() {
        s += pair_term(fa[i], fb[i], ta[i], tb[i]);
    }
    s
}

/// Inputs for one hidden layer of each network.
#[derive(Clone, Copy, Debug)]
pub struct LayerContext<'a> {
    pub params: &'a LayerParams,
    pub fisher: &'a LayerParams,
    /// Next layer's weights and Fisher, used only by
    /// [`CostScope::PresynapticAndPostsynaptic`].
    pub next: Option<(&'a Array2<f64>, &'a Array2<f64>)>,
}

type NextLayer<'a> = (Option<&'a Array2<f64>>, Option<&'a Array2<f64>>);

fn postsynaptic<'a>(ctx: &LayerContext<'a>, scope: CostScope) -> Result<NextLayer<'a>> {
    match (scope, ctx.next) {
        (CostScope::Presynaptic, _) => Ok((None, None)),
        (CostScope::PresynapticAndPostsynaptic, Some((w, f))) => {
            if w.ncols() != ctx.params.shape().0 || w.dim() != f.dim() {
                return Err(Error::Shape("next-layer weights do not match the layer".into()));
            }
            Ok((Some(w), Some(f)))
        }
        (CostScope::PresynapticAndPostsynaptic, None) => {
            Err(Error::InvalidArgument("postsynaptic cost needs the next layer".into()))
        }
    }
}

/// Cost matrix for pairing the nodes of one hidden layer of A with those of B.
pub fn pair_cost(a: LayerContext<'_>, b: LayerContext<'_>, scope: CostScope) -> Result<CostMatrix> {
    for ctx in [&a, &b] {
        if ctx.params.shape() != ctx.fisher.shape() || ctx.params.bias.len() != ctx.fisher.bias.len() {
            return Err(Error::Shape("layer and Fisher shapes differ".into()));
        }
    }
    if a.params.shape() != b.params.shape() {
        return Err(Error::Shape(format!(
            "layers are {:?} and {:?}",
            a.params.shape(),
            b.params.shape()
        )));
    }
    let (wa_next, fa_next) = postsynaptic(&a, scope)?;
    let (wb_next, fb_next) = postsynaptic(&b, scope)?;
    if let (Some(x), Some(y)) = (wa_next, wb_next) {
        if x.nrows() != y.nrows() {
            return Err(Error::Shape("next layers differ in width".into()));
        }
    }
    let ta = node_vectors(a.params, wa_next);
    let fa = node_vectors(a.fisher, fa_next);
    let tb = node_vectors(b.params, wb_next);
    let fb = node_vectors(b.fisher, fb_next);

    let n = ta.nrows();
    let mut costs = Array2::zeros((n, n));
    for (k, mut row) in costs.axis_iter_mut(Axis(0)).enumerate() {
        for l in 0..n {
            row[l] = row_cost(ta.row(k), fa.row(k), tb.row(l), fb.row(l));
        }
    }
    CostMatrix::new(costs)
}

/// Unweighted squared distance between the node vectors of A and B, used to
/// break ties between equally cheap pairings (nodes whose Fisher is zero
/// cost nothing to pair with anything).
pub fn pair_distance(a: LayerContext<'_>, b: LayerContext<'_>, scope: CostScope) -> Result<CostMatrix> {
    if a.params.shape() != b.params.shape() {
        return Err(Error::Shape(format!(
            "layers are {:?} and {:?}",
            a.params.shape(),
            b.params.shape()
        )));
    }
    let (wa_next, _) = postsynaptic(&a, scope)?;
    let (wb_next, _) = postsynaptic(&b, scope)?;
    let ta = node_vectors(a.params, wa_next);
    let tb = node_vectors(b.params, wb_next);
    if ta.ncols() != tb.ncols() {
        return Err(Error::Shape("next layers differ in width".into()));
    }
    let n = ta.nrows();
    let mut d = Array2::zeros((n, n));
    for k in 0..n {
        for l in 0..n {
            d[[k, l]] = ta.row(k).iter().zip(tb.row(l)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
    }
    CostMatrix::new(d)
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::InvalidArgument(format!(
            "permutation has {} entries for a layer of width {n}",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidArgument("permutation is not a bijection".into()));
        }
    }
    Ok(())
}

/// Reorders hidden layer `layer` of a parameter set: new node `k` is old node
/// `perm[k]` (rows of this layer, columns of the next).
pub fn permute_params(params: &ParamSet, layer: usize, perm: &[usize]) -> Result<ParamSet> {
    if layer + 1 >= params.layers.len() {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} is not a hidden layer"
        )));
    }
    check_permutation(perm, params.layers[layer].bias.len())?;
    let mut out = params.clone();
    let cur = &mut out.layers[layer];
    cur.weights = params.layers[layer].weights.select(Axis(0), perm);
    cur.bias = params.layers[layer].bias.select(Axis(0), perm);
    out.layers[layer + 1].weights = params.layers[layer + 1].weights.select(Axis(1), perm);
    Ok(out)
}

/// Permutes the nodes of a hidden layer; the function computed by the
/// network is unchanged.
pub fn permute_hidden(net: &Network, layer: usize, perm: &[usize]) -> Result<Network> {
    let params = permute_params(&ParamSet::from_network(net), layer, perm)?;
    let mut out = net.clone();
    out.set_params(&params)?;
    Ok(out)
}

pub fn permute_fisher(fisher: &FisherDiag, layer: usize, perm: &[usize]) -> Result<FisherDiag> {
    FisherDiag::new(permute_params(fisher.params(), layer, perm)?)
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignOptions {
    pub scope: CostScope,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerAlignment {
    pub layer: usize,
    /// Cost of the same-index pairing, before permuting.
    pub cost_before: f64,
    pub solution: AssignmentSolution,
}

#[derive(Clone, Debug)]
pub struct Alignment {
    /// B with its hidden nodes (and Fisher) permuted into A's order.
    pub aligned: TrainedModel,
    pub layers: Vec<LayerAlignment>,
}

/// Input width, hidden stack and output activation must agree; the output
/// heads may differ in width since they are stacked, not merged.
pub(crate) fn require_same_architecture(a: &Network, b: &Network) -> Result<()> {
    let (x, y) = (a.architecture(), b.architecture());
    let hidden = |arch: &crate::nnet::Architecture| arch.layers[..arch.layers.len() - 1].to_vec();
    let out_act = |arch: &crate::nnet::Architecture| arch.layers.last().map(|l| l.activation);
    if x.input_width != y.input_width || hidden(&x) != hidden(&y) || out_act(&x) != out_act(&y) {
        return Err(Error::Architecture(format!(
            "architectures differ: {:?} vs {:?} (pad the narrower network first)",
            a.architecture(),
            b.architecture()
        )));
    }
    Ok(())
}

/// Greedy layer-by-layer alignment of B onto A, input side first.
pub fn align_networks(a: &TrainedModel, b: &TrainedModel, opts: AlignOptions) -> Result<Alignment> {
    require_same_architecture(&a.network, &b.network)?;
    let fa = a.fisher.as_ref().ok_or(Error::MissingFisher("A"))?;
    let mut fb = b.fisher.clone().ok_or(Error::MissingFisher("B"))?;
    let pa = ParamSet::from_network(&a.network);
    let mut pb = ParamSet::from_network(&b.network);
    fa.params().check_parallel(&a.network, "Fisher of A")?;
    fb.params().check_parallel(&b.network, "Fisher of B")?;

    let mut layers = Vec::with_capacity(a.network.hidden_count());
    for l in 0..a.network.hidden_count() {
        let ctx = |p: &'_ ParamSet, f: &'_ FisherDiag| -> (LayerParams, LayerParams, Array2<f64>, Array2<f64>) {
            (
                p.layers[l].clone(),
                f.layers()[l].clone(),
                p.layers[l + 1].weights.clone(),
                f.layers()[l + 1].weights.clone(),
            )
        };
        let (a_p, a_f, a_nw, a_nf) = ctx(&pa, fa);
        let (b_p, b_f, b_nw, b_nf) = ctx(&pb, &fb);
        let ctx_a = LayerContext {
            params: &a_p,
            fisher: &a_f,
            next: Some((&a_nw, &a_nf)),
        };
        let ctx_b = LayerContext {
            params: &b_p,
            fisher: &b_f,
            next: Some((&b_nw, &b_nf)),
        };
        let cost = pair_cost(ctx_a, ctx_b, opts.scope)?;
        let solution = solve_assignment_with_ties(&cost, &pair_distance(ctx_a, ctx_b, opts.scope)?);
        pb = permute_params(&pb, l, &solution.permutation)?;
        fb = permute_fisher(&fb, l, &solution.permutation)?;
        layers.push(LayerAlignment {
            layer: l,
            cost_before: cost.diagonal_cost(),
            solution,
        });
    }

    let mut network = b.network.clone();
    network.set_params(&pb)?;
    Ok(Alignment {
        aligned: TrainedModel {
            network,
            fisher: Some(fb),
            meta: b.meta.clone(),
        },
        layers,
    })
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::nnet::{init_network, Activation, Architecture};

    fn layer(w: Array2<f64>, b: ndarray::Array1<f64>) -> LayerParams {
        LayerParams { weights: w, bias: b }
    }

    #[test]
    fn identical_layers_have_zero_diagonal() {
        let p = layer(array![[0.1, -0.2], [0.3, 0.4], [0.0, 0.5]], array![0.1, 0.0, -0.1]);
        let f = layer(array![[1.0, 2.0], [0.5, 0.1], [3.0, 0.0]], array![1.0, 1.0, 0.2]);
        let ctx = LayerContext {
            params: &p,
            fisher: &f,
            next: None,
        };
        let c = pair_cost(ctx, ctx, CostScope::Presynaptic).unwrap();
        assert!(c.as_array().diag().iter().all(|&v| v == 0.0));
        assert!(c.get(0, 1) > 0.0);
    }

    #[test]
    fn unit_fisher_gives_half_squared_distance() {
        let pa = layer(array![[0.1, -0.2], [0.3, 0.4]], array![0.1, 0.0]);
        let pb = layer(array![[0.5, 0.2], [-0.3, 0.1]], array![0.0, 0.2]);
        let ones = layer(Array2::ones((2, 2)), ndarray::Array1::ones(2));
        let c = pair_cost(
            LayerContext {
                params: &pa,
                fisher: &ones,
                next: None,
            },
            LayerContext {
                params: &pb,
                fisher: &ones,
                next: None,
            },
            CostScope::Presynaptic,
        )
        .unwrap();
        for k in 0..2 {
            for l in 0..2 {
                let mut d2 = (&pa.weights.row(k) - &pb.weights.row(l)).mapv(|v| v * v).sum();
                d2 += (pa.bias[k] - pb.bias[l]).powi(2);
                assert!((c.get(k, l) - 0.5 * d2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_fisher_terms_contribute_nothing() {
        assert_eq!(pair_term(0.0, 0.0, 1.0, -1.0), 0.0);
        assert_eq!(pair_term(2.0, 0.0, 1.0, -1.0), 0.0);
    }

    #[test]
    fn cost_matrix_validation() {
        assert!(CostMatrix::new(Array2::zeros((2, 3))).is_err());
        assert!(CostMatrix::new(array![[f64::NAN]]).is_err());
        assert!(CostMatrix::new(array![[-1.0]]).is_err());
    }

    #[test]
    fn permutation_validation() {
        let net = init_network(&Architecture::mlp(3, &[4], 2, Activation::Softmax), vec![0, 1], 0).unwrap();
        assert!(permute_hidden(&net, 0, &[0, 1, 2]).is_err());
        assert!(permute_hidden(&net, 0, &[0, 1, 1, 2]).is_err());
        assert!(permute_hidden(&net, 0, &[0, 1, 2, 4]).is_err());
        assert!(permute_hidden(&net, 1, &[1, 0]).is_err());
    }

    #[test]
    fn identity_and_inverse() {
        let net = init_network(&Architecture::mlp(3, &[4, 5], 2, Activation::Softmax), vec![0, 1], 9).unwrap();
        assert_eq!(permute_hidden(&net, 1, &[0, 1, 2, 3, 4]).unwrap(), net);
        let perm = [3, 0, 4, 1, 2];
        let p = permute_hidden(&net, 1, &perm).unwrap();
        assert_ne!(p, net);
        assert_eq!(permute_hidden(&p, 1, &invert_permutation(&perm)).unwrap(), net);
    }

    #[test]
    fn align_requires_fisher_and_matching_architecture() {
        let a = TrainedModel::untrained(
            init_network(&Architecture::mlp(3, &[4], 2, Activation::Softmax), vec![0, 1], 0).unwrap(),
        );
        assert!(matches!(align_networks(&a, &a, AlignOptions::default()), Err(Error::MissingFisher("A"))));
        let b = TrainedModel::untrained(
            init_network(&Architecture::mlp(3, &[5], 2, Activation::Softmax), vec![0, 1], 0).unwrap(),
        );
        assert!(matches!(align_networks(&a, &b, AlignOptions::default()), Err(Error::Architecture(_))));
    }
}
