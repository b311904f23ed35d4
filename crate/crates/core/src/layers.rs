//! Per-layer co-evolution of vertices and edges.
//!
//! Each layer aggregates neighbours through channel-normalized edges, maps the
//! concatenation through the vertex network, then re-weights every edge
//! channel by a learned metric score relative to the row's weighted average
//! before L1-normalizing across channels.

use crate::data::Episode;
use crate::error::{Error, Result};
use crate::graph::{apply_linear, embed, init_edges, init_high_order_channel, relative_features, Edges, EpisodeGraph, PairIndex, EDGE_EPS};
use crate::params::{Bound, LayerParams, MetricInput, MetricNet, ModelConfig, ModelParams};
use crate::tensor::{Real, Tape, Tensor, Var};

const STANDARDIZE_EPS: f64 = 1e-5;
const CHANNEL_NAMES: [&str; 3] = ["high-order", "similarity", "dissimilarity"];

/// Metric-network outputs of one layer on the `M x M` grid.
#[derive(Debug, Clone, Copy)]
pub struct LayerScores<'t, T> {
    /// `f_h` on relative-feature distances.
    pub high: Option<Var<'t, T>>,
    /// `f_p` on vertex-feature distances.
    pub pair: Option<Var<'t, T>>,
    /// `1 - f_p`, taken as the sigmoid of the negated logit so it does not
    /// round to zero when `f_p` saturates.
    pub pair_complement: Option<Var<'t, T>>,
}

impl<'t, T: Real> LayerScores<'t, T> {
    /// Scores given directly as values in (0, 1).
    pub fn from_values(high: Option<Var<'t, T>>, pair: Option<Var<'t, T>>) -> Result<Self> {
        Ok(Self {
            high,
            pair,
            pair_complement: pair.map(|f| f.one_minus()).transpose()?,
        })
    }
}

/// Tape handles for every level of a forward pass.
#[derive(Debug, Clone)]
pub struct GraphVars<'t, T> {
    pub u: Vec<Var<'t, T>>,
    pub v: Vec<Var<'t, T>>,
    pub e: Vec<Edges<'t, T>>,
    /// `scores[l - 1]` belongs to layer `l`.
    pub scores: Vec<LayerScores<'t, T>>,
}

impl<'t, T: Real> GraphVars<'t, T> {
    pub fn layer_count(&self) -> usize {
        self.scores.len()
    }

    pub fn values(&self, config: &ModelConfig) -> EpisodeGraph<T> {
        EpisodeGraph {
            m: self.u[0].shape()[0],
            channels: config.channels,
            u: self.u.iter().map(Var::value).collect(),
            v: self.v.iter().map(Var::value).collect(),
            e: self.e.iter().map(Edges::values).collect(),
        }
    }
}

/// Two leaky-relu hidden layers and a linear output: the pre-sigmoid logit, `[P x in] -> [P x 1]`.
pub fn metric_logits<'t, T: Real>(input: &Var<'t, T>, net: MetricNet, bound: &Bound<'t, T>, slope: f64) -> Result<Var<'t, T>> {
    let h = apply_linear(input, net.layers[0], bound)?.leaky_relu(slope)?;
    let h = apply_linear(&h, net.layers[1], bound)?.leaky_relu(slope)?;
    apply_linear(&h, net.layers[2], bound)
}

/// Two leaky-relu hidden layers and a sigmoid: `[P x in] -> [P x 1]`.
pub fn metric_mlp<'t, T: Real>(input: &Var<'t, T>, net: MetricNet, bound: &Bound<'t, T>, slope: f64) -> Result<Var<'t, T>> {
    Ok(metric_logits(input, net, bound, slope)?.sigmoid()?)
}

fn pair_logits<'t, T: Real>(
    x: &Var<'t, T>,
    net: MetricNet,
    pairs: &PairIndex,
    bound: &Bound<'t, T>,
    cfg: &ModelConfig,
) -> Result<Var<'t, T>> {
    let diff = pairs.differences(x)?;
    let input = match cfg.metric_input {
        MetricInput::Distance => diff.row_l2_norm()?.reshape([pairs.len(), 1])?,
        MetricInput::AbsDiff => diff.abs()?,
    };
    metric_logits(&input, net, bound, cfg.leaky_slope)
}

/// Metric scores for every vertex pair of `x`, as a symmetric `[M x M]` matrix.
pub fn metric_scores<'t, T: Real>(
    x: &Var<'t, T>,
    net: MetricNet,
    pairs: &PairIndex,
    bound: &Bound<'t, T>,
    cfg: &ModelConfig,
) -> Result<Var<'t, T>> {
    pairs.expand(&pair_logits(x, net, pairs, bound, cfg)?.sigmoid()?)
}

/// Like [`metric_scores`], also returning `1 - score` computed without cancellation.
pub fn metric_scores_with_complement<'t, T: Real>(
    x: &Var<'t, T>,
    net: MetricNet,
    pairs: &PairIndex,
    bound: &Bound<'t, T>,
    cfg: &ModelConfig,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let z = pair_logits(x, net, pairs, bound, cfg)?;
    Ok((pairs.expand(&z.sigmoid()?)?, pairs.expand(&z.neg()?.sigmoid()?)?))
}

/// Score of a single pair `(a, b)` under one metric network.
pub fn metric_score<T: Real>(params: &ModelParams<T>, net: MetricNet, a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument("metric_score inputs differ in length".into()));
    }
    let tape = Tape::new();
    let bound = params.bind_frozen(&tape);
    let x = tape.constant(Tensor::new([2, a.len()], [a, b].concat())?);
    let s = metric_scores(&x, net, &PairIndex::new(2), &bound, params.config())?;
    Ok(s.value().at2(0, 1))
}

fn channel_sums<'t, T: Real>(edges: &Edges<'t, T>) -> Result<Var<'t, T>> {
    let present = edges.present();
    let (first, rest) = present
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("edge level has no channels".into()))?;
    rest.iter().try_fold(*first, |acc, e| Ok(acc.add(e)?))
}

fn check_floor<T: Real>(t: &Tensor<T>, what: impl Fn(usize) -> String) -> Result<()> {
    match t.data().iter().position(|x| !(x.as_f64() >= EDGE_EPS)) {
        Some(pos) => Err(Error::Numeric(format!("{} is {} (< {EDGE_EPS:e})", what(pos), t.data()[pos].as_f64()))),
        None => Ok(()),
    }
}

/// Divides every present channel by the per-pair sum over channels.
///
/// With a single channel the ratio is `e / e`, so the result is the constant
/// indicator `e > 0`; pairs with no mass carry no message instead of failing.
pub fn channel_normalize<'t, T: Real>(edges: &Edges<'t, T>) -> Result<Edges<'t, T>> {
    if edges.present().len() == 1 {
        let indicator = |e: Option<Var<'t, T>>| {
            e.map(|e| {
                let mask = e.value().map(|x| if x > T::zero() { T::one() } else { T::zero() });
                e.tape().constant(mask)
            })
        };
        return Ok(Edges {
            high: indicator(edges.high),
            sim: indicator(edges.sim),
            dis: indicator(edges.dis),
        });
    }
    let sums = channel_sums(edges)?;
    let m = sums.shape()[0];
    check_floor(&sums.value(), |pos| format!("channel sum at edge ({}, {})", pos / m, pos % m))?;
    let norm = |e: Option<Var<'t, T>>| -> Result<Option<Var<'t, T>>> {
        e.map(|e| Ok(e.div(&sums)?)).transpose()
    };
    Ok(Edges {
        high: norm(edges.high)?,
        sim: norm(edges.sim)?,
        dis: norm(edges.dis)?,
    })
}

/// `[sum_j e1_ij v_j | sum_j e2_ij u_j | sum_j e3_ij u_j]` over present channels.
pub fn aggregate<'t, T: Real>(u: &Var<'t, T>, v: &Var<'t, T>, normalized: &Edges<'t, T>) -> Result<Var<'t, T>> {
    let mut parts = Vec::with_capacity(3);
    if let Some(e) = normalized.high {
        parts.push(e.matmul(v)?);
    }
    if let Some(e) = normalized.sim {
        parts.push(e.matmul(u)?);
    }
    if let Some(e) = normalized.dis {
        parts.push(e.matmul(u)?);
    }
    Ok(u.tape().concat_cols(&parts)?)
}

/// Computes `(u^l, v^l)` from the previous level.
pub fn vertex_update<'t, T: Real>(
    u_prev: &Var<'t, T>,
    v_prev: &Var<'t, T>,
    e_prev: &Edges<'t, T>,
    layer: &LayerParams,
    bound: &Bound<'t, T>,
    cfg: &ModelConfig,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let mut agg = aggregate(u_prev, v_prev, &channel_normalize(e_prev)?)?;
    if cfg.self_feature {
        agg = u_prev.tape().concat_cols(&[*u_prev, agg])?;
    }
    let mut h = apply_linear(&agg, layer.vertex.linear, bound)?;
    if let Some((scale, shift)) = layer.vertex.norm {
        h = h
            .standardize_cols(STANDARDIZE_EPS)?
            .mul_row(&bound.get(scale))?
            .add_row(&bound.get(shift))?;
    }
    let u = h.leaky_relu(cfg.leaky_slope)?;
    let v = relative_features(&u)?;
    Ok((u, v))
}

/// `F_ij e_ij / (sum_k F_ik e_ik / sum_k e_ik)` for one channel.
fn reweight_channel<'t, T: Real>(e: &Var<'t, T>, f: &Var<'t, T>, channel: usize) -> Result<Var<'t, T>> {
    let weighted = f.mul(e)?;
    let num = weighted.sum_cols()?;
    let den = e.sum_cols()?;
    check_floor(&den.value(), |i| format!("{} edge mass of row {i}", CHANNEL_NAMES[channel]))?;
    let avg = num.div(&den)?;
    check_floor(&avg.value(), |i| format!("{} weighted average of row {i}", CHANNEL_NAMES[channel]))?;
    let ones = e.tape().constant(Tensor::full([avg.shape()[0]], T::one()));
    Ok(weighted.scale_rows(&ones.div(&avg)?)?)
}

/// Edge re-weighting and cross-channel L1 normalization given metric scores.
///
/// The high-order channel uses `f_high`, similarity uses `f_pair` and
/// dissimilarity uses `1 - f_pair`.
pub fn reweight_edges<'t, T: Real>(
    e_prev: &Edges<'t, T>,
    f_high: Option<&Var<'t, T>>,
    f_pair: Option<&Var<'t, T>>,
) -> Result<Edges<'t, T>> {
    reweight_scored(e_prev, &LayerScores::from_values(f_high.copied(), f_pair.copied())?)
}

/// [`reweight_edges`] with the complement score supplied by `scores`.
pub fn reweight_scored<'t, T: Real>(e_prev: &Edges<'t, T>, scores: &LayerScores<'t, T>) -> Result<Edges<'t, T>> {
    let need = |f: Option<Var<'t, T>>, name: &str| {
        f.ok_or_else(|| Error::InvalidArgument(format!("{name} channel present but no metric scores given")))
    };
    let high = e_prev
        .high
        .map(|e| reweight_channel(&e, &need(scores.high, "high-order")?, 0))
        .transpose()?;
    let sim = e_prev
        .sim
        .map(|e| reweight_channel(&e, &need(scores.pair, "similarity")?, 1))
        .transpose()?;
    let dis = e_prev
        .dis
        .map(|e| reweight_channel(&e, &need(scores.pair_complement, "dissimilarity")?, 2))
        .transpose()?;
    channel_normalize(&Edges { high, sim, dis })
}

/// Computes `e^l` from `(u^l, v^l)` and `e^{l-1}`; also returns the scores.
pub fn edge_update<'t, T: Real>(
    u: &Var<'t, T>,
    v: &Var<'t, T>,
    e_prev: &Edges<'t, T>,
    layer: &LayerParams,
    pairs: &PairIndex,
    bound: &Bound<'t, T>,
    cfg: &ModelConfig,
) -> Result<(Edges<'t, T>, LayerScores<'t, T>)> {
    let pair = layer
        .pair
        .map(|net| metric_scores_with_complement(u, net, pairs, bound, cfg))
        .transpose()?;
    let scores = LayerScores {
        high: layer.high.map(|net| metric_scores(v, net, pairs, bound, cfg)).transpose()?,
        pair: pair.map(|(f, _)| f),
        pair_complement: pair.map(|(_, g)| g),
    };
    let e = reweight_scored(e_prev, &scores)?;
    Ok((e, scores))
}

/// Full inference pass, keeping every level on the tape.
pub fn forward<'t, T: Real>(
    tape: &'t Tape<T>,
    episode: &Episode,
    params: &ModelParams<T>,
    bound: &Bound<'t, T>,
) -> Result<GraphVars<'t, T>> {
    let cfg = params.config();
    let pairs = PairIndex::new(episode.vertex_count());
    let u0 = embed(tape, episode, params, bound)?;
    let v0 = relative_features(&u0)?;
    let e1 = if cfg.channels.high {
        Some(init_high_order_channel(&v0, &pairs)?)
    } else {
        None
    };
    let e0 = init_edges(tape, episode, e1, cfg.channels)?;

    let layers = params.layout().layers.len();
    let mut out = GraphVars {
        u: Vec::with_capacity(layers + 1),
        v: Vec::with_capacity(layers + 1),
        e: Vec::with_capacity(layers + 1),
        scores: Vec::with_capacity(layers),
    };
    out.u.push(u0);
    out.v.push(v0);
    out.e.push(e0);
    for layer in &params.layout().layers {
        let (u_prev, v_prev, e_prev) = (*out.u.last().unwrap(), *out.v.last().unwrap(), *out.e.last().unwrap());
        let (u, v) = vertex_update(&u_prev, &v_prev, &e_prev, layer, bound, cfg)?;
        let (e, scores) = edge_update(&u, &v, &e_prev, layer, &pairs, bound, cfg)?;
        out.u.push(u);
        out.v.push(v);
        out.e.push(e);
        out.scores.push(scores);
    }
    Ok(out)
}

/// Forward pass without gradients, returned as plain tensors.
pub fn forward_values<T: Real>(episode: &Episode, params: &ModelParams<T>) -> Result<EpisodeGraph<T>> {
    let tape = Tape::new();
    let bound = params.bind_frozen(&tape);
    Ok(forward(&tape, episode, params, &bound)?.values(params.config()))
}
