//! Label readout, episodic cross-entropy, manifold loss and their sum.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Episode;
use crate::error::{Error, Result};
use crate::graph::{EdgeValues, EpisodeGraph};
use crate::layers::{forward, GraphVars};
use crate::params::{Bound, ChannelSet, ModelParams};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Edge channel read out as class evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutChannel {
    #[default]
    Similarity,
    HighOrder,
    /// Negated dissimilarity mass. Only reached as a fallback for models
    /// without a similarity or high-order channel.
    Dissimilarity,
}

impl ReadoutChannel {
    /// The requested channel if the model has it, else similarity, then
    /// high-order, then dissimilarity.
    pub fn resolve(self, channels: ChannelSet) -> ReadoutChannel {
        let has = |c: ReadoutChannel| match c {
            ReadoutChannel::Similarity => channels.sim,
            ReadoutChannel::HighOrder => channels.high,
            ReadoutChannel::Dissimilarity => channels.dis,
        };
        [self, ReadoutChannel::Similarity, ReadoutChannel::HighOrder, ReadoutChannel::Dissimilarity]
            .into_iter()
            .find(|&c| has(c))
            .unwrap_or(self)
    }

    fn pick<'a, X>(self, high: &'a Option<X>, sim: &'a Option<X>, dis: &'a Option<X>) -> Option<&'a X> {
        match self {
            ReadoutChannel::Similarity => sim.as_ref(),
            ReadoutChannel::HighOrder => high.as_ref(),
            ReadoutChannel::Dissimilarity => dis.as_ref(),
        }
    }

    fn sign(self) -> f64 {
        if self == ReadoutChannel::Dissimilarity {
            -1.0
        } else {
            1.0
        }
    }
}

impl fmt::Display for ReadoutChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReadoutChannel::Similarity => "similarity",
            ReadoutChannel::HighOrder => "high_order",
            ReadoutChannel::Dissimilarity => "dissimilarity",
        })
    }
}

impl FromStr for ReadoutChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "similarity" | "sim" => Ok(ReadoutChannel::Similarity),
            "high_order" | "high-order" | "high" => Ok(ReadoutChannel::HighOrder),
            "dissimilarity" | "dis" => Ok(ReadoutChannel::Dissimilarity),
            _ => Err(Error::Config(format!("unknown readout channel `{s}`"))),
        }
    }
}

/// `[M x N]` indicator of visible support vertices per class slot.
fn support_membership<T: Real>(episode: &Episode) -> Result<Tensor<T>> {
    let (m, n) = (episode.vertex_count(), episode.n_way());
    let mut data = vec![T::zero(); m * n];
    for j in (0..m).filter(|&j| episode.is_visible(j)) {
        data[j * n + episode.slot(j)] = T::one();
    }
    if let Some(c) = (0..n).find(|&c| !(0..m).any(|j| data[j * n + c] != T::zero())) {
        return Err(Error::InvalidArgument(format!("class slot {c} has no visible support vertex")));
    }
    Ok(Tensor::new([m, n], data)?)
}

fn query_rows(episode: &Episode) -> Vec<usize> {
    episode.query_vertices().collect()
}

/// Per-query class evidence `[Q x N]`: summed edge weight to each class's
/// visible support. Queries are never support, so `j != i` holds by construction.
pub fn readout_logits<'t, T: Real>(edge: &Var<'t, T>, episode: &Episode, sign: f64) -> Result<Var<'t, T>> {
    let b = edge.tape().constant(support_membership(episode)?);
    let logits = edge.gather_rows(&query_rows(episode))?.matmul(&b)?;
    Ok(if sign < 0.0 { logits.neg()? } else { logits })
}

/// Per-layer query class probabilities and the final hard labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `probs[l - 1]` is the `[Q x N]` softmax at layer `l`.
    pub probs: Vec<Tensor<f64>>,
    /// Argmax of the last layer (lowest slot wins ties).
    pub labels: Vec<usize>,
}

impl Prediction {
    pub fn layer_labels(&self, layer: usize) -> Vec<usize> {
        let p = &self.probs[layer - 1];
        (0..p.shape()[0]).map(|q| argmax(p.row(q))).collect()
    }

    /// Fraction of queries labelled correctly at `layer` (1-based).
    pub fn layer_accuracy(&self, layer: usize, truth: &[usize]) -> f64 {
        accuracy(&self.layer_labels(layer), truth)
    }

    pub fn accuracy(&self, truth: &[usize]) -> f64 {
        accuracy(&self.labels, truth)
    }
}

fn accuracy(labels: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = labels.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Class probabilities for one query given its edge weights to visible supports,
/// listed as `(class slot, weight)`.
pub fn readout_probabilities(n_way: usize, weights: &[(usize, f64)]) -> Vec<f64> {
    let mut logits = vec![0.0; n_way];
    for &(c, w) in weights {
        logits[c] += w;
    }
    softmax_row(&logits)
}

/// Predictions from a finished graph at every layer `1..=L`.
pub fn predict_labels<T: Real>(graph: &EpisodeGraph<T>, episode: &Episode, readout: ReadoutChannel) -> Result<Prediction> {
    let readout = readout.resolve(graph.channels);
    let membership = support_membership::<f64>(episode)?;
    let n = episode.n_way();
    let mut probs = Vec::with_capacity(graph.layer_count());
    for level in &graph.e[1..] {
        let EdgeValues { high, sim, dis } = level;
        let e = readout
            .pick(high, sim, dis)
            .ok_or_else(|| Error::Config(format!("readout channel {readout} is disabled")))?;
        let mut data = Vec::with_capacity(episode.query.len() * n);
        for i in episode.query_vertices() {
            let row = e.row(i);
            let mut logits = vec![0.0; n];
            for (j, w) in row.iter().enumerate() {
                for (c, l) in logits.iter_mut().enumerate() {
                    *l += membership.at2(j, c) * w.as_f64();
                }
            }
            logits.iter_mut().for_each(|l| *l *= readout.sign());
            data.extend(softmax_row(&logits));
        }
        probs.push(Tensor::new([episode.query.len(), n], data)?);
    }
    let last = probs
        .last()
        .ok_or_else(|| Error::InvalidArgument("prediction needs at least one layer".into()))?;
    let labels = (0..last.shape()[0]).map(|q| argmax(last.row(q))).collect();
    Ok(Prediction { probs, labels })
}

/// Sum over layers `1..=L` of the mean query negative log-likelihood.
/// Returns the scalar and the per-layer values.
pub fn episodic_ce<'t, T: Real>(
    graph: &GraphVars<'t, T>,
    episode: &Episode,
    readout: ReadoutChannel,
    channels: ChannelSet,
) -> Result<(Var<'t, T>, Vec<f64>)> {
    let readout = readout.resolve(channels);
    let n = episode.n_way();
    let picks: Vec<usize> = episode
        .query_slots()
        .iter()
        .enumerate()
        .map(|(q, &y)| q * n + y)
        .collect();
    let mut total: Option<Var<'t, T>> = None;
    let mut per_layer = Vec::with_capacity(graph.layer_count());
    for level in &graph.e[1..] {
        let e = readout
            .pick(&level.high, &level.sim, &level.dis)
            .ok_or_else(|| Error::Config(format!("readout channel {readout} is disabled")))?;
        let logp = readout_logits(e, episode, readout.sign())?.log_softmax()?;
        let nll = logp.gather(&picks, [picks.len()])?.mean()?.neg()?;
        per_layer.push(nll.value().item().as_f64());
        total = Some(match total {
            Some(t) => t.add(&nll)?,
            None => nll,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidArgument("cross-entropy needs at least one layer".into()))?;
    Ok((total, per_layer))
}

/// Per-pair mean over each layer of `f_h e1^{l-1} + f_p e2^{l-1} + (1 - f_p) e3^{l-1}`,
/// summed over layers. Per-layer terms come back as `[high, sim, dis]`.
pub fn manifold_loss<'t, T: Real>(graph: &GraphVars<'t, T>) -> Result<(Var<'t, T>, Vec<[f64; 3]>)> {
    let tape = graph.u[0].tape();
    let mut total = tape.constant(Tensor::scalar(T::zero()));
    let mut per_layer = Vec::with_capacity(graph.layer_count());
    for (scores, e_prev) in graph.scores.iter().zip(&graph.e) {
        let mut terms = [0.0; 3];
        let pairs = [
            (scores.high, e_prev.high),
            (scores.pair, e_prev.sim),
            (scores.pair_complement, e_prev.dis),
        ];
        for (k, (f, e)) in pairs.into_iter().enumerate() {
            let (Some(f), Some(e)) = (f, e) else { continue };
            let term = f.mul(&e)?.mean()?;
            terms[k] = term.value().item().as_f64();
            total = total.add(&term)?;
        }
        per_layer.push(terms);
    }
    Ok((total, per_layer))
}

/// `ce + lambda * ml`.
pub fn total_loss<'t, T: Real>(ce: &Var<'t, T>, ml: &Var<'t, T>, lambda: f64) -> Result<Var<'t, T>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    Ok(ce.add(&ml.scale(lambda)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ce: Vec<f64>,
    /// `[high, sim, dis]` manifold terms per layer.
    pub manifold: Vec<[f64; 3]>,
    pub lambda: f64,
    pub total: f64,
}

impl LossReport {
    pub fn ce_sum(&self) -> f64 {
        self.ce.iter().sum()
    }

    pub fn manifold_sum(&self) -> f64 {
        self.manifold.iter().flatten().sum()
    }
}

/// Everything one episode contributes to training.
pub struct EpisodeLoss<'t, T> {
    pub total: Var<'t, T>,
    pub report: LossReport,
    pub graph: GraphVars<'t, T>,
}

pub fn episode_loss<'t, T: Real>(
    tape: &'t Tape<T>,
    episode: &Episode,
    params: &ModelParams<T>,
    bound: &Bound<'t, T>,
    lambda: f64,
    readout: ReadoutChannel,
) -> Result<EpisodeLoss<'t, T>> {
    let graph = forward(tape, episode, params, bound)?;
    let (ce, ce_layers) = episodic_ce(&graph, episode, readout, params.config().channels)?;
    let (ml, ml_layers) = manifold_loss(&graph)?;
    let total = total_loss(&ce, &ml, lambda)?;
    let value = total.value().item().as_f64();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("episode loss is {value}")));
    }
    Ok(EpisodeLoss {
        total,
        report: LossReport {
            ce: ce_layers,
            manifold: ml_layers,
            lambda,
            total: value,
        },
        graph,
    })
}
