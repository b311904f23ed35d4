//! Initial episode graph: vertex features, relative features and the
//! three-channel edge tensor.

use crate::data::Episode;
use crate::error::{Error, Result};
use crate::params::{Bound, ChannelSet, Linear, ModelParams};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Denominator guard for the row-normalized high-order channel.
pub const EDGE_EPS: f64 = 1e-12;

/// Unordered vertex pairs `i <= j` plus the map back to the full `M x M` grid.
///
/// Pairwise quantities are symmetric, so computing them on `M(M+1)/2` pairs
/// and scattering by index halves the metric-network work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIndex {
    m: usize,
    left: Vec<usize>,
    right: Vec<usize>,
    full: Vec<usize>,
}

impl PairIndex {
    pub fn new(m: usize) -> Self {
        let mut left = Vec::with_capacity(m * (m + 1) / 2);
        let mut right = Vec::with_capacity(m * (m + 1) / 2);
        let mut id = vec![0; m * m];
        for i in 0..m {
            for j in i..m {
                id[i * m + j] = left.len();
                id[j * m + i] = left.len();
                left.push(i);
                right.push(j);
            }
        }
        Self {
            m,
            left,
            right,
            full: id,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    /// Rows `x_i - x_j` for every pair: `[M x d] -> [P x d]`.
    pub fn differences<'t, T: Real>(&self, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.gather_rows(&self.left)?.sub(&x.gather_rows(&self.right)?)?)
    }

    /// Scatters a per-pair vector `[P]` (or `[P x 1]`) onto the symmetric `[M x M]` grid.
    pub fn expand<'t, T: Real>(&self, per_pair: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(per_pair.gather(&self.full, [self.m, self.m])?)
    }

    /// Euclidean distance matrix of the rows of `x`.
    pub fn distances<'t, T: Real>(&self, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.expand(&self.differences(x)?.row_l2_norm()?)
    }
}

/// Edge channels of one level; disabled channels are `None`.
#[derive(Debug, Clone, Copy)]
pub struct Edges<'t, T> {
    pub high: Option<Var<'t, T>>,
    pub sim: Option<Var<'t, T>>,
    pub dis: Option<Var<'t, T>>,
}

impl<'t, T: Real> Edges<'t, T> {
    /// Present channels in (high, sim, dis) order.
    pub fn present(&self) -> Vec<Var<'t, T>> {
        [self.high, self.sim, self.dis].into_iter().flatten().collect()
    }

    pub fn values(&self) -> EdgeValues<T> {
        EdgeValues {
            high: self.high.map(|v| v.value()),
            sim: self.sim.map(|v| v.value()),
            dis: self.dis.map(|v| v.value()),
        }
    }
}

/// Plain-tensor snapshot of one edge level.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeValues<T> {
    pub high: Option<Tensor<T>>,
    pub sim: Option<Tensor<T>>,
    pub dis: Option<Tensor<T>>,
}

impl<T: Real> EdgeValues<T> {
    /// Channel `k` in 0 = high-order, 1 = similarity, 2 = dissimilarity.
    pub fn channel(&self, k: usize) -> Option<&Tensor<T>> {
        match k {
            0 => self.high.as_ref(),
            1 => self.sim.as_ref(),
            2 => self.dis.as_ref(),
            _ => None,
        }
    }

    /// `e[i][j][k]` over the three channels; disabled channels read as zero.
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.channel(k).map_or(0.0, |t| t.at2(i, j).as_f64())
    }

    /// `[M x M x 3]` tensor with disabled channels zero-filled.
    pub fn stacked(&self) -> Tensor<T> {
        let m = [&self.high, &self.sim, &self.dis]
            .into_iter()
            .flatten()
            .next()
            .map_or(0, |t| t.shape()[0]);
        let mut data = vec![T::zero(); m * m * 3];
        for k in 0..3 {
            if let Some(t) = self.channel(k) {
                for (ij, &v) in t.data().iter().enumerate() {
                    data[ij * 3 + k] = v;
                }
            }
        }
        Tensor::new([m, m, 3], data).expect("stacked edge shape")
    }
}

/// Values of a full forward pass: level 0 plus one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeGraph<T> {
    pub m: usize,
    pub channels: ChannelSet,
    pub u: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub e: Vec<EdgeValues<T>>,
}

impl<T> EpisodeGraph<T> {
    pub fn layer_count(&self) -> usize {
        self.e.len().saturating_sub(1)
    }
}

/// Episode features as an `[M x dim]` tensor.
pub fn features_tensor<T: Real>(episode: &Episode) -> Tensor<T> {
    let data = episode.features().iter().map(|&x| T::from_f64_lossy(f64::from(x))).collect();
    Tensor::new([episode.vertex_count(), episode.dim()], data).expect("episode feature shape")
}

/// `x W + b` for a bound linear layer.
pub(crate) fn apply_linear<'t, T: Real>(x: &Var<'t, T>, lin: Linear, bound: &Bound<'t, T>) -> Result<Var<'t, T>> {
    Ok(x.matmul(&bound.get(lin.w))?.add_row(&bound.get(lin.b))?)
}

/// `u^0`: raw features, optionally through the linear + leaky-relu encoder.
pub fn embed<'t, T: Real>(
    tape: &'t Tape<T>,
    episode: &Episode,
    params: &ModelParams<T>,
    bound: &Bound<'t, T>,
) -> Result<Var<'t, T>> {
    let cfg = params.config();
    if episode.dim() != cfg.input_dim {
        return Err(Error::InvalidArgument(format!(
            "episode dim {} does not match model input dim {}",
            episode.dim(),
            cfg.input_dim
        )));
    }
    let x = tape.constant(features_tensor(episode));
    match params.layout().encoder {
        Some(lin) => Ok(apply_linear(&x, lin, bound)?.leaky_relu(cfg.leaky_slope)?),
        None => Ok(x),
    }
}

/// Cyclic differences `v_i = u_i - u_{i+1}`, last row `u_{M-1} - u_0`.
pub fn relative_features<'t, T: Real>(u: &Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = u.shape();
    let m = shape.first().copied().unwrap_or(0);
    if shape.len() != 2 || m < 2 {
        return Err(Error::InvalidArgument(format!(
            "relative features need an [M x d] matrix with M >= 2, got {shape:?}"
        )));
    }
    let next: Vec<usize> = (0..m).map(|i| (i + 1) % m).collect();
    Ok(u.sub(&u.gather_rows(&next)?)?)
}

/// `e_ij1 = 1 - |v_i - v_j| / sum_k |v_i - v_k|`, with `k` over all vertices.
pub fn init_high_order_channel<'t, T: Real>(v0: &Var<'t, T>, pairs: &PairIndex) -> Result<Var<'t, T>> {
    let dist = pairs.distances(v0)?;
    let row_sums = dist.sum_cols()?;
    if let Some((i, s)) = row_sums
        .value()
        .data()
        .iter()
        .enumerate()
        .find(|(_, s)| !(s.as_f64() >= EDGE_EPS))
    {
        return Err(Error::DegenerateEpisode(format!(
            "relative-feature distance sum {} at vertex {i} is below {EDGE_EPS:e}",
            s.as_f64()
        )));
    }
    let ones = v0.tape().constant(Tensor::full([pairs.m()], T::one()));
    Ok(dist.scale_rows(&ones.div(&row_sums)?)?.one_minus()?)
}

/// Label-derived similarity/dissimilarity targets at level 0.
///
/// Both endpoints visible support: `(1, 0)` same class, `(0, 1)` otherwise.
/// Any pair touching a query or hidden support: `(0.5, 0.5)`.
pub fn label_channels<T: Real>(episode: &Episode) -> (Tensor<T>, Tensor<T>) {
    let m = episode.vertex_count();
    let half = T::from_f64_lossy(0.5);
    let mut sim = vec![half; m * m];
    let mut dis = vec![half; m * m];
    for i in (0..m).filter(|&i| episode.is_visible(i)) {
        for j in (0..m).filter(|&j| episode.is_visible(j)) {
            let same = episode.slot(i) == episode.slot(j);
            sim[i * m + j] = if same { T::one() } else { T::zero() };
            dis[i * m + j] = if same { T::zero() } else { T::one() };
        }
    }
    (
        Tensor::new([m, m], sim).expect("square"),
        Tensor::new([m, m], dis).expect("square"),
    )
}

/// Level-0 edges for the enabled channels. `e1` is required when the
/// high-order channel is on.
pub fn init_edges<'t, T: Real>(
    tape: &'t Tape<T>,
    episode: &Episode,
    e1: Option<Var<'t, T>>,
    channels: ChannelSet,
) -> Result<Edges<'t, T>> {
    if channels.high && e1.is_none() {
        return Err(Error::InvalidArgument("high-order channel enabled but no e1 given".into()));
    }
    let (sim, dis) = label_channels::<T>(episode);
    Ok(Edges {
        high: if channels.high { e1 } else { None },
        sim: channels.sim.then(|| tape.constant(sim)),
        dis: channels.dis.then(|| tape.constant(dis)),
    })
}
