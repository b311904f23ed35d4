//! Model configuration and the flat, named parameter store.
//!
//! All trainable tensors live in one ordered list so the optimizer,
//! checkpoints and gradient checks can treat them uniformly. A [`Layout`]
//! maps network roles onto indices into that list.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var, DEFAULT_LEAKY_SLOPE};

/// Which edge channels are active: high-order (H), similarity (S), dissimilarity (D).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ChannelSet {
    pub high: bool,
    pub sim: bool,
    pub dis: bool,
}

impl ChannelSet {
    pub const FULL: ChannelSet = ChannelSet {
        high: true,
        sim: true,
        dis: true,
    };

    pub fn count(&self) -> usize {
        usize::from(self.high) + usize::from(self.sim) + usize::from(self.dis)
    }

    pub fn uses_pair_metric(&self) -> bool {
        self.sim || self.dis
    }
}

impl Default for ChannelSet {
    fn default() -> Self {
        Self::FULL
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Self::FULL {
            return f.write_str("full");
        }
        let mut s = String::new();
        if self.high {
            s.push('h');
        }
        if self.sim {
            s.push('s');
        }
        if self.dis {
            s.push('d');
        }
        f.write_str(&s)
    }
}

impl FromStr for ChannelSet {
    type Err = Error;

    /// Accepts `full` or any non-empty combination of `h`, `s`, `d` (`hs`, `H-S`, ...).
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "full" || lower == "hsd" {
            return Ok(Self::FULL);
        }
        let mut set = ChannelSet {
            high: false,
            sim: false,
            dis: false,
        };
        for ch in lower.chars().filter(|c| *c != '-' && *c != '+' && *c != ',') {
            let flag = match ch {
                'h' => &mut set.high,
                's' => &mut set.sim,
                'd' => &mut set.dis,
                _ => return Err(Error::Config(format!("unknown channel `{ch}` in variant `{s}`"))),
            };
            if *flag {
                return Err(Error::Config(format!("channel `{ch}` repeated in variant `{s}`")));
            }
            *flag = true;
        }
        if set.count() == 0 {
            return Err(Error::Config("variant must enable at least one channel".into()));
        }
        Ok(set)
    }
}

impl TryFrom<String> for ChannelSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ChannelSet> for String {
    fn from(c: ChannelSet) -> String {
        c.to_string()
    }
}

/// What the metric networks see for a vertex pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetricInput {
    /// The Euclidean distance `||a - b||` as a single scalar.
    #[default]
    Distance,
    /// The per-dimension absolute difference `|a - b|`.
    AbsDiff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Dimension of the raw embeddings.
    pub input_dim: usize,
    /// Vertex feature width `d` after the encoder and after every layer.
    pub hidden_dim: usize,
    pub layers: usize,
    pub channels: ChannelSet,
    /// Learnable linear + leaky-relu map applied to raw embeddings.
    pub encoder: bool,
    /// Hidden width of the metric networks.
    pub metric_hidden: usize,
    pub metric_input: MetricInput,
    /// Per-feature standardization over the episode inside the vertex network.
    pub standardize: bool,
    /// Prepends the vertex's own previous features to the aggregated input of
    /// the vertex network.
    pub self_feature: bool,
    pub leaky_slope: f64,
}

impl ModelConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 32,
            layers: 3,
            channels: ChannelSet::FULL,
            encoder: false,
            metric_hidden: 96,
            metric_input: MetricInput::Distance,
            standardize: false,
            self_feature: false,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// Width of `u^0`.
    pub fn base_dim(&self) -> usize {
        if self.encoder {
            self.hidden_dim
        } else {
            self.input_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.metric_hidden == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("layer count must be at least 1".into()));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!("leaky slope must be in [0, 1), got {}", self.leaky_slope)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

/// Distance -> (0,1) affinity: two leaky-relu hidden layers then a sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricNet {
    pub layers: [Linear; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VertexNet {
    pub linear: Linear,
    /// `(scale, shift)` applied after standardization.
    pub norm: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerParams {
    pub vertex: VertexNet,
    pub high: Option<MetricNet>,
    pub pair: Option<MetricNet>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub encoder: Option<Linear>,
    pub layers: Vec<LayerParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InitKind {
    Glorot,
    Zeros,
    Ones,
}

struct LayoutBuilder {
    names: Vec<(String, Vec<usize>, InitKind)>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: InitKind) -> usize {
        self.names.push((name, shape, init));
        self.names.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.push(format!("{prefix}.w"), vec![fan_in, fan_out], InitKind::Glorot),
            b: self.push(format!("{prefix}.b"), vec![fan_out], InitKind::Zeros),
        }
    }

    fn metric(&mut self, prefix: &str, input: usize, hidden: usize) -> MetricNet {
        MetricNet {
            layers: [
                self.linear(&format!("{prefix}.0"), input, hidden),
                self.linear(&format!("{prefix}.1"), hidden, hidden),
                self.linear(&format!("{prefix}.2"), hidden, 1),
            ],
        }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<(String, Vec<usize>, InitKind)>) {
    let mut b = LayoutBuilder { names: Vec::new() };
    let encoder = cfg
        .encoder
        .then(|| b.linear("encoder", cfg.input_dim, cfg.hidden_dim));
    let metric_in = |width: usize| match cfg.metric_input {
        MetricInput::Distance => 1,
        MetricInput::AbsDiff => width,
    };
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 1..=cfg.layers {
        let d_in = if l == 1 { cfg.base_dim() } else { cfg.hidden_dim };
        let linear = b.linear(
            &format!("layer{l}.vertex"),
            (cfg.channels.count() + usize::from(cfg.self_feature)) * d_in,
            cfg.hidden_dim,
        );
        let norm = cfg.standardize.then(|| {
            (
                b.push(format!("layer{l}.vertex.scale"), vec![cfg.hidden_dim], InitKind::Ones),
                b.push(format!("layer{l}.vertex.shift"), vec![cfg.hidden_dim], InitKind::Zeros),
            )
        });
        let high = cfg
            .channels
            .high
            .then(|| b.metric(&format!("layer{l}.high"), metric_in(cfg.hidden_dim), cfg.metric_hidden));
        let pair = cfg
            .channels
            .uses_pair_metric()
            .then(|| b.metric(&format!("layer{l}.pair"), metric_in(cfg.hidden_dim), cfg.metric_hidden));
        layers.push(LayerParams {
            vertex: VertexNet { linear, norm },
            high,
            pair,
        });
    }
    (Layout { encoder, layers }, b.names)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Every trainable tensor of the model plus the layout that gives them roles.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    layout: Layout,
    params: Vec<NamedTensor<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Glorot-uniform weights, zero biases, unit standardization scales.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        let params = specs
            .into_iter()
            .map(|(name, shape, init)| {
                let n: usize = shape.iter().product();
                let data = match init {
                    InitKind::Zeros => vec![T::zero(); n],
                    InitKind::Ones => vec![T::one(); n],
                    InitKind::Glorot => {
                        let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                        (0..n)
                            .map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
                            .collect()
                    }
                };
                NamedTensor {
                    name,
                    tensor: Tensor::new(shape, data).expect("layout shapes are consistent"),
                }
            })
            .collect();
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    /// Rebuilds from stored tensors, which must match the layout exactly.
    pub fn from_named(config: ModelConfig, tensors: Vec<NamedTensor<T>>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        if specs.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "config expects {} parameter tensors, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        for ((name, shape, _), t) in specs.iter().zip(&tensors) {
            if *name != t.name || shape[..] != *t.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "expected `{name}` {shape:?}, found `{}` {:?}",
                    t.name,
                    t.tensor.shape()
                )));
            }
        }
        Ok(Self {
            config,
            layout,
            params: tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn named(&self) -> &[NamedTensor<T>] {
        &self.params
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.params.iter().map(|p| &p.tensor)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.iter_mut().map(|p| &mut p.tensor)
    }

    pub fn tensor(&self, idx: usize) -> &Tensor<T> {
        &self.params[idx].tensor
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor<T> {
        &mut self.params[idx].tensor
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Records every parameter on `tape` as a trainable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self.params.iter().map(|p| tape.param(p.tensor.clone())).collect(),
        }
    }

    /// Records every parameter as a constant (inference only).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self.params.iter().map(|p| tape.constant(p.tensor.clone())).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self
                .params
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
        }
    }
}

/// Parameters recorded on a tape, in store order.
#[derive(Debug, Clone)]
pub struct Bound<'t, T> {
    pub vars: Vec<Var<'t, T>>,
}

impl<'t, T: Real> Bound<'t, T> {
    pub fn get(&self, idx: usize) -> Var<'t, T> {
        self.vars[idx]
    }

    /// Wraps tape variables the caller created (e.g. for a gradient check).
    pub fn from_vars(vars: &[Var<'t, T>]) -> Self {
        Self { vars: vars.to_vec() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn variant_parsing() {
        assert_eq!("full".parse::<ChannelSet>().unwrap(), ChannelSet::FULL);
        let hs: ChannelSet = "H-S".parse().unwrap();
        assert!(hs.high && hs.sim && !hs.dis);
        assert_eq!(hs.to_string(), "hs");
        assert_eq!("sd".parse::<ChannelSet>().unwrap().to_string(), "sd");
        assert!("".parse::<ChannelSet>().is_err());
        assert!("hx".parse::<ChannelSet>().is_err());
        assert!("hh".parse::<ChannelSet>().is_err());
    }

    #[test]
    fn layout_dimensions_chain() {
        let mut cfg = ModelConfig::new(16);
        cfg.layers = 3;
        let p = ModelParams::<f64>::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let l1 = p.layout().layers[0];
        assert_eq!(p.tensor(l1.vertex.linear.w).shape(), &[48, 32]);
        let l2 = p.layout().layers[1];
        assert_eq!(p.tensor(l2.vertex.linear.w).shape(), &[96, 32]);
        let h = l2.high.unwrap();
        assert_eq!(p.tensor(h.layers[0].w).shape(), &[1, 96]);
        assert_eq!(p.tensor(h.layers[1].w).shape(), &[96, 96]);
        assert_eq!(p.tensor(h.layers[2].w).shape(), &[96, 1]);
        assert!(p.tensor(h.layers[2].b).data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn self_feature_widens_vertex_input() {
        let mut cfg = ModelConfig::new(16);
        cfg.self_feature = true;
        let p = ModelParams::<f64>::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.tensor(p.layout().layers[0].vertex.linear.w).shape(), &[64, 32]);
        assert_eq!(p.tensor(p.layout().layers[1].vertex.linear.w).shape(), &[128, 32]);
    }

    #[test]
    fn disabled_channels_drop_their_networks() {
        let mut cfg = ModelConfig::new(8);
        cfg.channels = "sd".parse().unwrap();
        let p = ModelParams::<f64>::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(p.layout().layers.iter().all(|l| l.high.is_none() && l.pair.is_some()));
        assert!(p.named().iter().all(|t| !t.name.contains("high")));
        assert_eq!(p.tensor(p.layout().layers[0].vertex.linear.w).shape(), &[16, 32]);
    }

    #[test]
    fn glorot_bounds() {
        let cfg = ModelConfig::new(8);
        let p = ModelParams::<f64>::init(cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for t in p.named() {
            if t.name.ends_with(".w") {
                let s = t.tensor.shape();
                let bound = (6.0 / (s[0] + s[1]) as f64).sqrt();
                assert!(t.tensor.data().iter().all(|v| v.abs() <= bound), "{}", t.name);
            }
        }
    }

    #[test]
    fn from_named_rejects_mismatch() {
        let cfg = ModelConfig::new(8);
        let p = ModelParams::<f64>::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut named = p.named().to_vec();
        assert!(ModelParams::from_named(cfg.clone(), named.clone()).is_ok());
        named[0].name = "bogus".into();
        assert!(ModelParams::from_named(cfg, named).is_err());
    }
}
