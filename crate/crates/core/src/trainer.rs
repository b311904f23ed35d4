//! Episodic training, evaluation and ablation sweeps.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{sample_episode, EmbeddingDataset, Episode, EpisodeSpec};
use crate::error::{Error, Result};
use crate::layers::forward_values;
use crate::losses::{episode_loss, predict_labels, LossReport, ReadoutChannel};
use crate::params::{ChannelSet, MetricInput, ModelConfig, ModelParams};
use crate::tensor::{Precision, Real, Tape, Tensor, DEFAULT_LEAKY_SLOPE};

/// Independent random streams derived from one seed.
const STREAM_TRAIN: u64 = 0;
const STREAM_VALIDATION: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_TEST: u64 = 3;

pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub layers: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub episodes_per_batch: usize,
    pub total_iterations: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub test_episodes: usize,
    pub variant: ChannelSet,
    pub label_fraction: f64,
    pub readout_channel: ReadoutChannel,
    pub seed: u64,
    pub precision: Precision,
    pub hidden_dim: usize,
    pub metric_hidden: usize,
    pub metric_input: MetricInput,
    pub encoder: bool,
    pub standardize: bool,
    pub self_feature: bool,
    pub leaky_slope: f64,
    /// Stop as soon as validation accuracy reaches this value.
    pub target_val_acc: Option<f64>,
    /// Threads for per-episode work; results do not depend on it.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 1,
            n_query: 15,
            layers: 3,
            lambda: 1e-5,
            learning_rate: 5e-4,
            weight_decay: 1e-6,
            episodes_per_batch: 40,
            total_iterations: 2000,
            eval_every: 100,
            eval_episodes: 100,
            test_episodes: 600,
            variant: ChannelSet::FULL,
            label_fraction: 1.0,
            readout_channel: ReadoutChannel::Similarity,
            seed: 0,
            precision: Precision::F64,
            hidden_dim: 32,
            metric_hidden: 96,
            metric_input: MetricInput::Distance,
            encoder: false,
            standardize: true,
            self_feature: true,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            target_val_acc: None,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn episode_spec(&self) -> EpisodeSpec {
        EpisodeSpec {
            n_way: self.n_way,
            k_shot: self.k_shot,
            n_query: self.n_query,
            label_fraction: self.label_fraction,
        }
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            channels: self.variant,
            encoder: self.encoder,
            metric_hidden: self.metric_hidden,
            metric_input: self.metric_input,
            standardize: self.standardize,
            self_feature: self.self_feature,
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.episode_spec().validate()?;
        self.model_config(1).validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.episodes_per_batch == 0 {
            return bad("episodes_per_batch must be at least 1".into());
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every and eval_episodes must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if let Some(t) = self.target_val_acc {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("target_val_acc must be in [0, 1], got {t}"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", self.workers)))
    }
}

/// Fails unless `ds` can supply episodes for `spec`.
pub fn check_dataset(ds: &EmbeddingDataset, spec: &EpisodeSpec, role: &str) -> Result<()> {
    let need = spec.k_shot + spec.n_query;
    let usable = ds.classes().iter().filter(|&&c| ds.class_items(c).len() >= need).count();
    if usable < spec.n_way {
        return Err(Error::InsufficientData(format!(
            "{role} set has {usable} classes with >= {need} items, {}-way episodes need {}",
            spec.n_way, spec.n_way
        )));
    }
    Ok(())
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<T: Real>(params: &ModelParams<T>, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<T: Real>(&mut self, params: &mut ModelParams<T>, grads: &[Tensor<T>]) {
        assert_eq!(grads.len(), self.m.len(), "one gradient per parameter tensor");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (idx, (g, (m, v))) in grads.iter().zip(self.m.iter_mut().zip(&mut self.v)).enumerate() {
            let p = params.tensor_mut(idx);
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi.as_f64();
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                let old = pi.as_f64();
                *pi = T::from_f64_lossy(old - self.lr * update - self.lr * self.weight_decay * old);
            }
        }
    }
}

/// Gradient of one episode's total loss with respect to every parameter.
pub fn episode_gradients<T: Real>(
    episode: &Episode,
    params: &ModelParams<T>,
    lambda: f64,
    readout: ReadoutChannel,
) -> Result<(Vec<Tensor<T>>, LossReport)> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let loss = episode_loss(&tape, episode, params, &bound, lambda, readout)?;
    let grads = tape.backward(loss.total)?;
    Ok((bound.vars.iter().map(|&v| grads.wrt(v)).collect(), loss.report))
}

/// Mean gradient over a batch, reduced in episode order.
pub fn batch_gradients<T: Real>(
    episodes: &[Episode],
    params: &ModelParams<T>,
    lambda: f64,
    readout: ReadoutChannel,
    pool: &rayon::ThreadPool,
) -> Result<(Vec<Tensor<T>>, Vec<LossReport>)> {
    let results: Vec<Result<(Vec<Tensor<T>>, LossReport)>> = pool.install(|| {
        episodes
            .par_iter()
            .map(|ep| episode_gradients(ep, params, lambda, readout))
            .collect()
    });
    let mut sum: Vec<Tensor<T>> = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
    let mut reports = Vec::with_capacity(episodes.len());
    for (b, r) in results.into_iter().enumerate() {
        let (grads, report) = r.map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!("batch episode {b}: {msg}")),
            other => other,
        })?;
        for (acc, g) in sum.iter_mut().zip(&grads) {
            for (a, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + x;
            }
        }
        reports.push(report);
    }
    let scale = T::from_f64_lossy(1.0 / episodes.len() as f64);
    for t in &mut sum {
        t.data_mut().iter_mut().for_each(|x| *x = *x * scale);
    }
    Ok((sum, reports))
}

/// Mean and 95% half-width `1.96 s / sqrt(n)` using the sample standard deviation.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub ci: f64,
    /// Mean accuracy when reading out at each layer `1..=L`.
    pub per_layer: Vec<f64>,
    pub episodes: usize,
}

/// Accuracy of the last layer's argmax over a fixed set of episodes.
pub fn evaluate_episodes<T: Real>(
    episodes: &[Episode],
    params: &ModelParams<T>,
    readout: ReadoutChannel,
    pool: &rayon::ThreadPool,
) -> Result<EvalResult> {
    let layers = params.config().layers;
    let per_episode: Vec<Result<Vec<f64>>> = pool.install(|| {
        episodes
            .par_iter()
            .map(|ep| {
                let graph = forward_values(ep, params)?;
                let pred = predict_labels(&graph, ep, readout)?;
                let truth = ep.query_slots();
                Ok((1..=layers).map(|l| pred.layer_accuracy(l, &truth)).collect())
            })
            .collect()
    });
    let per_episode = per_episode.into_iter().collect::<Result<Vec<_>>>()?;
    let last: Vec<f64> = per_episode.iter().map(|accs| accs[layers - 1]).collect();
    let (accuracy, ci) = mean_ci(&last);
    let per_layer = (0..layers)
        .map(|l| mean_ci(&per_episode.iter().map(|a| a[l]).collect::<Vec<_>>()).0)
        .collect();
    Ok(EvalResult {
        accuracy,
        ci,
        per_layer,
        episodes: episodes.len(),
    })
}

pub fn sample_episodes(ds: &EmbeddingDataset, spec: EpisodeSpec, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Episode>> {
    (0..count).map(|_| sample_episode(ds, spec, rng)).collect()
}

/// Evaluates on `episodes` fresh episodes drawn from the config's test stream.
pub fn evaluate<T: Real>(ds: &EmbeddingDataset, params: &ModelParams<T>, cfg: &TrainConfig, episodes: usize) -> Result<EvalResult> {
    let spec = cfg.episode_spec();
    check_dataset(ds, &spec, "evaluation")?;
    if ds.dim() != params.config().input_dim {
        return Err(Error::InvalidArgument(format!(
            "dataset dim {} does not match model input dim {}",
            ds.dim(),
            params.config().input_dim
        )));
    }
    let eps = sample_episodes(ds, spec, episodes, &mut seeded_stream(cfg.seed, STREAM_TEST))?;
    evaluate_episodes(&eps, params, cfg.readout_channel, &cfg.pool()?)
}

/// Enough to resume the training stream exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub params: ModelParams<T>,
    pub iteration: u64,
    pub val_acc: f64,
    pub config_hash: String,
    pub rng: RngState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iter: usize,
    /// Mean batch loss since the previous row.
    pub loss: f64,
    pub val_acc: f64,
    pub val_ci: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub best: Checkpoint<T>,
    pub last: ModelParams<T>,
    pub log: Vec<MetricRow>,
    pub iterations_run: usize,
}

pub fn train<T: Real>(train_ds: &EmbeddingDataset, val_ds: &EmbeddingDataset, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with_progress(train_ds, val_ds, cfg, |_| {})
}

/// Like [`train`], calling `progress` after every logged evaluation.
pub fn train_with_progress<T: Real>(
    train_ds: &EmbeddingDataset,
    val_ds: &EmbeddingDataset,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&MetricRow),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let spec = cfg.episode_spec();
    if train_ds.dim() != val_ds.dim() {
        return Err(Error::InvalidArgument(format!(
            "train dim {} differs from validation dim {}",
            train_ds.dim(),
            val_ds.dim()
        )));
    }
    check_dataset(train_ds, &spec, "training")?;
    check_dataset(val_ds, &spec, "validation")?;
    let pool = cfg.pool()?;

    let mut params = ModelParams::<T>::init(cfg.model_config(train_ds.dim()), &mut seeded_stream(cfg.seed, STREAM_INIT))?;
    let val_episodes = sample_episodes(val_ds, spec, cfg.eval_episodes, &mut seeded_stream(cfg.seed, STREAM_VALIDATION))?;
    let mut rng = seeded_stream(cfg.seed, STREAM_TRAIN);
    let mut opt = AdamW::new(&params, cfg.learning_rate, cfg.weight_decay);
    let config_hash = cfg.hash();

    let initial = if cfg.total_iterations == 0 {
        f64::NAN
    } else {
        evaluate_episodes(&val_episodes, &params, cfg.readout_channel, &pool)?.accuracy
    };
    let mut best = Checkpoint {
        config: cfg.clone(),
        params: params.clone(),
        iteration: 0,
        val_acc: initial,
        config_hash: config_hash.clone(),
        rng: RngState::capture(&rng),
    };
    let mut log = Vec::new();
    let mut window = Vec::with_capacity(cfg.eval_every);
    let mut iterations_run = 0;
    for iter in 1..=cfg.total_iterations {
        let batch = sample_episodes(train_ds, spec, cfg.episodes_per_batch, &mut rng)?;
        let (grads, reports) = batch_gradients(&batch, &params, cfg.lambda, cfg.readout_channel, &pool)
            .map_err(|e| annotate(e, iter))?;
        if let Some(pos) = grads.iter().position(|g| !g.all_finite()) {
            return Err(Error::Numeric(format!(
                "iteration {iter}: non-finite gradient for `{}`",
                params.named()[pos].name
            )));
        }
        opt.step(&mut params, &grads);
        iterations_run = iter;
        window.push(reports.iter().map(|r| r.total).sum::<f64>() / reports.len() as f64);

        if iter % cfg.eval_every == 0 || iter == cfg.total_iterations {
            let eval = evaluate_episodes(&val_episodes, &params, cfg.readout_channel, &pool)?;
            let row = MetricRow {
                iter,
                loss: window.iter().sum::<f64>() / window.len() as f64,
                val_acc: eval.accuracy,
                val_ci: eval.ci,
            };
            window.clear();
            progress(&row);
            log.push(row);
            if eval.accuracy > best.val_acc {
                best = Checkpoint {
                    config: cfg.clone(),
                    params: params.clone(),
                    iteration: iter as u64,
                    val_acc: eval.accuracy,
                    config_hash: config_hash.clone(),
                    rng: RngState::capture(&rng),
                };
            }
            if cfg.target_val_acc.is_some_and(|t| eval.accuracy >= t) {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        last: params,
        log,
        iterations_run,
    })
}

fn annotate(e: Error, iter: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("iteration {iter}: {msg}")),
        Error::Tensor(t) => Error::Numeric(format!("iteration {iter}: {t}")),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Variant,
    Layers,
    Lambda,
    LabelFraction,
}

impl AblationAxis {
    /// Sweep values used when none are given.
    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            AblationAxis::Variant => &["h", "s", "d", "hs", "hd", "full"],
            AblationAxis::Layers => &["1", "2", "3"],
            AblationAxis::Lambda => &["1e-2", "1e-3", "1e-4", "1e-5", "1e-6", "1e-7"],
            AblationAxis::LabelFraction => &["0.2", "0.4", "1.0"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &TrainConfig, value: &str) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("`{v}` is not a number for axis {self}")))
        };
        match self {
            AblationAxis::Variant => cfg.variant = value.parse()?,
            AblationAxis::Layers => {
                cfg.layers = value
                    .parse()
                    .map_err(|_| Error::Config(format!("`{value}` is not a layer count")))?
            }
            AblationAxis::Lambda => cfg.lambda = num(value)?,
            AblationAxis::LabelFraction => cfg.label_fraction = num(value)?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::Variant => "variant",
            AblationAxis::Layers => "layers",
            AblationAxis::Lambda => "lambda",
            AblationAxis::LabelFraction => "label_fraction",
        })
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variant" => Ok(AblationAxis::Variant),
            "layers" => Ok(AblationAxis::Layers),
            "lambda" => Ok(AblationAxis::Lambda),
            "label_fraction" | "label-fraction" => Ok(AblationAxis::LabelFraction),
            _ => Err(Error::Config(format!(
                "unknown ablation axis `{s}` (variant, layers, lambda, label_fraction)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub accuracy: f64,
    pub ci: f64,
    pub best_iter: u64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Fixed-width text rendering.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.value.len()).max().unwrap_or(0).max(self.axis.to_string().len());
        let mut out = format!("{:<width$}  {:>8}  {:>7}  {:>9}\n", self.axis.to_string(), "accuracy", "ci95", "best_iter");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>8.4}  {:>7.4}  {:>9}\n",
                r.value, r.accuracy, r.ci, r.best_iter
            ));
        }
        out
    }
}

/// Trains and tests one model per value with the base seed shared across rows.
pub fn run_ablation<T: Real>(
    train_ds: &EmbeddingDataset,
    val_ds: &EmbeddingDataset,
    test_ds: &EmbeddingDataset,
    base: &TrainConfig,
    axis: AblationAxis,
    values: &[String],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<AblationTable> {
    let configs = values
        .iter()
        .map(|v| axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (value, cfg) in values.iter().zip(&configs) {
        let outcome = train::<T>(train_ds, val_ds, cfg)?;
        let test = evaluate(test_ds, &outcome.best.params, cfg, cfg.test_episodes)?;
        let row = AblationRow {
            value: value.clone(),
            accuracy: test.accuracy,
            ci: test.ci,
            best_iter: outcome.best.iteration,
            val_acc: outcome.best.val_acc,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(AblationTable { axis, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_uses_sample_std() {
        let (m, ci) = mean_ci(&[1.0, 0.0]);
        assert_eq!(m, 0.5);
        // s = sqrt(0.5), n = 2
        assert!((ci - 1.96 * 0.5f64.sqrt() / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_ci(&[1.0; 10]), (1.0, 0.0));
        assert_eq!(mean_ci(&[0.3]), (0.3, 0.0));
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = TrainConfig {
            variant: "hs".parse().unwrap(),
            target_val_acc: Some(0.9),
            ..TrainConfig::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"variant\":\"hs\""));
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(TrainConfig::default().hash(), cfg.hash());
    }

    #[test]
    fn ablation_axis_values_validate() {
        let base = TrainConfig::default();
        for axis in [AblationAxis::Variant, AblationAxis::Layers, AblationAxis::Lambda, AblationAxis::LabelFraction] {
            for v in axis.default_values() {
                axis.apply(&base, &v).unwrap();
            }
        }
        assert_eq!(AblationAxis::Lambda.default_values().len(), 6);
        assert!(AblationAxis::Layers.apply(&base, "0").is_err());
        assert!(AblationAxis::LabelFraction.apply(&base, "1.5").is_err());
        assert!(AblationAxis::Variant.apply(&base, "x").is_err());
    }

    #[test]
    fn rng_state_resumes_stream() {
        use rand::Rng;
        let mut rng = seeded_stream(7, STREAM_TRAIN);
        let _: u64 = rng.random();
        let state = RngState::capture(&rng);
        let a: [u64; 4] = rng.random();
        let b: [u64; 4] = state.restore().random();
        assert_eq!(a, b);
    }
}
