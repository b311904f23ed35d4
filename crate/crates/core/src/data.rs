//! Embedding datasets and N-way-K-shot episode sampling.
//!
//! Datasets are plain class-labelled vectors, either read from the `HOSPEMB`
//! text format or drawn from Gaussian clusters. An [`Episode`] copies the
//! features it needs into the canonical vertex order used by the graph code:
//! support items grouped by class slot, then query items grouped by class slot.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClassId = i64;

const HEADER_MAGIC: &str = "HOSPEMB";
const HEADER_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub class: ClassId,
    pub features: Vec<f32>,
}

/// Class-labelled fixed-dimension vectors belonging to one split.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    dim: usize,
    items: Vec<Item>,
    split: Split,
    by_class: BTreeMap<ClassId, Vec<usize>>,
}

impl EmbeddingDataset {
    pub fn new(dim: usize, items: Vec<Item>, split: Split) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dataset dimension must be positive".into()));
        }
        if items.is_empty() {
            return Err(Error::InsufficientData("dataset has no items".into()));
        }
        let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (i, item) in items.iter().enumerate() {
            if item.features.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "item {i} has {} features, expected {dim}",
                    item.features.len()
                )));
            }
            if let Some(bad) = item.features.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("item {i} has non-finite feature {bad}")));
            }
            by_class.entry(item.class).or_default().push(i);
        }
        Ok(Self {
            dim,
            items,
            split,
            by_class,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Class ids in ascending order.
    pub fn classes(&self) -> Vec<ClassId> {
        self.by_class.keys().copied().collect()
    }

    pub fn class_items(&self, class: ClassId) -> &[usize] {
        self.by_class.get(&class).map_or(&[], Vec::as_slice)
    }

    /// Smallest per-class item count.
    pub fn min_class_size(&self) -> usize {
        self.by_class.values().map(Vec::len).min().unwrap_or(0)
    }

    /// Serializes to the `HOSPEMB v1` text format.
    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER_MAGIC} {HEADER_VERSION} dim={} count={}\n", self.dim, self.items.len());
        for item in &self.items {
            write!(out, "{}", item.class).unwrap();
            for &v in &item.features {
                out.push(' ');
                out.push_str(&format_sig9(v));
            }
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical text form, as lowercase hex.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Fails when two datasets share a class id.
pub fn ensure_disjoint(a: &EmbeddingDataset, b: &EmbeddingDataset) -> Result<()> {
    let shared: BTreeSet<_> = a.by_class.keys().filter(|c| b.by_class.contains_key(c)).collect();
    if let Some(c) = shared.first() {
        return Err(Error::InvalidArgument(format!(
            "{:?} and {:?} splits share {} class(es), e.g. class {c}",
            a.split,
            b.split,
            shared.len()
        )));
    }
    Ok(())
}

/// Nine significant digits, positional where practical. Exact for `f32`.
fn format_sig9(v: f32) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let exp = f64::from(v.abs()).log10().floor() as i32;
    if (-5..9).contains(&exp) {
        format!("{:.*}", (8 - exp) as usize, v)
    } else {
        format!("{v:.8e}")
    }
}

pub fn parse_dataset(text: &str, origin: &str, split: Split) -> Result<EmbeddingDataset> {
    let format_err = |line: usize, msg: String| Error::Format {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or_else(|| format_err(1, "missing header".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (dim, count) = match fields[..] {
        [HEADER_MAGIC, HEADER_VERSION, d, c] => {
            let dim = d
                .strip_prefix("dim=")
                .and_then(|v| v.parse::<usize>().ok())
                .ok_or_else(|| format_err(hline, format!("bad dim field `{d}`")))?;
            let count = c
                .strip_prefix("count=")
                .and_then(|v| v.parse::<usize>().ok())
                .ok_or_else(|| format_err(hline, format!("bad count field `{c}`")))?;
            (dim, count)
        }
        _ => {
            return Err(format_err(
                hline,
                format!("expected `{HEADER_MAGIC} {HEADER_VERSION} dim=<d> count=<n>`, got `{header}`"),
            ))
        }
    };
    if dim == 0 {
        return Err(format_err(hline, "dim must be positive".into()));
    }

    let mut items = Vec::with_capacity(count);
    for (lineno, line) in lines {
        if items.len() == count {
            return Err(format_err(lineno, format!("more rows than the declared count {count}")));
        }
        let mut parts = line.split_whitespace();
        let class = parts
            .next()
            .and_then(|c| c.parse::<ClassId>().ok())
            .ok_or_else(|| format_err(lineno, "row must start with an integer class id".into()))?;
        let features = parts
            .map(|p| p.parse::<f32>().map_err(|_| format_err(lineno, format!("bad value `{p}`"))))
            .collect::<Result<Vec<f32>>>()?;
        if features.len() != dim {
            return Err(format_err(
                lineno,
                format!("row has {} values, header declares dim={dim}", features.len()),
            ));
        }
        if let Some(v) = features.iter().find(|v| !v.is_finite()) {
            return Err(format_err(lineno, format!("non-finite value {v}")));
        }
        items.push(Item { class, features });
    }
    if items.len() != count {
        return Err(format_err(
            text.lines().count(),
            format!("header declares count={count} but {} rows were read", items.len()),
        ));
    }
    if items.is_empty() {
        return Err(format_err(hline, "dataset has no rows".into()));
    }
    EmbeddingDataset::new(dim, items, split)
}

pub fn load_dataset(path: impl AsRef<Path>, split: Split) -> Result<EmbeddingDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string(), split)
}

pub fn write_dataset(ds: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ds.to_text()).map_err(|e| Error::io(path, e))
}

/// Gaussian class clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Class means lie on a sphere of radius `sep * noise_sigma`.
    pub sep: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// First class id; lets separately generated splits use disjoint ids.
    pub class_offset: ClassId,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 20,
            per_class: 50,
            dim: 16,
            sep: 6.0,
            noise_sigma: 1.0,
            seed: 1,
            class_offset: 0,
        }
    }
}

pub fn synth_clusters(cfg: &SynthConfig) -> Result<EmbeddingDataset> {
    if cfg.n_classes == 0 || cfg.per_class == 0 || cfg.dim == 0 {
        return Err(Error::InvalidArgument("synth sizes must be positive".into()));
    }
    if !(cfg.sep >= 0.0) || !cfg.sep.is_finite() {
        return Err(Error::InvalidArgument(format!("sep must be >= 0, got {}", cfg.sep)));
    }
    if !(cfg.noise_sigma > 0.0) || !cfg.noise_sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise_sigma must be > 0, got {}",
            cfg.noise_sigma
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("sigma validated");
    let radius = cfg.sep * cfg.noise_sigma;

    let mut items = Vec::with_capacity(cfg.n_classes * cfg.per_class);
    for c in 0..cfg.n_classes {
        let mut dir: Vec<f64> = (0..cfg.dim).map(|_| unit.sample(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        dir.iter_mut().for_each(|v| *v *= radius / norm);
        for _ in 0..cfg.per_class {
            let features = dir.iter().map(|&m| (m + noise.sample(&mut rng)) as f32).collect();
            items.push(Item {
                class: cfg.class_offset + c as ClassId,
                features,
            });
        }
    }
    EmbeddingDataset::new(cfg.dim, items, Split::Train)
}

/// Episode shape: N-way, K-shot, T queries per class, labelled fraction of the support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub label_fraction: f64,
}

impl EpisodeSpec {
    pub fn vertex_count(&self) -> usize {
        self.n_way * (self.k_shot + self.n_query)
    }

    /// Visible labels per class: `ceil(label_fraction * K)`.
    pub fn visible_per_class(&self) -> usize {
        // guard against 0.4 * 5 = 2.0000000000000004 style round-up
        ((self.label_fraction * self.k_shot as f64) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 || self.k_shot == 0 || self.n_query == 0 {
            return Err(Error::InvalidArgument(format!(
                "episode needs n_way >= 2, k_shot >= 1, n_query >= 1 (got {}-way {}-shot {} queries)",
                self.n_way, self.k_shot, self.n_query
            )));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "label_fraction must be in (0, 1], got {}",
                self.label_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeItem {
    /// Index into the source dataset.
    pub index: usize,
    /// Class slot `0..n_way`.
    pub slot: usize,
}

/// One sampled task, with features copied in canonical vertex order.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub spec: EpisodeSpec,
    /// Dataset class id for each slot.
    pub classes: Vec<ClassId>,
    pub support: Vec<EpisodeItem>,
    pub query: Vec<EpisodeItem>,
    /// Per support item; `true` means the label is visible to the model.
    pub label_mask: Vec<bool>,
    dim: usize,
    features: Vec<f32>,
}

impl Episode {
    /// Builds an episode from vertices already in canonical order.
    ///
    /// `slots` holds the class slot of every vertex (support first, then
    /// queries), `label_mask` one flag per support vertex.
    pub fn from_vertices(
        spec: EpisodeSpec,
        features: &[Vec<f32>],
        slots: &[usize],
        label_mask: Vec<bool>,
    ) -> Result<Self> {
        let n_support = spec.n_way * spec.k_shot;
        let m = spec.vertex_count();
        if features.len() != m || slots.len() != m || label_mask.len() != n_support {
            return Err(Error::InvalidArgument(format!(
                "episode of {m} vertices needs {m} features/slots and {n_support} mask entries"
            )));
        }
        let dim = features.first().map_or(0, Vec::len);
        if dim == 0 || features.iter().any(|f| f.len() != dim) {
            return Err(Error::InvalidArgument("episode features must share a positive dim".into()));
        }
        let canonical = |v: usize| {
            if v < n_support {
                v / spec.k_shot
            } else {
                (v - n_support) / spec.n_query
            }
        };
        if let Some(v) = (0..m).find(|&v| slots[v] != canonical(v)) {
            return Err(Error::InvalidArgument(format!(
                "vertex {v} has slot {} but canonical order needs {}",
                slots[v],
                canonical(v)
            )));
        }
        let item = |v: usize| EpisodeItem {
            index: v,
            slot: slots[v],
        };
        Ok(Self {
            spec,
            classes: (0..spec.n_way as ClassId).collect(),
            support: (0..n_support).map(item).collect(),
            query: (n_support..m).map(item).collect(),
            label_mask,
            dim,
            features: features.concat(),
        })
    }

    pub fn n_way(&self) -> usize {
        self.spec.n_way
    }

    pub fn vertex_count(&self) -> usize {
        self.support.len() + self.query.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major `M x dim` features in canonical vertex order.
    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn support_count(&self) -> usize {
        self.support.len()
    }

    /// Class slot of vertex `v` (ground truth for queries).
    pub fn slot(&self, v: usize) -> usize {
        if v < self.support.len() {
            self.support[v].slot
        } else {
            self.query[v - self.support.len()].slot
        }
    }

    pub fn is_query(&self, v: usize) -> bool {
        v >= self.support.len()
    }

    /// Support vertex whose label the model may see.
    pub fn is_visible(&self, v: usize) -> bool {
        v < self.support.len() && self.label_mask[v]
    }

    /// Vertex indices of the queries.
    pub fn query_vertices(&self) -> std::ops::Range<usize> {
        self.support.len()..self.vertex_count()
    }

    pub fn query_slots(&self) -> Vec<usize> {
        self.query.iter().map(|q| q.slot).collect()
    }
}

/// Draws one episode: classes and items without replacement, support and
/// query disjoint, `ceil(label_fraction * K)` visible labels per class.
pub fn sample_episode<R: Rng + ?Sized>(ds: &EmbeddingDataset, spec: EpisodeSpec, rng: &mut R) -> Result<Episode> {
    spec.validate()?;
    let per_class = spec.k_shot + spec.n_query;
    let eligible: Vec<ClassId> = ds
        .by_class
        .iter()
        .filter(|(_, items)| items.len() >= per_class)
        .map(|(&c, _)| c)
        .collect();
    if eligible.len() < ds.by_class.len() {
        let (c, items) = ds.by_class.iter().find(|(_, items)| items.len() < per_class).unwrap();
        return Err(Error::InsufficientData(format!(
            "class {c} has {} items, an episode needs {per_class} per class",
            items.len()
        )));
    }
    if eligible.len() < spec.n_way {
        return Err(Error::InsufficientData(format!(
            "{}-way episodes need {} classes, dataset has {}",
            spec.n_way,
            spec.n_way,
            eligible.len()
        )));
    }

    let classes: Vec<ClassId> = index::sample(rng, eligible.len(), spec.n_way)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    let mut support = Vec::with_capacity(spec.n_way * spec.k_shot);
    let mut query = Vec::with_capacity(spec.n_way * spec.n_query);
    for (slot, &class) in classes.iter().enumerate() {
        let pool = &ds.by_class[&class];
        let picked = index::sample(rng, pool.len(), per_class).into_vec();
        let (s, q) = picked.split_at(spec.k_shot);
        support.extend(s.iter().map(|&i| EpisodeItem { index: pool[i], slot }));
        query.extend(q.iter().map(|&i| EpisodeItem { index: pool[i], slot }));
    }

    let visible = spec.visible_per_class();
    let mut label_mask = vec![false; support.len()];
    for slot in 0..spec.n_way {
        for i in index::sample(rng, spec.k_shot, visible) {
            label_mask[slot * spec.k_shot + i] = true;
        }
    }

    let mut features = Vec::with_capacity((support.len() + query.len()) * ds.dim);
    for it in support.iter().chain(&query) {
        features.extend_from_slice(&ds.items[it.index].features);
    }
    Ok(Episode {
        spec,
        classes,
        support,
        query,
        label_mask,
        dim: ds.dim,
        features,
    })
}
