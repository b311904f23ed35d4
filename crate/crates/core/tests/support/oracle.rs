//! Reference forward pass written as plain nested loops over `f64`.
//!
//! Shares nothing with the library beyond reading parameter tensors by name,
//! so agreement with the tape implementation is an independent check.

#![allow(dead_code)]

use hosp_core::data::Episode;
use hosp_core::params::{MetricInput, ModelParams};

pub type Mat = Vec<Vec<f64>>;

pub struct OracleGraph {
    pub u: Vec<Mat>,
    pub v: Vec<Mat>,
    /// `e[l][k]` is channel `k` (0 high, 1 sim, 2 dis) at level `l`, `None` if disabled.
    pub e: Vec<[Option<Mat>; 3]>,
    /// `probs[l - 1][q][c]`
    pub probs: Vec<Mat>,
    pub ce: f64,
    pub ml: f64,
    /// Per-layer `[high, sim, dis]` manifold terms.
    pub ml_terms: Vec<[f64; 3]>,
}

struct Weights<'a> {
    p: &'a ModelParams<f64>,
}

impl Weights<'_> {
    fn mat(&self, name: &str) -> Mat {
        let t = self.p.tensor(self.p.index_of(name).unwrap_or_else(|| panic!("missing {name}")));
        let cols = t.shape()[1];
        t.data().chunks(cols).map(|r| r.to_vec()).collect()
    }

    fn vec(&self, name: &str) -> Vec<f64> {
        self.p.tensor(self.p.index_of(name).unwrap()).data().to_vec()
    }

    fn has(&self, name: &str) -> bool {
        self.p.index_of(name).is_some()
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn linear(x: &[f64], w: &Mat, b: &[f64]) -> Vec<f64> {
    let mut out = b.to_vec();
    for (i, xi) in x.iter().enumerate() {
        for (o, wo) in out.iter_mut().zip(&w[i]) {
            *o += xi * wo;
        }
    }
    out
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// A lone channel divided by itself is 1 where it has mass and 0 elsewhere.
fn normalized(x: f64, sum: f64, single: bool) -> f64 {
    if single {
        if x > 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        x / sum
    }
}

fn cyclic(u: &Mat) -> Mat {
    let m = u.len();
    (0..m)
        .map(|i| u[i].iter().zip(&u[(i + 1) % m]).map(|(a, b)| a - b).collect())
        .collect()
}

fn metric(w: &Weights<'_>, prefix: &str, a: &[f64], b: &[f64], mode: MetricInput, slope: f64) -> f64 {
    let input: Vec<f64> = match mode {
        MetricInput::Distance => vec![dist(a, b)],
        MetricInput::AbsDiff => a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect(),
    };
    let h: Vec<f64> = linear(&input, &w.mat(&format!("{prefix}.0.w")), &w.vec(&format!("{prefix}.0.b")))
        .into_iter()
        .map(|x| leaky(x, slope))
        .collect();
    let h: Vec<f64> = linear(&h, &w.mat(&format!("{prefix}.1.w")), &w.vec(&format!("{prefix}.1.b")))
        .into_iter()
        .map(|x| leaky(x, slope))
        .collect();
    sigmoid(linear(&h, &w.mat(&format!("{prefix}.2.w")), &w.vec(&format!("{prefix}.2.b")))[0])
}

/// `readout`: 0 high-order, 1 similarity, 2 dissimilarity (negated).
pub fn run(ep: &Episode, params: &ModelParams<f64>, readout: usize) -> OracleGraph {
    let cfg = params.config();
    let w = Weights { p: params };
    let slope = cfg.leaky_slope;
    let m = ep.vertex_count();
    let dim = ep.dim();
    let x: Mat = (0..m)
        .map(|i| ep.features()[i * dim..(i + 1) * dim].iter().map(|&f| f64::from(f)).collect())
        .collect();
    let u0: Mat = if w.has("encoder.w") {
        let (ew, eb) = (w.mat("encoder.w"), w.vec("encoder.b"));
        x.iter()
            .map(|r| linear(r, &ew, &eb).into_iter().map(|h| leaky(h, slope)).collect())
            .collect()
    } else {
        x
    };
    let v0 = cyclic(&u0);

    let ch = cfg.channels;
    let single = ch.count() == 1;
    let mut e0: [Option<Mat>; 3] = [None, None, None];
    if ch.high {
        let mut e1 = vec![vec![0.0; m]; m];
        for i in 0..m {
            let total: f64 = (0..m).map(|k| dist(&v0[i], &v0[k])).sum();
            for j in 0..m {
                e1[i][j] = 1.0 - dist(&v0[i], &v0[j]) / total;
            }
        }
        e0[0] = Some(e1);
    }
    let mut sim = vec![vec![0.5; m]; m];
    let mut dis = vec![vec![0.5; m]; m];
    for i in 0..m {
        for j in 0..m {
            if ep.is_visible(i) && ep.is_visible(j) {
                let same = ep.slot(i) == ep.slot(j);
                sim[i][j] = if same { 1.0 } else { 0.0 };
                dis[i][j] = if same { 0.0 } else { 1.0 };
            }
        }
    }
    if ch.sim {
        e0[1] = Some(sim);
    }
    if ch.dis {
        e0[2] = Some(dis);
    }

    let mut us = vec![u0];
    let mut vs = vec![v0];
    let mut es = vec![e0];
    let mut ml_terms = Vec::new();
    for l in 1..=cfg.layers {
        let (u, v, e) = (&us[l - 1], &vs[l - 1], &es[l - 1]);
        // channel-normalized previous edges
        let mut en: [Option<Mat>; 3] = [None, None, None];
        for k in 0..3 {
            if let Some(ek) = &e[k] {
                let mut out = vec![vec![0.0; m]; m];
                for i in 0..m {
                    for j in 0..m {
                        let s: f64 = (0..3).filter_map(|c| e[c].as_ref()).map(|ec| ec[i][j]).sum();
                        out[i][j] = normalized(ek[i][j], s, single);
                    }
                }
                en[k] = Some(out);
            }
        }
        let mut h_rows = Vec::with_capacity(m);
        for i in 0..m {
            let mut input = Vec::new();
            if cfg.self_feature {
                input.extend_from_slice(&u[i]);
            }
            for (k, src) in [(0, v), (1, u), (2, u)] {
                if let Some(enk) = &en[k] {
                    let d = src[0].len();
                    let mut acc = vec![0.0; d];
                    for j in 0..m {
                        for c in 0..d {
                            acc[c] += enk[i][j] * src[j][c];
                        }
                    }
                    input.extend(acc);
                }
            }
            h_rows.push(linear(
                &input,
                &w.mat(&format!("layer{l}.vertex.w")),
                &w.vec(&format!("layer{l}.vertex.b")),
            ));
        }
        if cfg.standardize {
            let (scale, shift) = (w.vec(&format!("layer{l}.vertex.scale")), w.vec(&format!("layer{l}.vertex.shift")));
            let d = h_rows[0].len();
            for c in 0..d {
                let mean = (0..m).map(|i| h_rows[i][c]).sum::<f64>() / m as f64;
                let var = (0..m).map(|i| (h_rows[i][c] - mean).powi(2)).sum::<f64>() / m as f64;
                for row in h_rows.iter_mut() {
                    row[c] = (row[c] - mean) / (var + 1e-5).sqrt() * scale[c] + shift[c];
                }
            }
        }
        let un: Mat = h_rows
            .into_iter()
            .map(|r| r.into_iter().map(|x| leaky(x, slope)).collect())
            .collect();
        let vn = cyclic(&un);

        let fh = ch.high.then(|| {
            (0..m)
                .map(|i| {
                    (0..m)
                        .map(|j| metric(&w, &format!("layer{l}.high"), &vn[i], &vn[j], cfg.metric_input, slope))
                        .collect::<Vec<_>>()
                })
                .collect::<Mat>()
        });
        let fp = (ch.sim || ch.dis).then(|| {
            (0..m)
                .map(|i| {
                    (0..m)
                        .map(|j| metric(&w, &format!("layer{l}.pair"), &un[i], &un[j], cfg.metric_input, slope))
                        .collect::<Vec<_>>()
                })
                .collect::<Mat>()
        });
        let score = |k: usize, i: usize, j: usize| -> f64 {
            match k {
                0 => fh.as_ref().unwrap()[i][j],
                1 => fp.as_ref().unwrap()[i][j],
                _ => 1.0 - fp.as_ref().unwrap()[i][j],
            }
        };
        let mut bar: [Option<Mat>; 3] = [None, None, None];
        let mut terms = [0.0; 3];
        for k in 0..3 {
            let Some(ek) = &e[k] else { continue };
            let mut out = vec![vec![0.0; m]; m];
            for i in 0..m {
                let num: f64 = (0..m).map(|j| score(k, i, j) * ek[i][j]).sum();
                let den: f64 = (0..m).map(|j| ek[i][j]).sum();
                for j in 0..m {
                    out[i][j] = score(k, i, j) * ek[i][j] / (num / den);
                    terms[k] += score(k, i, j) * ek[i][j];
                }
            }
            terms[k] /= (m * m) as f64;
            bar[k] = Some(out);
        }
        let mut en: [Option<Mat>; 3] = [None, None, None];
        for k in 0..3 {
            if let Some(bk) = &bar[k] {
                let mut out = vec![vec![0.0; m]; m];
                for i in 0..m {
                    for j in 0..m {
                        let s: f64 = (0..3).filter_map(|c| bar[c].as_ref()).map(|b| b[i][j].abs()).sum();
                        out[i][j] = normalized(bk[i][j], s, single);
                    }
                }
                en[k] = Some(out);
            }
        }
        ml_terms.push(terms);
        us.push(un);
        vs.push(vn);
        es.push(en);
    }

    let n = ep.n_way();
    let mut probs = Vec::new();
    let mut ce = 0.0;
    for level in es.iter().skip(1) {
        let ek = level[readout].as_ref().expect("readout channel enabled");
        let sign = if readout == 2 { -1.0 } else { 1.0 };
        let mut rows = Vec::new();
        let mut nll = 0.0;
        for i in ep.query_vertices() {
            let mut logits = vec![0.0; n];
            for j in 0..m {
                if j != i && ep.is_visible(j) {
                    logits[ep.slot(j)] += sign * ek[i][j];
                }
            }
            let z: f64 = logits.iter().map(|x| x.exp()).sum();
            let p: Vec<f64> = logits.iter().map(|x| x.exp() / z).collect();
            nll -= p[ep.slot(i)].ln();
            rows.push(p);
        }
        ce += nll / ep.query.len() as f64;
        probs.push(rows);
    }
    let ml: f64 = ml_terms.iter().flatten().sum();
    OracleGraph {
        u: us,
        v: vs,
        e: es,
        probs,
        ce,
        ml,
        ml_terms,
    }
}
