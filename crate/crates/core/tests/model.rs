mod support;

use hosp_core::data::{sample_episode, synth_clusters, Episode, EpisodeSpec, SynthConfig};
use hosp_core::graph::{EdgeValues, Edges, EpisodeGraph};
use hosp_core::layers::{channel_normalize, forward, forward_values, reweight_edges, GraphVars, LayerScores};
use hosp_core::losses::{episode_loss, episodic_ce, manifold_loss, predict_labels, total_loss, ReadoutChannel};
use hosp_core::params::{Bound, ChannelSet, MetricInput, ModelConfig, ModelParams};
use hosp_core::tensor::{grad_check, Tape, Tensor, Var};
use hosp_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracle;

fn episode(n_way: usize, k_shot: usize, n_query: usize, frac: f64, dim: usize, seed: u64) -> Episode {
    let ds = synth_clusters(&SynthConfig {
        n_classes: n_way + 2,
        per_class: k_shot + n_query + 2,
        dim,
        sep: 3.0,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let spec = EpisodeSpec {
        n_way,
        k_shot,
        n_query,
        label_fraction: frac,
    };
    sample_episode(&ds, spec, &mut ChaCha8Rng::seed_from_u64(seed + 100)).unwrap()
}

/// Random parameters with non-zero biases so no unit sits on an activation kink.
fn jittered(cfg: ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::<f64>::init(cfg, &mut rng).unwrap();
    for t in p.tensors_mut() {
        for x in t.data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    p
}

fn small_config(dim: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        hidden_dim: 5,
        metric_hidden: 6,
        layers,
        ..ModelConfig::new(dim)
    }
}

fn readout_index(r: ReadoutChannel) -> usize {
    match r {
        ReadoutChannel::HighOrder => 0,
        ReadoutChannel::Similarity => 1,
        ReadoutChannel::Dissimilarity => 2,
    }
}

fn max_diff(t: &Tensor<f64>, m: &[Vec<f64>]) -> f64 {
    let cols = t.shape()[1];
    m.iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &x)| (i, j, x)))
        .map(|(i, j, x)| (t.data()[i * cols + j] - x).abs())
        .fold(0.0, f64::max)
}

fn compare_with_oracle(ep: &Episode, params: &ModelParams<f64>, readout: ReadoutChannel) -> f64 {
    let resolved = readout.resolve(params.config().channels);
    let reference = oracle::run(ep, params, readout_index(resolved));
    let graph = forward_values(ep, params).unwrap();
    let pred = predict_labels(&graph, ep, readout).unwrap();
    let tape = Tape::new();
    let bound = params.bind_frozen(&tape);
    let loss = episode_loss(&tape, ep, params, &bound, 0.0, readout).unwrap();

    let mut worst: f64 = 0.0;
    for l in 0..graph.u.len() {
        worst = worst.max(max_diff(&graph.u[l], &reference.u[l]));
        worst = worst.max(max_diff(&graph.v[l], &reference.v[l]));
        for k in 0..3 {
            match (graph.e[l].channel(k), &reference.e[l][k]) {
                (Some(t), Some(m)) => worst = worst.max(max_diff(t, m)),
                (None, None) => {}
                _ => panic!("channel {k} presence differs at level {l}"),
            }
        }
    }
    for (p, q) in pred.probs.iter().zip(&reference.probs) {
        worst = worst.max(max_diff(p, q));
    }
    worst = worst.max((loss.report.ce_sum() - reference.ce).abs());
    worst = worst.max((loss.report.manifold_sum() - reference.ml).abs());
    for (a, b) in loss.report.manifold.iter().zip(&reference.ml_terms) {
        for k in 0..3 {
            worst = worst.max((a[k] - b[k]).abs());
        }
    }
    worst
}

#[test]
fn forward_matches_nested_loop_oracle() {
    let shapes = [(2, 1), (3, 1), (2, 2), (3, 1), (2, 3)];
    let variants: [(&str, fn(&mut ModelConfig)); 5] = [
        ("literal", |_| {}),
        ("standardized", |c| c.standardize = true),
        ("self feature + encoder", |c| {
            c.self_feature = true;
            c.encoder = true;
        }),
        ("absdiff metric", |c| c.metric_input = MetricInput::AbsDiff),
        ("two channels", |c| c.channels = "sd".parse().unwrap()),
    ];
    for (seed, (name, tweak)) in variants.iter().enumerate() {
        let seed = seed as u64;
        let (n_way, k_shot) = shapes[seed as usize];
        let ep = episode(n_way, k_shot, 1, 1.0, 4, seed);
        assert!(ep.vertex_count() <= 8);
        let mut cfg = small_config(4, 1 + seed as usize % 3);
        tweak(&mut cfg);
        let params = jittered(cfg, seed);
        for readout in [ReadoutChannel::Similarity, ReadoutChannel::HighOrder] {
            let err = compare_with_oracle(&ep, &params, readout);
            assert!(err < 1e-10, "{name} ({readout}): {err}");
        }
    }
}

#[test]
fn masked_support_matches_oracle() {
    let ep = episode(2, 3, 1, 0.4, 3, 9);
    assert!(ep.label_mask.iter().any(|&v| !v));
    let mut cfg = small_config(3, 2);
    cfg.self_feature = true;
    let params = jittered(cfg, 4);
    assert!(compare_with_oracle(&ep, &params, ReadoutChannel::Similarity) < 1e-10);
}

fn loss_fn<'a>(
    ep: &'a Episode,
    cfg: &ModelConfig,
    lambda: f64,
) -> impl for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>, Error> + 'a {
    let template = ModelParams::<f64>::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    move |tape, vars| {
        let bound = Bound::from_vars(vars);
        Ok(episode_loss(tape, ep, &template, &bound, lambda, ReadoutChannel::Similarity)?.total)
    }
}

#[test]
fn total_loss_gradients_match_finite_differences() {
    let ep = episode(2, 1, 1, 1.0, 8, 21);
    for (lambda, tweak) in [(1e-5, false), (0.7, false), (0.7, true)] {
        let mut cfg = ModelConfig {
            layers: 2,
            ..ModelConfig::new(8)
        };
        if tweak {
            cfg.standardize = true;
            cfg.self_feature = true;
            cfg.encoder = true;
            cfg.hidden_dim = 6;
            cfg.metric_hidden = 8;
        }
        let params = jittered(cfg.clone(), 5);
        let tensors: Vec<Tensor<f64>> = params.tensors().cloned().collect();
        let report = grad_check(loss_fn(&ep, &cfg, lambda), &tensors, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "lambda {lambda}: {report:?}");
    }
}

fn constant(tape: &Tape<f64>, m: usize, x: f64) -> Var<'_, f64> {
    tape.constant(Tensor::full([m, m], x))
}

#[test]
fn constant_metric_networks_leave_normalized_edges_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let m = rng.random_range(2..9);
        let tape = Tape::new();
        let mut draw = || {
            let data: Vec<f64> = (0..m * m).map(|_| rng.random_range(0.01..2.0)).collect();
            Some(tape.constant(Tensor::new([m, m], data).unwrap()))
        };
        let e = Edges {
            high: draw(),
            sim: draw(),
            dis: draw(),
        };
        let c = rng.random_range(0.05..0.95);
        let f = constant(&tape, m, c);
        let out = reweight_edges(&e, Some(&f), Some(&f)).unwrap().values();
        let expected = channel_normalize(&e).unwrap().values();
        for k in 0..3 {
            assert!(out.channel(k).unwrap().max_abs_diff(expected.channel(k).unwrap()) <= 1e-12);
        }
    }
}

/// Hand-built graph whose last levels carry the given similarity edges.
fn stub_graph<'t>(tape: &'t Tape<f64>, m: usize, levels: Vec<Tensor<f64>>, f_pair: f64) -> GraphVars<'t, f64> {
    let zero = tape.constant(Tensor::zeros([m, 1]));
    let e0 = Edges {
        high: None,
        sim: Some(constant(tape, m, 0.0)),
        dis: Some(constant(tape, m, 0.0)),
    };
    let layers = levels.len();
    let mut e = vec![e0];
    e.extend(levels.into_iter().map(|t| Edges {
        high: None,
        sim: Some(tape.constant(t)),
        dis: Some(constant(tape, m, 0.5)),
    }));
    GraphVars {
        u: vec![zero; layers + 1],
        v: vec![zero; layers + 1],
        e,
        scores: vec![LayerScores::from_values(None, Some(constant(tape, m, f_pair))).unwrap(); layers],
    }
}

#[test]
fn cross_entropy_closed_forms() {
    let ep = episode(5, 1, 2, 1.0, 3, 2);
    let m = ep.vertex_count();
    let tape = Tape::new();
    let channels: ChannelSet = "sd".parse().unwrap();

    let uniform = stub_graph(&tape, m, vec![Tensor::full([m, m], 0.3); 3], 0.5);
    let (ce, per_layer) = episodic_ce(&uniform, &ep, ReadoutChannel::Similarity, channels).unwrap();
    assert!((ce.value().item() - 3.0 * 5f64.ln()).abs() < 1e-12);
    assert_eq!(per_layer.len(), 3);

    // overwhelming weight on the true class support drives the loss to zero
    let mut confident = vec![0.0; m * m];
    for i in ep.query_vertices() {
        confident[i * m + ep.slot(i)] = 800.0;
    }
    let sharp = stub_graph(&tape, m, vec![Tensor::new([m, m], confident).unwrap(); 2], 0.5);
    let (ce, _) = episodic_ce(&sharp, &ep, ReadoutChannel::Similarity, channels).unwrap();
    assert!(ce.value().item() < 1e-300);
}

#[test]
fn manifold_loss_stub_cases() {
    let m = 4;
    let tape = Tape::new();
    let graph = stub_graph(&tape, m, vec![Tensor::full([m, m], 0.2)], 0.5);
    let (ml, terms) = manifold_loss(&graph).unwrap();
    // level-0 edges are all zero
    assert_eq!(ml.value().item(), 0.0);
    assert_eq!(terms, vec![[0.0; 3]]);

    let graph = stub_graph(&tape, m, vec![Tensor::full([m, m], 0.2), Tensor::full([m, m], 0.9)], 0.5);
    let (ml, terms) = manifold_loss(&graph).unwrap();
    // layer 2 reads level-1 edges: sim 0.2, dis 0.5
    assert!((terms[1][1] + terms[1][2] - 0.5 * (0.2 + 0.5)).abs() < 1e-15);
    assert!((ml.value().item() - 0.35).abs() < 1e-15);
}

#[test]
fn total_loss_is_linear_in_lambda() {
    let ep = episode(3, 1, 2, 1.0, 4, 8);
    let params = jittered(small_config(4, 2), 3);
    let tape = Tape::new();
    let bound = params.bind_frozen(&tape);
    let graph = forward(&tape, &ep, &params, &bound).unwrap();
    let (ce, _) = episodic_ce(&graph, &ep, ReadoutChannel::Similarity, ChannelSet::FULL).unwrap();
    let (ml, _) = manifold_loss(&graph).unwrap();
    let at = |lambda: f64| total_loss(&ce, &ml, lambda).unwrap().value().item();
    let (c, m) = (ce.value().item(), ml.value().item());
    assert_eq!(at(0.0), c);
    for lambda in [1e-5, 0.25, 3.0] {
        assert!((at(lambda) - (c + lambda * m)).abs() < 1e-12);
    }
}

#[test]
fn hidden_support_and_other_queries_never_reach_logits() {
    let ep = episode(2, 2, 2, 0.5, 3, 4);
    let hidden: Vec<usize> = (0..ep.support_count()).filter(|&j| !ep.is_visible(j)).collect();
    assert!(!hidden.is_empty());
    let m = ep.vertex_count();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let base: Vec<f64> = (0..m * m).map(|_| rng.random_range(0.1..0.9)).collect();
    let mut poked = base.clone();
    for i in 0..m {
        for j in hidden.iter().copied().chain(ep.query_vertices()) {
            poked[i * m + j] = rng.random_range(0.1..0.9);
        }
    }
    let probs = |data: Vec<f64>| {
        let graph = EpisodeGraph {
            m,
            channels: ChannelSet::FULL,
            u: vec![],
            v: vec![],
            e: vec![
                EdgeValues {
                    high: None,
                    sim: None,
                    dis: None,
                },
                EdgeValues {
                    high: None,
                    sim: Some(Tensor::new([m, m], data).unwrap()),
                    dis: None,
                },
            ],
        };
        predict_labels(&graph, &ep, ReadoutChannel::Similarity).unwrap().probs
    };
    assert_eq!(probs(base), probs(poked));
}

#[test]
fn similarity_dissimilarity_variant_has_no_high_order_anywhere() {
    let ep = episode(3, 1, 2, 1.0, 4, 6);
    let mut cfg = small_config(4, 3);
    cfg.channels = "sd".parse().unwrap();
    let params = jittered(cfg, 2);
    assert!(params.named().iter().all(|t| !t.name.contains("high")));
    let graph = forward_values(&ep, &params).unwrap();
    assert!(graph.e.iter().all(|e| e.high.is_none()));
    let tape = Tape::new();
    let bound = params.bind_frozen(&tape);
    let loss = episode_loss(&tape, &ep, &params, &bound, 1e-5, ReadoutChannel::Similarity).unwrap();
    assert!(loss.report.manifold.iter().all(|t| t[0] == 0.0));
}

#[test]
fn single_channel_variants_give_queries_uniform_edges() {
    let ep = episode(3, 1, 2, 1.0, 4, 6);
    for v in ["h", "s", "d"] {
        let mut cfg = small_config(4, 2);
        cfg.channels = v.parse().unwrap();
        let params = jittered(cfg, 1);
        let graph = forward_values(&ep, &params).unwrap();
        for level in &graph.e[1..] {
            let present = (0..3).find_map(|k| level.channel(k)).unwrap();
            for q in ep.query_vertices() {
                assert!(present.row(q).iter().all(|&x| x == 1.0), "variant {v}");
            }
        }
        let pred = predict_labels(&graph, &ep, ReadoutChannel::Similarity).unwrap();
        for p in &pred.probs {
            assert!(p.data().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
        }
        assert!(compare_with_oracle(&ep, &params, ReadoutChannel::Similarity) < 1e-10);
    }
}

#[test]
fn forward_is_deterministic_and_sized() {
    let ep = episode(5, 1, 15, 1.0, 16, 0);
    let mut cfg = ModelConfig::new(16);
    cfg.standardize = true;
    let params = ModelParams::<f64>::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let a = forward_values(&ep, &params).unwrap();
    assert_eq!(a.e.len(), 4);
    for level in &a.e {
        assert_eq!(level.stacked().shape(), &[80, 80, 3]);
    }
    assert_eq!(a, forward_values(&ep, &params).unwrap());
}

fn check_invariants(ep: &Episode, params: &ModelParams<f64>) -> Result<(), TestCaseError> {
    let graph = forward_values(ep, params).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let m = ep.vertex_count();
    let e1 = graph.e[0].channel(0).unwrap();
    for i in 0..m {
        let row: f64 = e1.row(i).iter().sum();
        prop_assert!((row - (m as f64 - 1.0)).abs() < 1e-9, "row sum {row}");
    }
    for level in &graph.e[1..] {
        for i in 0..m {
            for j in 0..m {
                let s: f64 = (0..3).map(|k| level.get(i, j, k)).sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                prop_assert!((0..3).all(|k| level.get(i, j, k) >= 0.0));
            }
        }
    }
    for t in graph.u.iter().chain(&graph.v) {
        prop_assert!(t.all_finite());
    }
    let pred = predict_labels(&graph, ep, ReadoutChannel::Similarity).map_err(|e| TestCaseError::fail(e.to_string()))?;
    for p in &pred.probs {
        prop_assert!(p.all_finite());
        for q in 0..p.shape()[0] {
            let s: f64 = p.row(q).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(p.row(q).iter().all(|&x| x > 0.0));
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn structural_invariants_hold(
        n_way in 2usize..5,
        k_shot in 1usize..3,
        n_query in 1usize..4,
        frac in prop::sample::select(vec![0.2, 0.4, 1.0]),
        seed in 0u64..10_000,
        standardize in any::<bool>(),
    ) {
        let ep = episode(n_way, k_shot, n_query, frac, 6, seed);
        let mut cfg = small_config(6, 3);
        cfg.standardize = standardize;
        let params = ModelParams::<f64>::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        check_invariants(&ep, &params)?;
    }
}
