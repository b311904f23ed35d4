use std::path::Path;

use hosp_core::checkpoint::{self, AnyCheckpoint};
use hosp_core::data::{ensure_disjoint, load_dataset, synth_clusters, write_dataset, EmbeddingDataset, Split, SynthConfig};
use hosp_core::tensor::{Precision, Real};
use hosp_core::trainer::{evaluate, run_ablation, train_with_progress, AblationAxis, AblationTable, Checkpoint, TrainConfig};

use crate::args::{AblateArgs, EvalArgs, SynthArgs, TrainArgs};
use crate::config::resolve;
use crate::manifest::{DatasetRef, RunManifest};
use crate::report::{self, EvalReport, Summary};
use crate::{CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let cfg = SynthConfig {
        n_classes: args.classes as usize,
        per_class: args.per_class as usize,
        dim: args.dim as usize,
        sep: args.sep,
        noise_sigma: args.noise,
        seed: args.seed,
        class_offset: args.class_offset,
    };
    let ds = synth_clusters(&cfg).map_err(|e| CliError::usage(e.to_string()))?;
    write_dataset(&ds, &args.out)?;
    println!(
        "wrote {} items ({} classes, dim {}) to {} [{}]",
        ds.len(),
        cfg.n_classes,
        cfg.dim,
        args.out.display(),
        &ds.fingerprint()[..16]
    );
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))
}

/// Loads the named splits and checks their class sets are pairwise disjoint.
fn load_splits(splits: &[(&str, &Path, Split)]) -> CliResult<Vec<EmbeddingDataset>> {
    let sets = splits
        .iter()
        .map(|(_, path, split)| load_dataset(path, *split))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, a) in sets.iter().enumerate() {
        for b in &sets[i + 1..] {
            ensure_disjoint(a, b)?;
        }
    }
    Ok(sets)
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<Summary> {
    let cfg = resolve(&args.config)?;
    let mut splits = vec![("train", args.train.as_path(), Split::Train), ("val", args.val.as_path(), Split::Validation)];
    if let Some(test) = &args.test {
        splits.push(("test", test.as_path(), Split::Test));
    }
    let sets = load_splits(&splits)?;

    let mut manifest = RunManifest::new("train", &cfg);
    for ((role, path, _), ds) in splits.iter().zip(&sets) {
        manifest.datasets.insert(role.to_string(), DatasetRef::new(path, ds));
    }
    manifest.outputs = [CHECKPOINT_FILE, METRICS_FILE, SUMMARY_FILE].map(String::from).to_vec();
    let hash = manifest.hash();
    create_dir(&args.out_dir)?;
    std::fs::write(args.out_dir.join(MANIFEST_FILE), manifest.to_json())
        .map_err(|e| CliError::data(format!("{}: {e}", args.out_dir.display())))?;

    let summary = match cfg.precision {
        Precision::F32 => train_at::<f32>(&cfg, &sets, &args.out_dir, &hash)?,
        Precision::F64 => train_at::<f64>(&cfg, &sets, &args.out_dir, &hash)?,
    };
    report::write_json(&args.out_dir.join(SUMMARY_FILE), &summary)?;
    match (summary.test_acc, summary.test_ci) {
        (Some(acc), Some(ci)) => println!("test accuracy {:.4} ± {:.4} (best iteration {})", acc, ci, summary.best_iter),
        _ => println!("best validation accuracy {:.4} at iteration {}", summary.best_val_acc, summary.best_iter),
    }
    Ok(summary)
}

fn train_at<T: Real>(cfg: &TrainConfig, sets: &[EmbeddingDataset], out_dir: &Path, hash: &str) -> CliResult<Summary> {
    let outcome = train_with_progress::<T>(&sets[0], &sets[1], cfg, |row| {
        eprintln!(
            "iter {:>5}  loss {:.4}  val_acc {:.4} ± {:.4}",
            row.iter, row.loss, row.val_acc, row.val_ci
        );
    })?;
    checkpoint::save(&outcome.best, out_dir.join(CHECKPOINT_FILE))?;
    report::write_metrics(&out_dir.join(METRICS_FILE), hash, &outcome.log)?;
    let test = sets
        .get(2)
        .map(|ds| evaluate(ds, &outcome.best.params, cfg, cfg.test_episodes))
        .transpose()?;
    Ok(Summary {
        config: cfg.clone(),
        best_iter: outcome.best.iteration,
        best_val_acc: outcome.best.val_acc,
        iterations_run: outcome.iterations_run,
        test_acc: test.as_ref().map(|t| t.accuracy),
        test_ci: test.as_ref().map(|t| t.ci),
        test_per_layer: test.map(|t| t.per_layer),
        manifest: hash.to_string(),
    })
}

fn eval_at<T: Real>(ckpt: &Checkpoint<T>, ds: &EmbeddingDataset, cfg: &TrainConfig, episodes: usize) -> CliResult<hosp_core::trainer::EvalResult> {
    Ok(evaluate(ds, &ckpt.params, cfg, episodes)?)
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<EvalReport> {
    if args.episodes == 0 || args.workers == 0 {
        return Err(CliError::usage("--episodes and --workers must be at least 1"));
    }
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let ds = load_dataset(&args.data, Split::Test)?;
    let mut cfg = ckpt.config().clone();
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.workers = args.workers;
    let result = match &ckpt {
        AnyCheckpoint::F32(c) => eval_at(c, &ds, &cfg, args.episodes)?,
        AnyCheckpoint::F64(c) => eval_at(c, &ds, &cfg, args.episodes)?,
    };
    println!(
        "accuracy {:.4} ± {:.4} over {} episodes",
        result.accuracy, result.ci, result.episodes
    );
    let report = EvalReport {
        checkpoint: args.checkpoint.display().to_string(),
        data: args.data.display().to_string(),
        data_fingerprint: ds.fingerprint(),
        episodes: result.episodes,
        seed: cfg.seed,
        accuracy: result.accuracy,
        ci: result.ci,
        per_layer: result.per_layer,
        config_hash: ckpt.config().hash(),
    };
    if let Some(out) = &args.out {
        report::write_json(out, &report)?;
    }
    Ok(report)
}

/// Output file names for an ablation over `axis`.
pub fn ablation_files(axis: AblationAxis) -> (String, String) {
    (format!("ablation_{axis}.txt"), format!("ablation_{axis}.csv"))
}

pub fn cmd_ablate(args: &AblateArgs) -> CliResult<AblationTable> {
    let cfg = resolve(&args.config)?;
    let axis: AblationAxis = args.axis.parse().map_err(|e: hosp_core::Error| CliError::usage(e.to_string()))?;
    let values = if args.values.is_empty() {
        axis.default_values()
    } else {
        args.values.clone()
    };
    for v in &values {
        axis.apply(&cfg, v).map_err(|e| CliError::usage(e.to_string()))?;
    }
    let splits = [
        ("train", args.train.as_path(), Split::Train),
        ("val", args.val.as_path(), Split::Validation),
        ("test", args.test.as_path(), Split::Test),
    ];
    let sets = load_splits(&splits)?;

    let (txt, csv) = ablation_files(axis);
    let mut manifest = RunManifest::new("ablate", &cfg);
    for ((role, path, _), ds) in splits.iter().zip(&sets) {
        manifest.datasets.insert(role.to_string(), DatasetRef::new(path, ds));
    }
    manifest.outputs = vec![txt.clone(), csv.clone()];
    manifest.extra.insert("axis".into(), axis.to_string());
    manifest.extra.insert("values".into(), values.join(","));
    let hash = manifest.hash();
    create_dir(&args.out_dir)?;
    std::fs::write(args.out_dir.join(MANIFEST_FILE), manifest.to_json())
        .map_err(|e| CliError::data(format!("{}: {e}", args.out_dir.display())))?;

    let print = |row: &hosp_core::trainer::AblationRow| {
        eprintln!("{axis} = {}: accuracy {:.4} ± {:.4}", row.value, row.accuracy, row.ci);
    };
    let table = match cfg.precision {
        Precision::F32 => run_ablation::<f32>(&sets[0], &sets[1], &sets[2], &cfg, axis, &values, print)?,
        Precision::F64 => run_ablation::<f64>(&sets[0], &sets[1], &sets[2], &cfg, axis, &values, print)?,
    };
    let text = format!("# manifest {hash}\n{}", table.to_text());
    std::fs::write(args.out_dir.join(&txt), &text).map_err(|e| CliError::data(format!("{txt}: {e}")))?;
    report::write_ablation_csv(&args.out_dir.join(&csv), &hash, &table.rows)?;
    print!("{}", table.to_text());
    Ok(table)
}
