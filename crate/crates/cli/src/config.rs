use std::path::Path;

use hosp_core::params::MetricInput;
use hosp_core::trainer::TrainConfig;

use crate::args::{ConfigArgs, MetricInputArg};
use crate::{CliError, CliResult};

pub fn load_config_file(path: &Path) -> CliResult<TrainConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn parsed<T: std::str::FromStr>(flag: &str, value: &Option<String>) -> CliResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .as_deref()
        .map(|v| v.parse::<T>().map_err(|e| CliError::usage(format!("--{flag}: {e}"))))
        .transpose()
}

/// Defaults, then the config file, then flags; validated before any compute.
pub fn resolve(args: &ConfigArgs) -> CliResult<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => load_config_file(path)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident <- $flag:ident),* $(,)?) => {
            $(if let Some(v) = args.$flag.clone() {
                cfg.$field = v;
            })*
        };
    }
    set!(
        n_way <- n_way,
        k_shot <- k_shot,
        n_query <- queries,
        layers <- layers,
        lambda <- lambda,
        label_fraction <- label_fraction,
        learning_rate <- learning_rate,
        weight_decay <- weight_decay,
        episodes_per_batch <- episodes_per_batch,
        total_iterations <- iterations,
        eval_every <- eval_every,
        eval_episodes <- eval_episodes,
        test_episodes <- test_episodes,
        seed <- seed,
        hidden_dim <- hidden_dim,
        metric_hidden <- metric_hidden,
        encoder <- encoder,
        standardize <- standardize,
        self_feature <- self_feature,
        leaky_slope <- leaky_slope,
        workers <- workers,
    );
    if let Some(v) = parsed("variant", &args.variant)? {
        cfg.variant = v;
    }
    if let Some(v) = parsed("readout", &args.readout)? {
        cfg.readout_channel = v;
    }
    if let Some(v) = parsed("precision", &args.precision)? {
        cfg.precision = v;
    }
    if let Some(m) = args.metric_input {
        cfg.metric_input = match m {
            MetricInputArg::Distance => MetricInput::Distance,
            MetricInputArg::AbsDiff => MetricInput::AbsDiff,
        };
    }
    if args.target_val_acc.is_some() {
        cfg.target_val_acc = args.target_val_acc;
    }
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(cfg)
}
