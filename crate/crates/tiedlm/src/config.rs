//! Flat key=value configuration with layered resolution.
//!
//! Precedence, lowest to highest: built-in defaults, a named preset, a
//! config file, `TIEDLM_*` environment variables, command-line flags.
//! Every key below maps to exactly one training-config field; unknown
//! keys are rejected by name.  The same format is echoed back as the
//! resolved config of a run, and it deliberately matches the checkpoint
//! header's key=value shape.

use anyhow::{anyhow, bail, Context, Result};
use tiedlm_core::loss::{LossConfig, LossMode};
use tiedlm_core::net::ModelConfig;
use tiedlm_core::trainer::TrainConfig;

/// Every config key, in canonical (echo) order.  The environment override
/// for a key is `TIEDLM_` plus the key upper-cased, e.g. `TIEDLM_LR_INIT`.
pub const KEYS: [&str; 22] = [
    "vocab_size",
    "embed_dim",
    "hidden_dim",
    "num_layers",
    "tie_weights",
    "dropout_p",
    "unit_norm_embeddings",
    "mode",
    "tau",
    "alpha",
    "gamma",
    "beta",
    "stop_gradient_through_target",
    "lr_init",
    "decay_start_epoch",
    "decay_rate",
    "clip_norm",
    "epochs",
    "bptt_steps",
    "batch_size",
    "seed",
    "log_subspace",
];

/// Baseline defaults before any preset/file/env/flag is applied.
/// `vocab_size` 0 means "derive from the training corpus".
pub fn default_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            vocab_size: 0,
            embed_dim: 200,
            hidden_dim: 200,
            num_layers: 2,
            tie_weights: false,
            dropout_p: 0.0,
            unit_norm_embeddings: true,
            seed: 0,
        },
        loss: LossConfig::default(),
        lr_init: 1.0,
        decay_start_epoch: 5,
        decay_rate: 0.9,
        clip_norm: 5.0,
        epochs: 13,
        bptt_steps: 35,
        batch_size: 20,
        seed: 0,
        log_subspace: false,
    }
}

pub const PRESET_NAMES: [&str; 6] = [
    "ptb-small",
    "ptb-medium",
    "ptb-large",
    "wt2-small",
    "wt2-medium",
    "tiny",
];

/// Named hyperparameter profiles for the standard setups.  All keep the
/// loss in baseline mode — `--variant` is what switches the loss on — but
/// carry the temperature and loss-weight ratio to use when it is.
pub fn preset(name: &str) -> Result<TrainConfig> {
    let mut cfg = default_config();
    cfg.loss.tau = 20.0;
    match name {
        "ptb-small" => {
            cfg.loss.gamma = Some(0.65);
            set_dims(&mut cfg, 200);
            cfg.model.dropout_p = 0.3;
            cfg.decay_start_epoch = 5;
            cfg.decay_rate = 0.9;
            cfg.clip_norm = 5.0;
            cfg.epochs = 13;
        }
        "ptb-medium" => {
            cfg.loss.gamma = Some(0.65);
            set_dims(&mut cfg, 650);
            cfg.model.dropout_p = 0.5;
            cfg.decay_start_epoch = 10;
            cfg.decay_rate = 0.9;
            cfg.clip_norm = 5.0;
            cfg.epochs = 39;
        }
        "ptb-large" => {
            cfg.loss.gamma = Some(0.65);
            set_dims(&mut cfg, 1500);
            cfg.model.dropout_p = 0.65;
            cfg.decay_start_epoch = 1;
            cfg.decay_rate = 0.97;
            cfg.clip_norm = 6.0;
            cfg.epochs = 55;
        }
        "wt2-small" => {
            cfg.loss.gamma = Some(1.25);
            set_dims(&mut cfg, 200);
            cfg.model.dropout_p = 0.2;
            cfg.decay_start_epoch = 5;
            cfg.decay_rate = 0.9;
            cfg.clip_norm = 5.0;
            cfg.epochs = 13;
        }
        "wt2-medium" => {
            cfg.loss.gamma = Some(1.25);
            set_dims(&mut cfg, 650);
            cfg.model.dropout_p = 0.4;
            cfg.decay_start_epoch = 10;
            cfg.decay_rate = 0.9;
            cfg.clip_norm = 5.0;
            cfg.epochs = 39;
        }
        "tiny" => {
            cfg.loss.tau = 10.0;
            cfg.loss.gamma = Some(0.5);
            set_dims(&mut cfg, 100);
            cfg.model.dropout_p = 0.0;
            cfg.lr_init = 2.0;
            cfg.decay_start_epoch = 15;
            cfg.decay_rate = 0.9;
            cfg.clip_norm = 5.0;
            cfg.epochs = 30;
            // Small nets under the +-0.05 init spend a long time on the
            // unigram plateau before the contextual path wakes; a short
            // unroll and small batches buy the update count that gets a
            // 100-unit model through it inside the 30-epoch budget.
            cfg.bptt_steps = 7;
            cfg.batch_size = 10;
        }
        other => bail!(
            "unknown preset {other:?} (expected one of {})",
            PRESET_NAMES.join(", ")
        ),
    }
    Ok(cfg)
}

fn set_dims(cfg: &mut TrainConfig, d: usize) {
    cfg.model.embed_dim = d;
    cfg.model.hidden_dim = d;
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("config key {key}={value}: {e}"))
}

fn parse_optional(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "none" {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

/// Apply one key=value assignment.  Unknown keys fail by name.
pub fn apply_kv(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "vocab_size" => cfg.model.vocab_size = parse_value(key, value)?,
        "embed_dim" => cfg.model.embed_dim = parse_value(key, value)?,
        "hidden_dim" => cfg.model.hidden_dim = parse_value(key, value)?,
        "num_layers" => cfg.model.num_layers = parse_value(key, value)?,
        "tie_weights" => cfg.model.tie_weights = parse_value(key, value)?,
        "dropout_p" => cfg.model.dropout_p = parse_value(key, value)?,
        "unit_norm_embeddings" => cfg.model.unit_norm_embeddings = parse_value(key, value)?,
        "mode" => cfg.loss.mode = parse_value::<LossMode>(key, value)?,
        "tau" => cfg.loss.tau = parse_value(key, value)?,
        "alpha" => cfg.loss.alpha = parse_optional(key, value)?,
        "gamma" => cfg.loss.gamma = parse_optional(key, value)?,
        "beta" => cfg.loss.beta = parse_value(key, value)?,
        "stop_gradient_through_target" => {
            cfg.loss.stop_gradient_through_target = parse_value(key, value)?
        }
        "lr_init" => cfg.lr_init = parse_value(key, value)?,
        "decay_start_epoch" => cfg.decay_start_epoch = parse_value(key, value)?,
        "decay_rate" => cfg.decay_rate = parse_value(key, value)?,
        "clip_norm" => cfg.clip_norm = parse_value(key, value)?,
        "epochs" => cfg.epochs = parse_value(key, value)?,
        "bptt_steps" => cfg.bptt_steps = parse_value(key, value)?,
        "batch_size" => cfg.batch_size = parse_value(key, value)?,
        "seed" => cfg.seed = parse_value(key, value)?,
        "log_subspace" => cfg.log_subspace = parse_value(key, value)?,
        other => bail!("unknown config key {other:?}"),
    }
    Ok(())
}

/// Parse a config file body: one key=value per line; blank lines and
/// `#` comments allowed.
pub fn apply_config_text(cfg: &mut TrainConfig, text: &str) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("line {}: expected key=value, got {line:?}", i + 1))?;
        apply_kv(cfg, key.trim(), value.trim())
            .with_context(|| format!("line {}", i + 1))?;
    }
    Ok(())
}

/// Overlay `TIEDLM_<KEY>` environment variables.
pub fn apply_env(cfg: &mut TrainConfig) -> Result<()> {
    for key in KEYS {
        let var = format!("TIEDLM_{}", key.to_uppercase());
        if let Ok(value) = std::env::var(&var) {
            apply_kv(cfg, key, &value).with_context(|| format!("from {var}"))?;
        }
    }
    Ok(())
}

fn render_optional(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

/// The fully resolved config as re-parseable key=value text, keys in
/// canonical order.
pub fn render_config(cfg: &TrainConfig) -> String {
    let mut out = String::new();
    for key in KEYS {
        let value = match key {
            "vocab_size" => cfg.model.vocab_size.to_string(),
            "embed_dim" => cfg.model.embed_dim.to_string(),
            "hidden_dim" => cfg.model.hidden_dim.to_string(),
            "num_layers" => cfg.model.num_layers.to_string(),
            "tie_weights" => cfg.model.tie_weights.to_string(),
            "dropout_p" => cfg.model.dropout_p.to_string(),
            "unit_norm_embeddings" => cfg.model.unit_norm_embeddings.to_string(),
            "mode" => cfg.loss.mode.name().to_string(),
            "tau" => cfg.loss.tau.to_string(),
            "alpha" => render_optional(cfg.loss.alpha),
            "gamma" => render_optional(cfg.loss.gamma),
            "beta" => cfg.loss.beta.to_string(),
            "stop_gradient_through_target" => cfg.loss.stop_gradient_through_target.to_string(),
            "lr_init" => cfg.lr_init.to_string(),
            "decay_start_epoch" => cfg.decay_start_epoch.to_string(),
            "decay_rate" => cfg.decay_rate.to_string(),
            "clip_norm" => cfg.clip_norm.to_string(),
            "epochs" => cfg.epochs.to_string(),
            "bptt_steps" => cfg.bptt_steps.to_string(),
            "batch_size" => cfg.batch_size.to_string(),
            "seed" => cfg.seed.to_string(),
            "log_subspace" => cfg.log_subspace.to_string(),
            _ => unreachable!(),
        };
        out.push_str(key);
        out.push('=');
        out.push_str(&value);
        out.push('\n');
    }
    out
}
