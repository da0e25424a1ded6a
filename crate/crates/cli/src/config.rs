//! One structured config file per run, TOML, with `--set key=value`
//! overrides. Every parameter a command needs comes from here (or a
//! documented default); missing required keys are reported by name.
//!
//! Key map:
//! - `model.*`: vocab_size, d_model, n_layers, n_heads, d_ff, max_len, seed
//! - `loss.*`: variant, beta, kto_lambda_w, kto_lambda_u
//! - `data.*`: t_c (required), t_r (required), n_pairs, k_context,
//!   val_fraction, seed
//! - `train.*`: lr, epochs, batch_size, grad_accum, eval_every, seed,
//!   val_fraction
//! - `oracle.*`: seed, len_min, len_max, noise_sd, n_motifs, motif_bonus,
//!   weight_sd, plant_prob, n_decoys, n_targets (required for synth-gen),
//!   n_per_target (required for synth-gen)

use std::path::Path;

use crate::error::CliError;
use hitmat_core::dataset::DatasetConfig;
use hitmat_core::eval::SynthParams;
use hitmat_core::loss::{LossConfig, LossVariant};
use hitmat_core::model::ModelConfig;
use hitmat_core::train::TrainConfig;

#[derive(Debug, Clone, Default)]
pub struct Cfg {
    root: toml::Table,
}

impl Cfg {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Cfg, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Cfg::parse(&text)
            .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        cfg.apply_overrides(overrides)?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Cfg, CliError> {
        let root: toml::Table =
            toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        Ok(Cfg { root })
    }

    /// Applies `key.path=value` overrides; values parse as TOML scalars and
    /// fall back to strings.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for ov in overrides {
            let (key, value) = ov
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("--set expects key=value, got {ov:?}")))?;
            let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("x = {value}")) {
                Ok(mut t) => t.remove("x").expect("key x present"),
                Err(_) => toml::Value::String(value.to_string()),
            };
            let mut node = &mut self.root;
            let parts: Vec<&str> = key.split('.').collect();
            for part in &parts[..parts.len() - 1] {
                node = node
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| {
                        CliError::config(format!("--set {key}: {part} is not a table"))
                    })?;
            }
            node.insert(parts[parts.len() - 1].to_string(), parsed);
        }
        Ok(())
    }

    /// Sets every `*.seed` key, for the global `--seed` override.
    pub fn override_all_seeds(&mut self, seed: u64) -> Result<(), CliError> {
        for section in ["model", "data", "train", "oracle"] {
            self.apply_overrides(&[format!("{section}.seed={seed}")])?;
        }
        Ok(())
    }

    fn lookup(&self, key: &str) -> Option<&toml::Value> {
        let mut parts = key.split('.');
        let first = parts.next()?;
        let mut node = self.root.get(first)?;
        for part in parts {
            node = node.as_table()?.get(part)?;
        }
        Some(node)
    }

    pub fn f64_req(&self, key: &str) -> Result<f64, CliError> {
        self.f64_opt(key)?
            .ok_or_else(|| CliError::config(format!("missing config key {key}")))
    }

    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.lookup(key) {
            None => Ok(None),
            Some(v) => v
                .as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .map(Some)
                .ok_or_else(|| CliError::config(format!("config key {key} must be a number"))),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    pub fn usize_req(&self, key: &str) -> Result<usize, CliError> {
        self.usize_opt(key)?
            .ok_or_else(|| CliError::config(format!("missing config key {key}")))
    }

    pub fn usize_opt(&self, key: &str) -> Result<Option<usize>, CliError> {
        match self.lookup(key) {
            None => Ok(None),
            Some(v) => v
                .as_integer()
                .and_then(|i| usize::try_from(i).ok())
                .map(Some)
                .ok_or_else(|| {
                    CliError::config(format!("config key {key} must be a non-negative integer"))
                }),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, CliError> {
        Ok(self.usize_opt(key)?.unwrap_or(default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, CliError> {
        match self.lookup(key) {
            None => Ok(default),
            Some(v) => v
                .as_integer()
                .and_then(|i| u64::try_from(i).ok())
                .ok_or_else(|| {
                    CliError::config(format!("config key {key} must be a non-negative integer"))
                }),
        }
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> Result<&'a str, CliError> {
        match self.lookup(key) {
            None => Ok(default),
            Some(v) => v
                .as_str()
                .ok_or_else(|| CliError::config(format!("config key {key} must be a string"))),
        }
    }

    /// The resolved table, for manifests.
    pub fn as_table(&self) -> &toml::Table {
        &self.root
    }
}

pub fn model_config(cfg: &Cfg) -> Result<ModelConfig, CliError> {
    let d = ModelConfig::default();
    let mc = ModelConfig {
        vocab_size: cfg.usize_or("model.vocab_size", d.vocab_size)?,
        d_model: cfg.usize_or("model.d_model", d.d_model)?,
        n_layers: cfg.usize_or("model.n_layers", d.n_layers)?,
        n_heads: cfg.usize_or("model.n_heads", d.n_heads)?,
        d_ff: cfg.usize_or("model.d_ff", d.d_ff)?,
        max_len: cfg.usize_or("model.max_len", d.max_len)?,
        seed: cfg.u64_or("model.seed", d.seed)?,
    };
    mc.validate()?;
    Ok(mc)
}

pub fn loss_config(cfg: &Cfg) -> Result<LossConfig, CliError> {
    let variant_name = cfg.str_or("loss.variant", "sigmoid")?;
    let variant = LossVariant::parse(variant_name).ok_or_else(|| {
        CliError::config(format!(
            "unknown loss.variant {variant_name:?} (expected sigmoid, hinge, or kto)"
        ))
    })?;
    let lc = LossConfig {
        variant,
        beta: cfg.f64_or("loss.beta", 0.1)?,
        kto_lambda_w: cfg.f64_or("loss.kto_lambda_w", 1.0)?,
        kto_lambda_u: cfg.f64_or("loss.kto_lambda_u", 1.0)?,
    };
    lc.validate()?;
    Ok(lc)
}

pub fn dataset_config(cfg: &Cfg) -> Result<DatasetConfig, CliError> {
    let dc = DatasetConfig {
        t_c: cfg.f64_req("data.t_c")?,
        t_r: cfg.f64_req("data.t_r")?,
        n_pairs: cfg.usize_or("data.n_pairs", 10)?,
        k_context: cfg.usize_or("data.k_context", 5)?,
        val_fraction: cfg.f64_or("data.val_fraction", 0.1)?,
        seed: cfg.u64_or("data.seed", 0)?,
    };
    dc.validate()?;
    Ok(dc)
}

pub fn train_config(cfg: &Cfg) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    let tc = TrainConfig {
        lr: cfg.f64_or("train.lr", d.lr)?,
        epochs: cfg.usize_or("train.epochs", d.epochs)?,
        batch_size: cfg.usize_or("train.batch_size", d.batch_size)?,
        grad_accum: cfg.usize_or("train.grad_accum", d.grad_accum)?,
        eval_every: cfg.usize_or("train.eval_every", d.eval_every)?,
        seed: cfg.u64_or("train.seed", d.seed)?,
        val_fraction: cfg.f64_or("train.val_fraction", d.val_fraction)?,
        loss: loss_config(cfg)?,
    };
    tc.validate()?;
    Ok(tc)
}

/// Synthetic-oracle parameters plus population size (the latter two keys are
/// required: synth-gen has no default scale).
pub fn synth_params(cfg: &Cfg) -> Result<(SynthParams, usize, usize), CliError> {
    let d = SynthParams::default();
    let params = SynthParams {
        seed: cfg.u64_or("oracle.seed", d.seed)?,
        len_min: cfg.usize_or("oracle.len_min", d.len_min)?,
        len_max: cfg.usize_or("oracle.len_max", d.len_max)?,
        noise_sd: cfg.f64_or("oracle.noise_sd", d.noise_sd)?,
        n_motifs: cfg.usize_or("oracle.n_motifs", d.n_motifs)?,
        motif_bonus: cfg.f64_or("oracle.motif_bonus", d.motif_bonus)?,
        weight_sd: cfg.f64_or("oracle.weight_sd", d.weight_sd)?,
        plant_prob: cfg.f64_or("oracle.plant_prob", d.plant_prob)?,
        n_decoys: cfg.usize_or("oracle.n_decoys", d.n_decoys)?,
    };
    let n_per_target = cfg.usize_req("oracle.n_per_target")?;
    let n_targets = cfg.usize_req("oracle.n_targets")?;
    if n_targets == 0 {
        return Err(CliError::config("oracle.n_targets must be positive"));
    }
    if n_per_target == 0 {
        return Err(CliError::config("oracle.n_per_target must be positive"));
    }
    Ok((params, n_per_target, n_targets))
}
