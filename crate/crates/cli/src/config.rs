//! Flat `key = value` run configuration: one plain-text file with dotted
//! keys, overridable from the command line via repeated `--set key=value`.
//! Unknown keys are rejected so typos surface before any work starts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use tempex_core::data::GridConfig;
use tempex_core::eval::EvalConfig;
use tempex_core::model::ModelDims;
use tempex_core::objective::{ObjectiveConfig, ObjectiveMode};
use tempex_core::train::TrainConfig;
use tempex_core::{Error, Result};

/// Every recognized key with its default value and a one-line description.
pub const KNOWN_KEYS: &[(&str, &str, &str)] = &[
    ("seed", "42", "global seed; all randomness derives from it"),
    ("data.path", "", "input ratings file (user,item,day,rating[,split])"),
    ("data.epoch_length_days", "30", "days per model epoch"),
    ("data.origin_day", "0", "day-stamp of epoch 0"),
    ("data.test_fraction", "0.2", "per-user temporal holdout fraction"),
    ("data.out", "dataset.csv", "output path for ingest/synth"),
    ("synth.users", "50", "synthetic users"),
    ("synth.items", "40", "synthetic items"),
    ("synth.epochs", "6", "synthetic epochs"),
    ("synth.density", "0.2", "per (user,item,epoch) emission probability"),
    ("synth.rank", "2", "planted factor rank"),
    ("synth.drift", "0.05", "per-epoch user-factor drift scale"),
    ("synth.noise_sd", "0.25", "rating noise standard deviation"),
    ("synth.groups", "5", "planted taste groups; 1 disables"),
    ("synth.focus", "0.75", "observation tilt toward same-group items [0,1)"),
    ("synth.group_affinity", "0.5", "rating boost for same-group pairs"),
    ("graph.p", "10", "neighbourhood size"),
    ("graph.normalized", "false", "norm-divided similarity variant"),
    ("graph.temporal_out", "graph_temporal.csv", "temporal weight export"),
    (
        "graph.stationary_out",
        "graph_stationary.csv",
        "stationary weight export",
    ),
    ("model.hidden", "8", "LSTM hidden dimension"),
    ("model.input_dim", "8", "LSTM input embedding dimension"),
    ("model.dynamic_dim", "8", "projected dynamic latent dimension"),
    ("model.stationary_dim", "8", "stationary embedding dimension"),
    ("model.center_inputs", "false", "centre star values at 3 in inputs"),
    ("objective.mode", "fluid", "dry | fluid"),
    ("objective.alpha", "0.4", "alignment weight (dry) or decay rate (fluid)"),
    ("objective.beta", "0.6", "stationary alignment weight"),
    ("objective.lambda", "0.0001", "L2 regularization weight"),
    ("objective.pair_budget", "0", "alignment pair sample cap; 0 = exact"),
    (
        "objective.beta_on_dynamic",
        "false",
        "use reference-epoch dynamic latents in the stationary term",
    ),
    ("train.rounds", "30", "outer rounds (each = user phase + item phase)"),
    ("train.phase_steps", "50", "gradient steps per phase"),
    ("train.learning_rate", "0.005", "ADAM learning rate"),
    ("train.adam_beta1", "0.9", "ADAM first-moment decay"),
    ("train.adam_beta2", "0.999", "ADAM second-moment decay"),
    ("train.adam_eps", "1e-8", "ADAM epsilon"),
    ("train.dropout", "0.0", "hidden-output dropout rate"),
    ("train.checkpoint", "model.json", "checkpoint path"),
    ("train.log", "train_log.jsonl", "per-phase training log path"),
    ("eval.top_n", "10", "recommendation list length"),
    ("eval.theta_exp", "0.01", "explainability threshold on stationary weights"),
    ("eval.relevance_min", "4", "minimum test rating counted as relevant"),
    ("eval.report", "report.json", "evaluation report path"),
    ("eval.per_user", "per_user.csv", "per-user evaluation rows path"),
    ("explain.user", "", "user id to explain (or --user)"),
    ("explain.item", "", "item id to explain (or --item)"),
    ("explain.buckets", "30,365", "recency bucket bounds in days"),
    ("sweep.p_values", "5,10,20,50", "neighbourhood sizes to sweep"),
    ("sweep.out", "sweep.csv", "sweep output CSV"),
    ("grid.alphas", "0,0.2,0.4,0.6,0.8,1.0", "alpha grid"),
    ("grid.betas", "0,0.2,0.4,0.6,0.8,1.0", "beta grid"),
    ("grid.out", "grid.csv", "grid-search table CSV"),
];

/// Rendered key table for `--help`.
pub fn config_help() -> String {
    let mut out = String::from("Config keys (file `key = value` lines or --set key=value):\n");
    for (key, default, help) in KNOWN_KEYS {
        let shown = if default.is_empty() { "(unset)" } else { default };
        out.push_str(&format!("  {key:28} default {shown:24} {help}\n"));
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl ConfigMap {
    /// Loads the optional file, then applies `--set` overrides in order.
    pub fn load(file: Option<&Path>, sets: &[String]) -> Result<ConfigMap> {
        let mut cfg = ConfigMap::default();
        if let Some(path) = file {
            if !path.exists() {
                return Err(Error::MissingArtifact(path.to_path_buf()));
            }
            let text = fs::read_to_string(path)?;
            for (idx, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| Error::MalformedLine {
                    line: idx + 1,
                    reason: format!("expected key = value, found {line:?}"),
                })?;
                cfg.insert(key.trim(), value.trim())?;
            }
        }
        for s in sets {
            let (key, value) = s.split_once('=').ok_or_else(|| {
                Error::ConfigInvalid(format!("--set expects key=value, found {s:?}"))
            })?;
            cfg.insert(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn insert(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.iter().any(|(k, _, _)| *k == key) {
            return Err(Error::ConfigInvalid(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        if let Some(v) = self.values.get(key) {
            return v;
        }
        KNOWN_KEYS
            .iter()
            .find(|(k, _, _)| *k == key)
            .map(|(_, default, _)| *default)
            .unwrap_or_else(|| panic!("unregistered config key {key}"))
    }

    pub fn get_path(&self, key: &str) -> Result<PathBuf> {
        let v = self.get(key);
        if v.is_empty() {
            return Err(Error::ConfigInvalid(format!("{key} is not set")));
        }
        Ok(PathBuf::from(v))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.get(key)
            .parse()
            .map_err(|_| Error::ConfigInvalid(format!("{key} must be a number, got {:?}", self.get(key))))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)
            .parse()
            .map_err(|_| Error::ConfigInvalid(format!("{key} must be an integer, got {:?}", self.get(key))))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.get(key)
            .parse()
            .map_err(|_| Error::ConfigInvalid(format!("{key} must be an integer, got {:?}", self.get(key))))
    }

    pub fn get_u32(&self, key: &str) -> Result<u32> {
        self.get(key)
            .parse()
            .map_err(|_| Error::ConfigInvalid(format!("{key} must be an integer, got {:?}", self.get(key))))
    }

    pub fn get_u8(&self, key: &str) -> Result<u8> {
        self.get(key)
            .parse()
            .map_err(|_| Error::ConfigInvalid(format!("{key} must be an integer, got {:?}", self.get(key))))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(Error::ConfigInvalid(format!(
                "{key} must be true or false, got {other:?}"
            ))),
        }
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Vec<f64>> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::ConfigInvalid(format!("{key}: bad number {s:?}")))
            })
            .collect()
    }

    pub fn get_usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::ConfigInvalid(format!("{key}: bad integer {s:?}")))
            })
            .collect()
    }

    pub fn get_u32_list(&self, key: &str) -> Result<Vec<u32>> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::ConfigInvalid(format!("{key}: bad integer {s:?}")))
            })
            .collect()
    }

    pub fn grid_config(&self) -> Result<GridConfig> {
        let epoch_length_days = self.get_u32("data.epoch_length_days")?;
        if epoch_length_days == 0 {
            return Err(Error::ConfigInvalid(
                "data.epoch_length_days must be at least 1".into(),
            ));
        }
        Ok(GridConfig {
            epoch_length_days,
            origin_day: self.get_u32("data.origin_day")?,
        })
    }

    pub fn objective_config(&self) -> Result<ObjectiveConfig> {
        let mode = match self.get("objective.mode") {
            "dry" => ObjectiveMode::Dry,
            "fluid" => ObjectiveMode::Fluid,
            other => {
                return Err(Error::ConfigInvalid(format!(
                    "objective.mode must be dry or fluid, got {other:?}"
                )))
            }
        };
        let cfg = ObjectiveConfig {
            mode,
            alpha: self.get_f64("objective.alpha")?,
            beta: self.get_f64("objective.beta")?,
            lambda_reg: self.get_f64("objective.lambda")?,
            pair_budget: self.get_usize("objective.pair_budget")?,
            beta_on_dynamic: self.get_bool("objective.beta_on_dynamic")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            rounds: self.get_usize("train.rounds")?,
            phase_steps: self.get_usize("train.phase_steps")?,
            learning_rate: self.get_f64("train.learning_rate")?,
            adam_beta1: self.get_f64("train.adam_beta1")?,
            adam_beta2: self.get_f64("train.adam_beta2")?,
            adam_eps: self.get_f64("train.adam_eps")?,
            dropout_rate: self.get_f64("train.dropout")?,
            seed: self.get_u64("seed")?,
            objective: self.objective_config()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        let cfg = EvalConfig {
            top_n: self.get_usize("eval.top_n")?,
            theta_exp: self.get_f64("eval.theta_exp")?,
            relevance_min: self.get_u8("eval.relevance_min")?,
        };
        if cfg.top_n == 0 {
            return Err(Error::ConfigInvalid("eval.top_n must be at least 1".into()));
        }
        if cfg.theta_exp < 0.0 {
            return Err(Error::ConfigInvalid(
                "eval.theta_exp must be non-negative".into(),
            ));
        }
        Ok(cfg)
    }

    /// Model dimensions; entity counts and epochs come from the dataset.
    pub fn model_dims(&self, ds: &tempex_core::data::RatingDataset) -> Result<ModelDims> {
        let dims = ModelDims {
            num_users: ds.num_users,
            num_items: ds.num_items,
            num_epochs: ds.grid.num_epochs,
            hidden: self.get_usize("model.hidden")?,
            input_dim: self.get_usize("model.input_dim")?,
            dynamic_dim: self.get_usize("model.dynamic_dim")?,
            stationary_dim: self.get_usize("model.stationary_dim")?,
            center_inputs: self.get_bool("model.center_inputs")?,
        };
        dims.validate()?;
        Ok(dims)
    }
}
