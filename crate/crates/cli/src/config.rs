//! Layered flat key=value configuration.
//!
//! Precedence, lowest to highest: built-in defaults, config file,
//! `COGRAPH_<KEY>` environment variables, then command-line `--set key=value`
//! pairs and dedicated flags. Every run echoes its fully resolved
//! configuration into the output directory before doing any work, so a run
//! can be replayed from its artifacts alone.

use std::path::Path;

use cograph_core::distmult::DistMultConfig;
use cograph_core::error::{Error, Result};
use cograph_core::evaluator::EvalConfig;
use cograph_core::params::AdamConfig;
use cograph_core::reasoner::ReasonConfig;
use cograph_core::scalar::FloatWidth;
use cograph_core::taskgen::SynthSpec;
use cograph_core::trainer::TrainConfig;

pub const ENV_PREFIX: &str = "COGRAPH_";

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("{key}={value:?}: expected {want}"))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| bad(key, v, "a number"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(bad(key, v, "true or false")),
    }
}

/// Parse a flat key=value file: one pair per line, `#` starts a comment,
/// blank lines skipped.
pub fn parse_kv_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv_text(&text, &path.display().to_string())
}

pub fn parse_kv_text(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{origin}:{}: expected key=value, got {raw:?}",
                i + 1
            )));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Split a `--set key=value` argument.
pub fn parse_set_arg(arg: &str) -> Result<(String, String)> {
    arg.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::Config(format!("--set {arg:?}: expected key=value")))
}

/// Anything that exposes a flat key set can be layered from files, the
/// environment, and flag overrides.
pub trait KvConfig: Sized {
    fn apply(&mut self, key: &str, value: &str) -> Result<()>;
    fn pairs(&self) -> Vec<(&'static str, String)>;

    /// Apply `COGRAPH_<KEY>` variables for every known key.
    fn apply_env(&mut self) -> Result<()> {
        let keys: Vec<&'static str> = self.pairs().iter().map(|(k, _)| *k).collect();
        for key in keys {
            let var = format!("{ENV_PREFIX}{}", key.to_uppercase());
            if let Ok(v) = std::env::var(&var) {
                self.apply(key, &v)?;
            }
        }
        Ok(())
    }

    /// Rendered resolved configuration, defaults included.
    fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    /// defaults -> file -> env -> --set pairs.
    fn resolve(file: Option<&Path>, sets: &[String]) -> Result<Self>
    where
        Self: Default,
    {
        let mut cfg = Self::default();
        if let Some(path) = file {
            for (k, v) in parse_kv_file(path)? {
                cfg.apply(&k, &v)?;
            }
        }
        cfg.apply_env()?;
        for arg in sets {
            let (k, v) = parse_set_arg(arg)?;
            cfg.apply(&k, &v)?;
        }
        Ok(cfg)
    }
}

fn fmt_f64(v: f64) -> String {
    // round-trippable text so echoed configs replay exactly
    format!("{v:?}")
}

/// Model, optimizer, rollout, and evaluation settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub float_width: FloatWidth,
    pub d_embed: usize,
    pub d_hidden: usize,
    pub degree_cap: usize,
    pub node_cap: usize,
    pub action_budget: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub eval_every: u64,
    pub patience: usize,
    pub seed: u64,
    pub lr_embeddings: f64,
    pub lr_other: f64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    pub baseline: bool,
    pub baseline_momentum: f64,
    pub threads: usize,
    pub filtered: bool,
    pub add_support_edge: bool,
    pub pretrain_epochs: usize,
    pub pretrain_negatives: usize,
    pub pretrain_lr: f64,
}

impl Default for Settings {
    fn default() -> Self {
        let train = TrainConfig::default();
        let pre = DistMultConfig::default();
        Settings {
            float_width: FloatWidth::F64,
            d_embed: 100,
            d_hidden: 100,
            degree_cap: train.reason.degree_cap,
            node_cap: train.reason.node_cap,
            action_budget: train.reason.action_budget,
            batch_size: train.batch_size,
            steps: train.steps,
            eval_every: train.eval_every,
            patience: train.patience,
            seed: train.seed,
            lr_embeddings: train.adam.lr_embeddings,
            lr_other: train.adam.lr_other,
            weight_decay: train.adam.weight_decay,
            grad_clip: train.adam.grad_clip,
            baseline: train.baseline,
            baseline_momentum: train.baseline_momentum,
            threads: train.threads,
            filtered: false,
            add_support_edge: false,
            pretrain_epochs: pre.epochs,
            pretrain_negatives: pre.negatives,
            pretrain_lr: pre.lr,
        }
    }
}

impl KvConfig for Settings {
    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "float_width" => {
                self.float_width = match value {
                    "f32" => FloatWidth::F32,
                    "f64" => FloatWidth::F64,
                    _ => return Err(bad(key, value, "f32 or f64")),
                }
            }
            "d_embed" => self.d_embed = parse_usize(key, value)?,
            "d_hidden" => self.d_hidden = parse_usize(key, value)?,
            "degree_cap" => self.degree_cap = parse_usize(key, value)?,
            "node_cap" => self.node_cap = parse_usize(key, value)?,
            "action_budget" => self.action_budget = parse_usize(key, value)?,
            "batch_size" => self.batch_size = parse_usize(key, value)?,
            "steps" => self.steps = parse_u64(key, value)?,
            "eval_every" => self.eval_every = parse_u64(key, value)?,
            "patience" => self.patience = parse_usize(key, value)?,
            "seed" => self.seed = parse_u64(key, value)?,
            "lr_embeddings" => self.lr_embeddings = parse_f64(key, value)?,
            "lr_other" => self.lr_other = parse_f64(key, value)?,
            "weight_decay" => self.weight_decay = parse_f64(key, value)?,
            "grad_clip" => {
                self.grad_clip = match value {
                    "none" => None,
                    _ => Some(parse_f64(key, value)?),
                }
            }
            "baseline" => self.baseline = parse_bool(key, value)?,
            "baseline_momentum" => self.baseline_momentum = parse_f64(key, value)?,
            "threads" => self.threads = parse_usize(key, value)?.max(1),
            "filtered" => self.filtered = parse_bool(key, value)?,
            "add_support_edge" => self.add_support_edge = parse_bool(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_usize(key, value)?,
            "pretrain_negatives" => self.pretrain_negatives = parse_usize(key, value)?,
            "pretrain_lr" => self.pretrain_lr = parse_f64(key, value)?,
            _ => return Err(Error::Config(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            (
                "float_width",
                match self.float_width {
                    FloatWidth::F32 => "f32".into(),
                    FloatWidth::F64 => "f64".into(),
                },
            ),
            ("d_embed", self.d_embed.to_string()),
            ("d_hidden", self.d_hidden.to_string()),
            ("degree_cap", self.degree_cap.to_string()),
            ("node_cap", self.node_cap.to_string()),
            ("action_budget", self.action_budget.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("steps", self.steps.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("lr_embeddings", fmt_f64(self.lr_embeddings)),
            ("lr_other", fmt_f64(self.lr_other)),
            ("weight_decay", fmt_f64(self.weight_decay)),
            (
                "grad_clip",
                self.grad_clip.map(fmt_f64).unwrap_or_else(|| "none".into()),
            ),
            ("baseline", self.baseline.to_string()),
            ("baseline_momentum", fmt_f64(self.baseline_momentum)),
            ("threads", self.threads.to_string()),
            ("filtered", self.filtered.to_string()),
            ("add_support_edge", self.add_support_edge.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("pretrain_negatives", self.pretrain_negatives.to_string()),
            ("pretrain_lr", fmt_f64(self.pretrain_lr)),
        ]
    }
}

impl Settings {
    pub fn reason_config(&self) -> ReasonConfig {
        ReasonConfig {
            degree_cap: self.degree_cap,
            node_cap: self.node_cap,
            action_budget: self.action_budget,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr_embeddings: self.lr_embeddings,
            lr_other: self.lr_other,
            weight_decay: self.weight_decay,
            grad_clip: self.grad_clip,
            ..AdamConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            adam: self.adam_config(),
            reason: self.reason_config(),
            steps: self.steps,
            eval_every: self.eval_every,
            patience: self.patience,
            seed: self.seed,
            baseline: self.baseline,
            baseline_momentum: self.baseline_momentum,
            threads: self.threads,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            reason: self.reason_config(),
            seed: self.seed,
            filtered: self.filtered,
            add_support_edge: self.add_support_edge,
            buckets: true,
        }
    }

    pub fn distmult_config(&self) -> DistMultConfig {
        DistMultConfig {
            dim: self.d_embed,
            epochs: self.pretrain_epochs,
            negatives: self.pretrain_negatives,
            lr: self.pretrain_lr,
        }
    }
}

/// Synthetic dataset settings; mirrors the generator spec.
#[derive(Debug, Clone, Default)]
pub struct SynthSettings(pub SynthSpec);

impl KvConfig for SynthSettings {
    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.0;
        match key {
            "n_entities" => s.n_entities = parse_usize(key, value)?,
            "n_base_relations" => s.n_base_relations = parse_usize(key, value)?,
            "edges_per_entity" => s.edges_per_entity = parse_usize(key, value)?,
            "n_distractor_relations" => s.n_distractor_relations = parse_usize(key, value)?,
            "distractors_per_entity" => s.distractors_per_entity = parse_usize(key, value)?,
            "n_train_relations" => s.n_train_relations = parse_usize(key, value)?,
            "n_valid_relations" => s.n_valid_relations = parse_usize(key, value)?,
            "n_test_relations" => s.n_test_relations = parse_usize(key, value)?,
            "max_triples_per_relation" => s.max_triples_per_relation = parse_usize(key, value)?,
            "noise_fraction" => s.noise_fraction = parse_f64(key, value)?,
            "hops" => s.hops = parse_usize(key, value)?,
            "seed" => s.seed = parse_u64(key, value)?,
            _ => return Err(Error::Config(format!("unknown generator setting {key:?}"))),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        let s = &self.0;
        vec![
            ("n_entities", s.n_entities.to_string()),
            ("n_base_relations", s.n_base_relations.to_string()),
            ("edges_per_entity", s.edges_per_entity.to_string()),
            ("n_distractor_relations", s.n_distractor_relations.to_string()),
            ("distractors_per_entity", s.distractors_per_entity.to_string()),
            ("n_train_relations", s.n_train_relations.to_string()),
            ("n_valid_relations", s.n_valid_relations.to_string()),
            ("n_test_relations", s.n_test_relations.to_string()),
            (
                "max_triples_per_relation",
                s.max_triples_per_relation.to_string(),
            ),
            ("noise_fraction", fmt_f64(s.noise_fraction)),
            ("hops", s.hops.to_string()),
            ("seed", s.seed.to_string()),
        ]
    }
}
