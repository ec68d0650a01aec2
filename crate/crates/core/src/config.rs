//! Line-oriented `key = value` configuration with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::Components;
use crate::inference::{RecommendConfig, SearchMode};
use crate::kg_embed::PretrainConfig;
use crate::rewards::RewardConfig;
use crate::session_encoder::EncoderKind;
use crate::trainer::TrainConfig;

pub const WORKDIR_ENV: &str = "PATHREC_WORKDIR";

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub interactions: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub image_labels: Option<PathBuf>,
    pub workdir: PathBuf,

    pub d: usize,
    pub d_se: usize,
    pub d_proj: usize,
    pub encoder: EncoderKind,

    pub lr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub batch: usize,
    pub t: usize,
    pub seed: u64,
    pub min_item_count: usize,

    pub widths: Vec<usize>,
    pub k: usize,
    pub sample_paths: bool,

    pub a_max: usize,
    pub dropout: f64,

    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub margin: f64,

    pub image_min_conf: f64,
    pub image_top_k: usize,

    pub components: Components,
    pub ablation_seeds: Vec<u64>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            interactions: None,
            metadata: None,
            image_labels: None,
            workdir: PathBuf::from("work"),
            d: 100,
            d_se: 100,
            d_proj: 100,
            encoder: EncoderKind::Recurrent,
            lr: 1e-4,
            alpha: 0.01,
            beta: 0.005,
            gamma: 0.99,
            epochs: 150,
            batch: 256,
            t: 5,
            seed: 0,
            min_item_count: 5,
            widths: vec![100, 1],
            k: 20,
            sample_paths: false,
            a_max: 200,
            dropout: 0.7,
            pretrain_epochs: 100,
            pretrain_lr: 0.01,
            margin: 1.0,
            image_min_conf: 0.5,
            image_top_k: 5,
            components: Components::default(),
            ablation_seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

pub const KEYS: &[&str] = &[
    "paths.interactions",
    "paths.metadata",
    "paths.image_labels",
    "paths.workdir",
    "model.d",
    "model.d_se",
    "model.d_proj",
    "model.encoder",
    "training.lr",
    "training.alpha",
    "training.beta",
    "training.gamma",
    "training.epochs",
    "training.batch",
    "training.T",
    "training.seed",
    "training.min_item_count",
    "inference.widths",
    "inference.K",
    "inference.sample",
    "action.a_max",
    "action.dropout",
    "pretrain.epochs",
    "pretrain.lr",
    "pretrain.margin",
    "kg.image_min_conf",
    "kg.image_top_k",
    "components.image_features",
    "components.merge_edges",
    "components.session_agent",
    "components.midpoint_reward",
    "components.multi_target",
    "ablation.seeds",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true/false, got {v:?}"
        ))),
    }
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl Config {
    /// Defaults, with the workdir taken from `PATHREC_WORKDIR` when set.
    pub fn from_env() -> Self {
        let mut c = Config::default();
        if let Some(w) = std::env::var_os(WORKDIR_ENV) {
            c.workdir = PathBuf::from(w);
        }
        c
    }

    /// Parses `text`; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c = Config::from_env();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key = value, got {raw:?}",
                    i + 1
                )));
            };
            c.set_with_base(k.trim(), v.trim(), base)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Applies a `key=value` override; relative paths stay as given.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(Error::Config(format!("override {kv:?} is not key=value")));
        };
        self.set_with_base(k.trim(), v.trim(), Path::new(""))?;
        self.validate()
    }

    fn set_with_base(&mut self, key: &str, v: &str, base: &Path) -> Result<()> {
        let path = |v: &str| -> Option<PathBuf> {
            if v.is_empty() {
                None
            } else {
                Some(base.join(v))
            }
        };
        match key {
            "paths.interactions" => self.interactions = path(v),
            "paths.metadata" => self.metadata = path(v),
            "paths.image_labels" => self.image_labels = path(v),
            "paths.workdir" => self.workdir = base.join(v),
            "model.d" => self.d = num(key, v)?,
            "model.d_se" => self.d_se = num(key, v)?,
            "model.d_proj" => self.d_proj = num(key, v)?,
            "model.encoder" => {
                self.encoder = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?
            }
            "training.lr" => self.lr = num(key, v)?,
            "training.alpha" => self.alpha = num(key, v)?,
            "training.beta" => self.beta = num(key, v)?,
            "training.gamma" => self.gamma = num(key, v)?,
            "training.epochs" => self.epochs = num(key, v)?,
            "training.batch" => self.batch = num(key, v)?,
            "training.T" => self.t = num(key, v)?,
            "training.seed" => self.seed = num(key, v)?,
            "training.min_item_count" => self.min_item_count = num(key, v)?,
            "inference.widths" => self.widths = list(key, v)?,
            "inference.K" => self.k = num(key, v)?,
            "inference.sample" => self.sample_paths = flag(key, v)?,
            "action.a_max" => self.a_max = num(key, v)?,
            "action.dropout" => self.dropout = num(key, v)?,
            "pretrain.epochs" => self.pretrain_epochs = num(key, v)?,
            "pretrain.lr" => self.pretrain_lr = num(key, v)?,
            "pretrain.margin" => self.margin = num(key, v)?,
            "kg.image_min_conf" => self.image_min_conf = num(key, v)?,
            "kg.image_top_k" => self.image_top_k = num(key, v)?,
            "components.image_features" => self.components.image_features = flag(key, v)?,
            "components.merge_edges" => self.components.merge_edges = flag(key, v)?,
            "components.session_agent" => self.components.session_agent = flag(key, v)?,
            "components.midpoint_reward" => self.components.midpoint_reward = flag(key, v)?,
            "components.multi_target" => self.components.multi_target = flag(key, v)?,
            "ablation.seeds" => self.ablation_seeds = list(key, v)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key {key:?}; valid keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("training.gamma {} not in (0, 1]", self.gamma));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("action.dropout {} not in [0, 1)", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.image_min_conf) {
            return bad(format!(
                "kg.image_min_conf {} not in [0, 1]",
                self.image_min_conf
            ));
        }
        for (name, v) in [
            ("model.d", self.d),
            ("model.d_se", self.d_se),
            ("model.d_proj", self.d_proj),
            ("training.batch", self.batch),
            ("training.T", self.t),
            ("training.min_item_count", self.min_item_count),
            ("inference.K", self.k),
            ("action.a_max", self.a_max),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.widths.len() != 2 || self.widths.contains(&0) {
            return bad(format!(
                "inference.widths must be two positive integers, got {:?}",
                self.widths
            ));
        }
        for (name, v) in [
            ("training.lr", self.lr),
            ("pretrain.lr", self.pretrain_lr),
            ("pretrain.margin", self.margin),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return bad("training.alpha and training.beta must be >= 0".into());
        }
        Ok(())
    }

    /// Canonical rendering of every key; the manifest hash is taken over this.
    pub fn render(&self) -> String {
        let p = |x: &Option<PathBuf>| {
            x.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let c = &self.components;
        let mut s = String::new();
        for (k, v) in [
            ("paths.interactions", p(&self.interactions)),
            ("paths.metadata", p(&self.metadata)),
            ("paths.image_labels", p(&self.image_labels)),
            ("paths.workdir", self.workdir.display().to_string()),
            ("model.d", self.d.to_string()),
            ("model.d_se", self.d_se.to_string()),
            ("model.d_proj", self.d_proj.to_string()),
            ("model.encoder", self.encoder.name().to_string()),
            ("training.lr", self.lr.to_string()),
            ("training.alpha", self.alpha.to_string()),
            ("training.beta", self.beta.to_string()),
            ("training.gamma", self.gamma.to_string()),
            ("training.epochs", self.epochs.to_string()),
            ("training.batch", self.batch.to_string()),
            ("training.T", self.t.to_string()),
            ("training.seed", self.seed.to_string()),
            ("training.min_item_count", self.min_item_count.to_string()),
            ("inference.widths", join(&self.widths)),
            ("inference.K", self.k.to_string()),
            ("inference.sample", self.sample_paths.to_string()),
            ("action.a_max", self.a_max.to_string()),
            ("action.dropout", self.dropout.to_string()),
            ("pretrain.epochs", self.pretrain_epochs.to_string()),
            ("pretrain.lr", self.pretrain_lr.to_string()),
            ("pretrain.margin", self.margin.to_string()),
            ("kg.image_min_conf", self.image_min_conf.to_string()),
            ("kg.image_top_k", self.image_top_k.to_string()),
            ("components.image_features", c.image_features.to_string()),
            ("components.merge_edges", c.merge_edges.to_string()),
            ("components.session_agent", c.session_agent.to_string()),
            ("components.midpoint_reward", c.midpoint_reward.to_string()),
            ("components.multi_target", c.multi_target.to_string()),
            ("ablation.seeds", join(&self.ablation_seeds)),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }

    /// Effective `T`: disabling the multi-target reward leaves one target.
    pub fn effective_t(&self) -> usize {
        if self.components.multi_target {
            self.t
        } else {
            1
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            dim: self.d,
            epochs: self.pretrain_epochs,
            lr: self.pretrain_lr,
            margin: self.margin,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            epochs: self.epochs,
            batch_size: self.batch,
            seed: self.seed,
            a_max: self.a_max,
            action_dropout: self.dropout,
            reward: RewardConfig {
                t: self.effective_t(),
                ..RewardConfig::default()
            },
            session_agent: self.components.session_agent,
            midpoint_reward: self.components.midpoint_reward,
        }
    }

    pub fn recommend_config(&self) -> RecommendConfig {
        RecommendConfig {
            k: self.k,
            widths: self.widths.clone(),
            a_max: self.a_max,
            session_agent: self.components.session_agent,
            mode: if self.sample_paths {
                SearchMode::Sample { seed: self.seed }
            } else {
                SearchMode::Beam
            },
        }
    }
}
