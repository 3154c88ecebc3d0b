//! INI run configuration. Every key is optional; unknown sections and keys
//! are rejected so typos do not pass silently.
//!
//! ```ini
//! [train]
//! batch_size = 32
//! learning_rate = 0.001
//! seeds = 0, 1, 2
//!
//! [model]
//! hidden = 16
//! modalities = events, notes, vitals
//!
//! [explain]
//! explainers = all
//! fractions = 0, 0.1, 0.2
//! ```

use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use serde::{Deserialize, Serialize};
use xmmp::attribution::{ExplainOptions, ExplainerKind, MIN_TOKEN_COUNT};
use xmmp::data::Dataset;
use xmmp::model::{EncoderConfig, Modalities, Modality, ModelConfig};
use xmmp::perturb::DEFAULT_FRACTIONS;
use xmmp::train::TrainConfig;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub hidden: usize,
    pub fusion_hidden: usize,
    pub ffn: usize,
    pub positional: bool,
    pub intercept_free: bool,
    pub modalities: Modalities,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSettings {
    pub folds: usize,
    pub fold: usize,
    pub val_fraction: f64,
    pub split_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainSettings {
    pub explainers: Vec<ExplainerKind>,
    pub ig_steps: usize,
    pub lrp_epsilon: f64,
    pub fractions: Vec<f64>,
    pub target: usize,
    pub min_token_count: usize,
    pub top_k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// The first seed trains the saved model; all of them are used for
    /// cross-validation.
    pub seeds: Vec<u64>,
    pub model: ModelSettings,
    pub split: SplitSettings,
    pub explain: ExplainSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig { batch_size: 32, ..TrainConfig::default() },
            seeds: vec![0],
            model: ModelSettings {
                hidden: 16,
                fusion_hidden: 16,
                ffn: 32,
                positional: true,
                intercept_free: false,
                modalities: Modalities::ALL,
            },
            split: SplitSettings { folds: 5, fold: 0, val_fraction: 0.2, split_seed: 0 },
            explain: ExplainSettings {
                explainers: ExplainerKind::ALL.to_vec(),
                ig_steps: 20,
                lrp_epsilon: 1e-6,
                fractions: DEFAULT_FRACTIONS.to_vec(),
                target: 1,
                min_token_count: MIN_TOKEN_COUNT,
                top_k: 10,
            },
        }
    }
}

pub fn parse_list<T: FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::Usage(format!("bad {what} `{s}`"))))
        .collect()
}

pub fn parse_explainers(raw: &str) -> Result<Vec<ExplainerKind>> {
    if raw.trim() == "all" {
        return Ok(ExplainerKind::ALL.to_vec());
    }
    parse_list(raw, "explainer")
}

pub fn parse_modalities(raw: &str) -> Result<Modalities> {
    if raw.trim() == "all" {
        return Ok(Modalities::ALL);
    }
    let mut list = Vec::new();
    for name in raw.split(',').map(str::trim) {
        let m = Modality::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| CliError::Usage(format!("unknown modality `{name}`")))?;
        list.push(m);
    }
    Ok(Modalities::only(&list))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(CliError::Missing(path.to_path_buf()));
        }
        let ini = Ini::load_from_file(path)
            .map_err(|e| CliError::Config { path: path.to_path_buf(), reason: e.to_string() })?;
        let mut cfg = Self::default();
        cfg.apply(&ini).map_err(|reason| CliError::Config { path: path.to_path_buf(), reason })?;
        Ok(cfg)
    }

    fn apply(&mut self, ini: &Ini) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.trim().parse().map_err(|_| format!("`{key}` has bad value `{v}`"))
        }
        let list_err = |e: CliError| e.to_string();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (key, v) in props.iter() {
                let t = &mut self.train;
                let m = &mut self.model;
                let s = &mut self.split;
                let x = &mut self.explain;
                match (section, key) {
                    ("train", "batch_size") => t.batch_size = num(key, v)?,
                    ("train", "learning_rate") => t.learning_rate = num(key, v)?,
                    ("train", "dropout") => t.dropout = num(key, v)?,
                    ("train", "layers") => t.layers = num(key, v)?,
                    ("train", "heads") => t.heads = num(key, v)?,
                    ("train", "pos_weight") => t.pos_weight = num(key, v)?,
                    ("train", "epochs") => t.epochs = num(key, v)?,
                    ("train", "patience") => {
                        t.patience = if v.trim() == "none" { None } else { Some(num(key, v)?) }
                    }
                    ("train", "upsample") => t.upsample = num(key, v)?,
                    ("train", "clip_norm") => t.clip_norm = num(key, v)?,
                    ("train", "seeds") => self.seeds = parse_list(v, "seed").map_err(list_err)?,
                    ("model", "hidden") => m.hidden = num(key, v)?,
                    ("model", "fusion_hidden") => m.fusion_hidden = num(key, v)?,
                    ("model", "ffn") => m.ffn = num(key, v)?,
                    ("model", "positional") => m.positional = num(key, v)?,
                    ("model", "intercept_free") => m.intercept_free = num(key, v)?,
                    ("model", "modalities") => m.modalities = parse_modalities(v).map_err(list_err)?,
                    ("split", "folds") => s.folds = num(key, v)?,
                    ("split", "fold") => s.fold = num(key, v)?,
                    ("split", "val_fraction") => s.val_fraction = num(key, v)?,
                    ("split", "split_seed") => s.split_seed = num(key, v)?,
                    ("explain", "explainers") => x.explainers = parse_explainers(v).map_err(list_err)?,
                    ("explain", "ig_steps") => x.ig_steps = num(key, v)?,
                    ("explain", "lrp_epsilon") => x.lrp_epsilon = num(key, v)?,
                    ("explain", "fractions") => x.fractions = parse_list(v, "fraction").map_err(list_err)?,
                    ("explain", "target") => x.target = num(key, v)?,
                    ("explain", "min_token_count") => x.min_token_count = num(key, v)?,
                    ("explain", "top_k") => x.top_k = num(key, v)?,
                    _ => return Err(format!("unknown key `{key}` in section [{section}]")),
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CliError::Usage("at least one seed is required".into()));
        }
        if self.split.folds < 2 || self.split.fold >= self.split.folds {
            return Err(CliError::Usage(format!("fold {} of {} folds", self.split.fold, self.split.folds)));
        }
        if self.explain.explainers.is_empty() {
            return Err(CliError::Usage("no explainers selected".into()));
        }
        self.train.validate()?;
        Ok(())
    }

    /// Model architecture for `ds`, before the training configuration's
    /// depth, heads and dropout are applied.
    pub fn model_config(&self, ds: &Dataset) -> ModelConfig {
        let m = &self.model;
        let enc = EncoderConfig { layers: self.train.layers, heads: self.train.heads, ffn: m.ffn };
        let cfg = ModelConfig {
            hidden: m.hidden,
            fusion_hidden: m.fusion_hidden,
            events: enc,
            notes: enc,
            vitals: enc,
            positional: m.positional,
            modalities: m.modalities,
            ..ModelConfig::default()
        }
        .sized_for(ds);
        if m.intercept_free {
            cfg.intercept_free()
        } else {
            cfg
        }
    }

    pub fn explain_options(&self) -> ExplainOptions {
        ExplainOptions { ig_steps: self.explain.ig_steps, lrp_epsilon: self.explain.lrp_epsilon }
    }
}
