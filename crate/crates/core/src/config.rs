//! Flat `key = value` run configuration with `#` comments and dotted keys.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::{TrainConfig, UpdateMode};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "MAN_SEED";

/// Key/value lines in file order, with their line numbers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    pub entries: Vec<(String, String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if entries.iter().any(|(e, _, _): &(String, String, usize)| e == k) {
                return Err(Error::Config(format!("line {}: duplicate key {k}", i + 1)));
            }
            entries.push((k.to_string(), v.to_string(), i + 1));
        }
        Ok(Self { entries })
    }
}

fn value<T: FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value {v:?} for {key}")))
}

fn flag(key: &str, v: &str, line: usize) -> Result<bool> {
    match v {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("line {line}: invalid switch {v:?} for {key}"))),
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Everything a training run needs besides the output directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Cluster count for analysis; defaults to the number of groups.
    pub analysis_k: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (k, v, line) in KeyValues::parse(text)?.entries {
            c.set(&k, &v, line)?;
        }
        c.model.validate()?;
        c.train.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn set(&mut self, key: &str, v: &str, line: usize) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "seed" => t.seed = value(key, v, line)?,
            "data.dir" => self.data_dir = Some(PathBuf::from(v)),
            "mode" => m.mode = value(key, v, line)?,
            "backbone" => m.encoder.backbone = value(key, v, line)?,
            "encoder.layers" => m.encoder.layers = value(key, v, line)?,
            "encoder.heads" => m.encoder.heads = value(key, v, line)?,
            "model.item_dim" => m.item_dim = value(key, v, line)?,
            "model.domain_dim" => m.domain_dim = value(key, v, line)?,
            "model.max_len" => m.max_len = value(key, v, line)?,
            "model.n_groups" => m.n_groups = value(key, v, line)?,
            "model.isa" => m.ablation.isa = flag(key, v, line)?,
            "model.sfa" => m.ablation.sfa = flag(key, v, line)?,
            "model.gpa" => m.ablation.gpa = flag(key, v, line)?,
            "model.isa_hidden" => m.isa_hidden = value(key, v, line)?,
            "model.mlp_hidden" => m.mlp_hidden = value(key, v, line)?,
            "model.head_hidden" => m.head_hidden = value(key, v, line)?,
            "model.pooling" => m.pooling = value(key, v, line)?,
            "train.lr" => t.adam.lr = value(key, v, line)?,
            "train.beta1" => t.adam.beta1 = value(key, v, line)?,
            "train.beta2" => t.adam.beta2 = value(key, v, line)?,
            "train.eps" => t.adam.eps = value(key, v, line)?,
            "train.lambda_a" => t.lambda_a = value(key, v, line)?,
            "train.lambda_b" => t.lambda_b = value(key, v, line)?,
            "train.lambda_g" => t.lambda_g = value(key, v, line)?,
            "train.batch_size" => t.batch_size = value(key, v, line)?,
            "train.max_epochs" => t.max_epochs = value(key, v, line)?,
            "train.patience" => t.patience = value(key, v, line)?,
            "train.neg_ratio" => t.neg_ratio = value(key, v, line)?,
            "train.update_mode" => t.update_mode = value::<UpdateMode>(key, v, line)?,
            "train.early_stop_metric" => t.early_stop_metric = v.to_string(),
            "eval.negatives" => t.eval_negatives = value(key, v, line)?,
            "analysis.k" => self.analysis_k = Some(value(key, v, line)?),
            _ => return Err(Error::Config(format!("line {line}: unknown key {key}"))),
        }
        Ok(())
    }

    /// Every key in a fixed order; parsing the result reproduces `self`.
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let mut lines = vec![format!("seed = {}", t.seed)];
        if let Some(d) = &self.data_dir {
            lines.push(format!("data.dir = {}", d.display()));
        }
        lines.extend([
            format!("mode = {}", m.mode.name()),
            format!("backbone = {}", m.encoder.backbone.name()),
            format!("encoder.layers = {}", m.encoder.layers),
            format!("encoder.heads = {}", m.encoder.heads),
            format!("model.item_dim = {}", m.item_dim),
            format!("model.domain_dim = {}", m.domain_dim),
            format!("model.max_len = {}", m.max_len),
            format!("model.n_groups = {}", m.n_groups),
            format!("model.isa = {}", on_off(m.ablation.isa)),
            format!("model.sfa = {}", on_off(m.ablation.sfa)),
            format!("model.gpa = {}", on_off(m.ablation.gpa)),
            format!("model.isa_hidden = {}", m.isa_hidden),
            format!("model.mlp_hidden = {}", m.mlp_hidden),
            format!("model.head_hidden = {}", m.head_hidden),
            format!("model.pooling = {}", m.pooling.name()),
            format!("train.lr = {:?}", t.adam.lr),
            format!("train.beta1 = {:?}", t.adam.beta1),
            format!("train.beta2 = {:?}", t.adam.beta2),
            format!("train.eps = {:?}", t.adam.eps),
            format!("train.lambda_a = {:?}", t.lambda_a),
            format!("train.lambda_b = {:?}", t.lambda_b),
            format!("train.lambda_g = {:?}", t.lambda_g),
            format!("train.batch_size = {}", t.batch_size),
            format!("train.max_epochs = {}", t.max_epochs),
            format!("train.patience = {}", t.patience),
            format!("train.neg_ratio = {}", t.neg_ratio),
            format!("train.update_mode = {}", t.update_mode.name()),
            format!("train.early_stop_metric = {}", t.early_stop_metric),
            format!("eval.negatives = {}", t.eval_negatives),
        ]);
        if let Some(k) = self.analysis_k {
            lines.push(format!("analysis.k = {k}"));
        }
        lines.join("\n") + "\n"
    }

    /// Replaces the seed with `MAN_SEED` when that variable is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }
}

/// Generator settings plus the sequence length of the prepared split.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSettings {
    pub synth: SynthConfig,
    pub max_len: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            max_len: ModelConfig::default().max_len,
        }
    }
}

/// Reads a synthetic-data config: keys `seed`, `synth.*` and `max_len`.
pub fn parse_synth_config(text: &str) -> Result<SynthSettings> {
    let mut c = SynthConfig::default();
    let mut max_len = ModelConfig::default().max_len;
    for (k, v, line) in KeyValues::parse(text)?.entries {
        let key = k.as_str();
        match key {
            "seed" | "synth.seed" => c.seed = value(key, &v, line)?,
            "synth.users_per_domain" => c.users_per_domain = value(key, &v, line)?,
            "synth.items_per_domain" => c.items_per_domain = value(key, &v, line)?,
            "synth.n_groups" => c.n_groups = value(key, &v, line)?,
            "synth.overlap_user_fraction" => c.overlap_user_fraction = value(key, &v, line)?,
            "synth.overlap_item_fraction" => c.overlap_item_fraction = value(key, &v, line)?,
            "synth.seq_len_mean" => c.seq_len_mean = value(key, &v, line)?,
            "synth.seq_len_mean_b" => c.seq_len_mean_b = Some(value(key, &v, line)?),
            "synth.noise" => c.noise = value(key, &v, line)?,
            "max_len" | "synth.max_len" => max_len = value(key, &v, line)?,
            _ => return Err(Error::Config(format!("line {line}: unknown key {key}"))),
        }
    }
    c.validate()?;
    if max_len == 0 {
        return Err(Error::Config("max_len must be positive".into()));
    }
    Ok(SynthSettings { synth: c, max_len })
}
