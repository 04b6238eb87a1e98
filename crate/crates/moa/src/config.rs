//! Run configuration: a line-oriented `key = value` document with dotted
//! section prefixes. Every field is defaulted, unknown keys are rejected
//! with the offending line, and `parse -> render -> parse` is an identity.

use crate::activations::{parse_dictionary, ActivationKind, Flavor};
use crate::error::{Error, Result};
use crate::expressivity::{FitBudget, GridSpec, WitnessSuite};
use crate::ffn::{default_hidden, FFNConfig, FFNVariant, GateKind};
use crate::train::{Schedule, TrainConfig};
use crate::transformer::ModelConfig;

pub const SCHEMA_VERSION: u32 = 1;

pub use crate::activations::default_dictionary_code;

/// The full config document. String-typed `auto` fields resolve against
/// the chosen variant when the config is lowered to module-level configs,
/// which keeps rendering lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    // model section
    pub d_model: usize,
    pub n_head: usize,
    pub n_layer: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub tie_embeddings: bool,
    // ffn section
    pub variant: FFNVariant,
    /// 0 means the flavor default (4d for Type-I, floor(8d/3) for Type-II)
    pub hidden: usize,
    /// activation name, or "auto" for the flavor default
    pub baseline_activation: String,
    /// compact dictionary code, or "auto" for the flavor default
    pub dictionary: String,
    pub gate: GateKind,
    pub gate_bias: bool,
    // train section
    pub max_lr: f64,
    pub schedule: Schedule,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub eval_interval: usize,
    pub seeds: Vec<u64>,
    pub corpus_path: String,
    // grid section (witness experiments)
    pub report_points_per_axis: usize,
    pub fit_points_per_axis: usize,
    pub restarts: usize,
    pub fit_steps: usize,
    pub fit_lr: f64,
    pub lm_iterations: usize,
    pub suite: WitnessSuite,
    // output section
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        let budget = FitBudget::default();
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            d_model: 64,
            n_head: 4,
            n_layer: 2,
            vocab_size: 256,
            seq_len: 128,
            tie_embeddings: true,
            variant: FFNVariant::BaselineII,
            hidden: 0,
            baseline_activation: "auto".into(),
            dictionary: "auto".into(),
            gate: GateKind::Sigmoid,
            gate_bias: false,
            max_lr: 1e-3,
            schedule: Schedule::Cos,
            warmup_steps: 100,
            total_steps: 2000,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.1,
            clip_norm: 1.0,
            eval_interval: 100,
            seeds: vec![0],
            corpus_path: "corpus.bin".into(),
            report_points_per_axis: 401,
            fit_points_per_axis: budget.fit_points_per_axis,
            restarts: budget.restarts,
            fit_steps: budget.steps,
            fit_lr: budget.lr,
            lm_iterations: budget.lm_iterations,
            suite: WitnessSuite::All,
            output_dir: "runs".into(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("key '{key}': cannot parse value '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Parse(format!(
            "key '{key}': expected true or false, got '{other}'"
        ))),
    }
}

impl RunConfig {
    /// Apply one `section.key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        match key {
            "schema_version" => self.schema_version = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "model.d_model" => self.d_model = parse_num(key, value)?,
            "model.n_head" => self.n_head = parse_num(key, value)?,
            "model.n_layer" => self.n_layer = parse_num(key, value)?,
            "model.vocab_size" => self.vocab_size = parse_num(key, value)?,
            "model.seq_len" => self.seq_len = parse_num(key, value)?,
            "model.tie_embeddings" => self.tie_embeddings = parse_bool(key, value)?,
            "ffn.variant" => self.variant = FFNVariant::parse(value)?,
            "ffn.hidden" => self.hidden = parse_num(key, value)?,
            "ffn.baseline_activation" => {
                if value != "auto" {
                    ActivationKind::parse(value)?;
                }
                self.baseline_activation = value.to_string();
            }
            "ffn.dictionary" => self.dictionary = value.to_string(),
            "ffn.gate" => self.gate = GateKind::parse(value)?,
            "ffn.gate_bias" => self.gate_bias = parse_bool(key, value)?,
            "train.max_lr" => self.max_lr = parse_num(key, value)?,
            "train.schedule" => self.schedule = Schedule::parse(value)?,
            "train.warmup_steps" => self.warmup_steps = parse_num(key, value)?,
            "train.total_steps" => self.total_steps = parse_num(key, value)?,
            "train.batch_size" => self.batch_size = parse_num(key, value)?,
            "train.beta1" => self.beta1 = parse_num(key, value)?,
            "train.beta2" => self.beta2 = parse_num(key, value)?,
            "train.weight_decay" => self.weight_decay = parse_num(key, value)?,
            "train.clip_norm" => self.clip_norm = parse_num(key, value)?,
            "train.eval_interval" => self.eval_interval = parse_num(key, value)?,
            "train.seeds" => {
                let mut seeds = Vec::new();
                for part in value.split(',') {
                    seeds.push(parse_num(key, part.trim())?);
                }
                if seeds.is_empty() {
                    return Err(Error::Parse("key 'train.seeds': empty list".into()));
                }
                self.seeds = seeds;
            }
            "train.corpus_path" => self.corpus_path = value.to_string(),
            "grid.report_points_per_axis" => {
                self.report_points_per_axis = parse_num(key, value)?
            }
            "grid.fit_points_per_axis" => self.fit_points_per_axis = parse_num(key, value)?,
            "grid.restarts" => self.restarts = parse_num(key, value)?,
            "grid.fit_steps" => self.fit_steps = parse_num(key, value)?,
            "grid.fit_lr" => self.fit_lr = parse_num(key, value)?,
            "grid.lm_iterations" => self.lm_iterations = parse_num(key, value)?,
            "grid.suite" => self.suite = WitnessSuite::parse(value)?,
            "output.dir" => self.output_dir = value.to_string(),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parse a full document. Blank lines and `#` comments are skipped;
    /// the schema version line is mandatory; duplicate keys are rejected.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        let mut saw_schema = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {lineno}: expected 'key = value', got '{line}'"))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse(format!(
                    "line {lineno}: duplicate key '{key}'"
                )));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Parse(format!("line {lineno}: {e}")))?;
            if key == "schema_version" {
                saw_schema = true;
            }
        }
        if !saw_schema {
            return Err(Error::Parse(
                "missing mandatory key 'schema_version'".into(),
            ));
        }
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Canonical rendering; includes every key so the echo is complete.
    pub fn render(&self) -> String {
        let seeds = self
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "schema_version = {}\n\
             seed = {}\n\
             model.d_model = {}\n\
             model.n_head = {}\n\
             model.n_layer = {}\n\
             model.vocab_size = {}\n\
             model.seq_len = {}\n\
             model.tie_embeddings = {}\n\
             ffn.variant = {}\n\
             ffn.hidden = {}\n\
             ffn.baseline_activation = {}\n\
             ffn.dictionary = {}\n\
             ffn.gate = {}\n\
             ffn.gate_bias = {}\n\
             train.max_lr = {}\n\
             train.schedule = {}\n\
             train.warmup_steps = {}\n\
             train.total_steps = {}\n\
             train.batch_size = {}\n\
             train.beta1 = {}\n\
             train.beta2 = {}\n\
             train.weight_decay = {}\n\
             train.clip_norm = {}\n\
             train.eval_interval = {}\n\
             train.seeds = {}\n\
             train.corpus_path = {}\n\
             grid.report_points_per_axis = {}\n\
             grid.fit_points_per_axis = {}\n\
             grid.restarts = {}\n\
             grid.fit_steps = {}\n\
             grid.fit_lr = {}\n\
             grid.lm_iterations = {}\n\
             grid.suite = {}\n\
             output.dir = {}\n",
            self.schema_version,
            self.seed,
            self.d_model,
            self.n_head,
            self.n_layer,
            self.vocab_size,
            self.seq_len,
            self.tie_embeddings,
            self.variant.name(),
            self.hidden,
            self.baseline_activation,
            self.dictionary,
            self.gate.name(),
            self.gate_bias,
            self.max_lr,
            self.schedule.name(),
            self.warmup_steps,
            self.total_steps,
            self.batch_size,
            self.beta1,
            self.beta2,
            self.weight_decay,
            self.clip_norm,
            self.eval_interval,
            seeds,
            self.corpus_path,
            self.report_points_per_axis,
            self.fit_points_per_axis,
            self.restarts,
            self.fit_steps,
            self.fit_lr,
            self.lm_iterations,
            match self.suite {
                WitnessSuite::Theorem1 => "theorem1",
                WitnessSuite::Theorem2 => "theorem2",
                WitnessSuite::All => "all",
            },
            self.output_dir,
        )
    }

    pub fn ffn_config(&self) -> Result<FFNConfig> {
        let flavor = self.variant.flavor();
        let dict_code = if self.dictionary == "auto" {
            default_dictionary_code(flavor)
        } else {
            &self.dictionary
        };
        let baseline = if self.baseline_activation == "auto" {
            match flavor {
                Flavor::TypeI => ActivationKind::ReLUSq,
                Flavor::TypeII => ActivationKind::Silu,
            }
        } else {
            ActivationKind::parse(&self.baseline_activation)?
        };
        let cfg = FFNConfig {
            d_model: self.d_model,
            hidden: if self.hidden == 0 {
                default_hidden(flavor, self.d_model)
            } else {
                self.hidden
            },
            variant: self.variant,
            baseline_activation: baseline,
            dictionary: parse_dictionary(dict_code, flavor)?,
            gate: self.gate,
            gate_bias: self.gate_bias,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            d_model: self.d_model,
            n_head: self.n_head,
            n_layer: self.n_layer,
            vocab_size: self.vocab_size,
            seq_len: self.seq_len,
            ffn: self.ffn_config()?,
            tie_embeddings: self.tie_embeddings,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            max_lr: self.max_lr,
            schedule: self.schedule,
            warmup_steps: self.warmup_steps,
            total_steps: self.total_steps,
            batch_size: self.batch_size,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            eval_interval: self.eval_interval,
            seeds: self.seeds.clone(),
            corpus_path: self.corpus_path.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn fit_budget(&self) -> FitBudget {
        FitBudget {
            restarts: self.restarts,
            steps: self.fit_steps,
            lr: self.fit_lr,
            lm_iterations: self.lm_iterations,
            fit_points_per_axis: self.fit_points_per_axis,
            seed: self.seed,
        }
    }

    pub fn report_grid(&self, dim: usize) -> Result<GridSpec> {
        GridSpec::new(dim, self.report_points_per_axis)
    }
}
