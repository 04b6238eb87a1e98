//! Desk-scale pre-training harness: AdamW with global-norm clipping, the
//! cosine and warmup-stable-decay schedules, a byte-level data pipeline,
//! and a multi-seed ablation runner.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tape;
use crate::transformer::{ModelConfig, TransformerModel};

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Linear warmup, then cosine decay to max_lr/20.
    Cos,
    /// Linear warmup, constant plateau to 80% of steps, linear decay to 0.
    Wsd,
}

impl Schedule {
    pub fn name(&self) -> &'static str {
        match self {
            Schedule::Cos => "cos",
            Schedule::Wsd => "wsd",
        }
    }

    pub fn parse(s: &str) -> Result<Schedule> {
        match s.to_ascii_lowercase().as_str() {
            "cos" | "cosine" => Ok(Schedule::Cos),
            "wsd" => Ok(Schedule::Wsd),
            other => Err(Error::Parse(format!("unknown schedule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
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
}

impl TrainConfig {
    pub fn defaults(total_steps: usize, corpus_path: &str) -> TrainConfig {
        TrainConfig {
            max_lr: 1e-3,
            schedule: Schedule::Cos,
            warmup_steps: (total_steps / 20).max(1),
            total_steps,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.1,
            clip_norm: 1.0,
            eval_interval: (total_steps / 20).max(1),
            seeds: vec![0],
            corpus_path: corpus_path.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} must be < total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.max_lr <= 0.0 || self.batch_size == 0 || self.eval_interval == 0 {
            return Err(Error::Config(
                "max_lr, batch_size, eval_interval must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate at an integer step, 0 ≤ step ≤ total_steps.
pub fn lr_at(config: &TrainConfig, step: usize) -> Result<f64> {
    if step > config.total_steps {
        return Err(Error::Contract(format!(
            "lr_at: step {} > total_steps {}",
            step, config.total_steps
        )));
    }
    let max = config.max_lr;
    if step <= config.warmup_steps {
        return Ok(max * step as f64 / config.warmup_steps as f64);
    }
    match config.schedule {
        Schedule::Cos => {
            let min = max / 20.0;
            let span = (config.total_steps - config.warmup_steps) as f64;
            let progress = (step - config.warmup_steps) as f64 / span;
            Ok(min + (max - min) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
        }
        Schedule::Wsd => {
            let plateau_end = config.total_steps * 4 / 5;
            if step <= plateau_end {
                Ok(max)
            } else {
                let span = (config.total_steps - plateau_end) as f64;
                Ok(max * (config.total_steps - step) as f64 / span)
            }
        }
    }
}

/// First and second moments for one parameter group.
#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// AdamW with decoupled weight decay and global-L2 gradient clipping.
/// Mixing coefficients (alpha/beta), norm scales, and gate biases are
/// exempt from decay; gate matrices decay like any other linear map.
#[derive(Debug, Clone, Default)]
pub struct AdamW {
    step: usize,
    states: BTreeMap<String, Moments>,
}

fn decays(name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    !matches!(
        leaf,
        "alpha" | "beta" | "attn_norm" | "ffn_norm" | "final_norm" | "u_bias" | "v_bias"
    )
}

impl AdamW {
    pub fn new() -> AdamW {
        AdamW::default()
    }

    /// One update over named (param, grad) groups. Clips the global
    /// gradient norm first, then applies bias-corrected moments and
    /// decoupled decay. Deterministic.
    pub fn step(
        &mut self,
        groups: &mut [(String, Vec<f64>, Vec<f64>)],
        lr: f64,
        config: &TrainConfig,
    ) -> Result<()> {
        for (name, param, grad) in groups.iter() {
            if param.len() != grad.len() {
                return Err(Error::Dim(format!(
                    "adamw: param '{name}' has {} entries but grad has {}",
                    param.len(),
                    grad.len()
                )));
            }
            if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "adamw: non-finite gradient {g} in parameter '{name}'"
                )));
            }
        }
        let sq_norm: f64 = groups
            .iter()
            .flat_map(|(_, _, g)| g.iter())
            .map(|g| g * g)
            .sum();
        let norm = sq_norm.sqrt();
        let clip_scale = if config.clip_norm > 0.0 && norm > config.clip_norm {
            config.clip_norm / norm
        } else {
            1.0
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - config.beta1.powi(t);
        let bc2 = 1.0 - config.beta2.powi(t);
        for (name, param, grad) in groups.iter_mut() {
            let state = self.states.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; param.len()],
                v: vec![0.0; param.len()],
            });
            let wd = if decays(name) { config.weight_decay } else { 0.0 };
            for i in 0..param.len() {
                let g = grad[i] * clip_scale;
                state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
                state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                param[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                param[i] -= lr * wd * param[i];
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricRecord {
    pub step: usize,
    pub kind: String,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub records: Vec<MetricRecord>,
    pub terminal_val_loss: f64,
    pub wall_seconds: f64,
    pub param_count: usize,
}

impl RunMetrics {
    pub fn initial_train_loss(&self) -> Option<f64> {
        self.records.iter().find(|r| r.kind == "train").map(|r| r.loss)
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.records
            .iter()
            .rev()
            .find(|r| r.kind == "train")
            .map(|r| r.loss)
    }
}

/// Byte corpus split into train and held-out (final 5%) regions.
pub struct Corpus {
    pub bytes: Vec<u8>,
    pub train_len: usize,
}

impl Corpus {
    pub fn load(path: &str) -> Result<Corpus> {
        let bytes = std::fs::read(Path::new(path)).map_err(|e| {
            Error::Config(format!("corpus_path '{path}' unreadable: {e}"))
        })?;
        Corpus::from_bytes(bytes)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Corpus> {
        if bytes.is_empty() {
            return Err(Error::Data("corpus is empty".into()));
        }
        let train_len = bytes.len() - bytes.len() / 20;
        Ok(Corpus { bytes, train_len })
    }

    pub fn sample_batch(&self, rng: &mut ChaCha8Rng, batch: usize, seq: usize) -> Result<Vec<Vec<usize>>> {
        if self.train_len < seq + 1 {
            return Err(Error::Data(format!(
                "train split ({} bytes) shorter than sequence length {seq}",
                self.train_len
            )));
        }
        Ok((0..batch)
            .map(|_| {
                let start = rng.gen_range(0..=self.train_len - seq);
                self.bytes[start..start + seq].iter().map(|&b| b as usize).collect()
            })
            .collect())
    }

    /// Deterministic evaluation batches tiled over the held-out region.
    fn eval_batches(&self, batch: usize, seq: usize, max_batches: usize) -> Vec<Vec<Vec<usize>>> {
        let held = &self.bytes[self.train_len..];
        let mut sequences: Vec<Vec<usize>> = held
            .chunks_exact(seq)
            .map(|c| c.iter().map(|&b| b as usize).collect())
            .collect();
        if sequences.is_empty() && held.len() >= 2 {
            sequences.push(held.iter().map(|&b| b as usize).collect());
        }
        sequences
            .chunks(batch)
            .take(max_batches)
            .map(|c| c.to_vec())
            .collect()
    }
}

fn eval_loss(model: &TransformerModel, batches: &[Vec<Vec<usize>>]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for b in batches {
        let tape = Tape::new();
        total += model.forward_loss(&tape, b)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Data("held-out split produced no eval batches".into()));
    }
    Ok(total / count as f64)
}

/// Run one training job. Metrics are appended to `sink` as JSON lines as
/// they are produced; the full stream is also returned. Reproducible:
/// the same (configs, seed) give bit-identical streams.
pub fn run_training(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
    sink: Option<&mut dyn Write>,
) -> Result<RunMetrics> {
    cfg.validate()?;
    let corpus = Corpus::load(&cfg.corpus_path)?;
    run_training_on(model_cfg, cfg, seed, &corpus, sink)
}

pub fn run_training_on(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
    corpus: &Corpus,
    sink: Option<&mut dyn Write>,
) -> Result<RunMetrics> {
    train_model(model_cfg, cfg, seed, corpus, sink).map(|(_, metrics)| metrics)
}

/// Same as [`run_training_on`] but also hands back the trained model, for
/// checkpointing.
pub fn train_model(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
    corpus: &Corpus,
    mut sink: Option<&mut dyn Write>,
) -> Result<(TransformerModel, RunMetrics)> {
    cfg.validate()?;
    let started = Instant::now();
    let mut model = TransformerModel::build(model_cfg.clone(), seed)?;
    let param_count = model.param_count();
    let mut opt = AdamW::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    let seq = model_cfg.seq_len;
    let eval = corpus.eval_batches(cfg.batch_size, seq, 4);
    let mut records = Vec::new();
    let emit = |records: &mut Vec<MetricRecord>,
                    sink: &mut Option<&mut dyn Write>,
                    rec: MetricRecord|
     -> Result<()> {
        if let Some(w) = sink {
            serde_json::to_writer(&mut **w, &rec)
                .map_err(|e| Error::Data(format!("metrics serialization: {e}")))?;
            writeln!(w)?;
        }
        records.push(rec);
        Ok(())
    };

    for step in 0..cfg.total_steps {
        let lr = lr_at(cfg, step + 1)?;
        let batch = corpus.sample_batch(&mut rng, cfg.batch_size, seq)?;
        let tape = Tape::new();
        let (loss, bound) = model.forward_loss_bound(&tape, &batch, &[])?;
        let loss_val = loss.item();
        if !loss_val.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite training loss at step {step}"
            )));
        }
        loss.backward()?;
        let mut groups: Vec<(String, Vec<f64>, Vec<f64>)> = bound
            .iter()
            .map(|(n, t)| {
                let param = std::mem::take(model.param_mut(n));
                (n.clone(), param, t.grad())
            })
            .collect();
        let stepped = opt
            .step(&mut groups, lr, cfg)
            .map_err(|e| Error::Numeric(format!("step {step}: {e}")));
        for (name, param, _) in groups {
            *model.param_mut(&name) = param;
        }
        stepped?;
        emit(
            &mut records,
            &mut sink,
            MetricRecord {
                step,
                kind: "train".into(),
                loss: loss_val,
                lr,
            },
        )?;
        if (step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.total_steps {
            let vl = eval_loss(&model, &eval)?;
            emit(
                &mut records,
                &mut sink,
                MetricRecord {
                    step,
                    kind: "eval".into(),
                    loss: vl,
                    lr,
                },
            )?;
        }
    }
    let terminal_val_loss = records
        .iter()
        .rev()
        .find(|r| r.kind == "eval")
        .map(|r| r.loss)
        .unwrap_or(f64::NAN);
    let metrics = RunMetrics {
        records,
        terminal_val_loss,
        wall_seconds: started.elapsed().as_secs_f64(),
        param_count,
    };
    Ok((model, metrics))
}

/// Deterministic compressible English-like byte stream, for smoke
/// training and benchmarks that should not depend on an input file.
pub fn synthetic_text(len: usize, seed: u64) -> Vec<u8> {
    const WORDS: [&str; 24] = [
        "the", "quick", "brown", "fox", "jumps", "over", "a", "lazy", "dog", "while", "rain",
        "falls", "on", "green", "hills", "and", "rivers", "run", "to", "sea", "under", "pale",
        "morning", "light",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(len + 16);
    let mut since_period = 0usize;
    while out.len() < len {
        // skewed word frequencies: squaring biases toward early words
        let r: f64 = rng.gen::<f64>();
        let idx = ((r * r) * WORDS.len() as f64) as usize;
        out.extend_from_slice(WORDS[idx.min(WORDS.len() - 1)].as_bytes());
        since_period += 1;
        if since_period >= 8 && rng.gen::<f64>() < 0.3 {
            out.extend_from_slice(b".\n");
            since_period = 0;
        } else {
            out.push(b' ');
        }
    }
    out.truncate(len);
    out
}

/// One cell of an ablation grid.
#[derive(Debug, Clone)]
pub struct AblationCell {
    pub name: String,
    pub model_cfg: ModelConfig,
    pub max_lr: f64,
    pub is_baseline: bool,
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: String,
    pub variant: String,
    pub gate: String,
    pub dictionary: String,
    pub max_lr: f64,
    pub median_val_loss: f64,
    pub rel_loss: f64,
    pub failed: bool,
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite losses"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Train every cell over the shared seeds and report median terminal
/// validation losses relative to the designated baseline cell. A cell
/// that aborts is marked failed; the table is still produced.
pub fn run_ablation(
    grid: &[AblationCell],
    base_train_cfg: &TrainConfig,
    corpus: &Corpus,
) -> Result<Vec<AblationRow>> {
    if grid.is_empty() {
        return Err(Error::Config("ablation grid is empty".into()));
    }
    let baseline_idx = grid
        .iter()
        .position(|c| c.is_baseline)
        .ok_or_else(|| Error::Config("no baseline cell designated".into()))?;
    // cells are independent jobs; results stay in grid order, so the
    // table is identical however many workers run them
    use rayon::prelude::*;
    let medians: Vec<Option<f64>> = grid
        .par_iter()
        .map(|cell| {
            let mut cfg = base_train_cfg.clone();
            cfg.max_lr = cell.max_lr;
            let mut losses = Vec::new();
            for &seed in &cfg.seeds {
                match run_training_on(&cell.model_cfg, &cfg, seed, corpus, None) {
                    Ok(m) if m.terminal_val_loss.is_finite() => {
                        losses.push(m.terminal_val_loss)
                    }
                    _ => return None,
                }
            }
            Some(median(&mut losses))
        })
        .collect();
    let baseline_loss = medians[baseline_idx];
    Ok(grid
        .iter()
        .zip(&medians)
        .map(|(cell, med)| {
            let failed = med.is_none();
            let median_val_loss = med.unwrap_or(f64::NAN);
            let rel_loss = match (med, baseline_loss) {
                (Some(m), Some(b)) => m - b,
                _ => f64::NAN,
            };
            AblationRow {
                name: cell.name.clone(),
                variant: cell.model_cfg.ffn.variant.name().to_string(),
                gate: cell.model_cfg.ffn.gate.name().to_string(),
                dictionary: cell.model_cfg.ffn.dictionary.render(),
                max_lr: cell.max_lr,
                median_val_loss,
                rel_loss,
                failed,
            }
        })
        .collect())
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("name,variant,gate,dictionary,max_lr,median_val_loss,rel_loss,failed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{}\n",
            r.name, r.variant, r.gate, r.dictionary, r.max_lr, r.median_val_loss, r.rel_loss, r.failed
        ));
    }
    out
}
