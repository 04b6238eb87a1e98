//! Tiny decoder-only transformer with a pluggable FFN slot: rotary
//! positions, RMSNorm, Pre-Norm residual blocks, tied embeddings, dense
//! causal attention. Sized for desk-scale experiments, not throughput.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ffn::{param_specs, FFNConfig, FFNLayer, INIT_STD};
use crate::tensor::{Tape, Tensor};

pub const RMS_EPS: f64 = 1e-6;
pub const ROPE_BASE: f64 = 10000.0;

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_head: usize,
    pub n_layer: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub ffn: FFNConfig,
    pub tie_embeddings: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.ffn.validate()?;
        if self.n_head == 0 || self.n_layer == 0 || self.vocab_size == 0 || self.seq_len == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.d_model % self.n_head != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_head {}",
                self.d_model, self.n_head
            )));
        }
        let head_dim = self.d_model / self.n_head;
        if head_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "head dimension {head_dim} must be even for rotary pairing"
            )));
        }
        if self.ffn.d_model != self.d_model {
            return Err(Error::Config(format!(
                "ffn d_model {} disagrees with model d_model {}",
                self.ffn.d_model, self.d_model
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_head
    }
}

/// One Pre-Norm residual block: attention then FFN.
#[derive(Debug, Clone)]
pub struct Block {
    pub attn_norm: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub ffn_norm: Vec<f64>,
    pub ffn: FFNLayer,
}

#[derive(Debug, Clone)]
pub struct TransformerModel {
    pub config: ModelConfig,
    /// [vocab_size x d_model]; also the output head when tied.
    pub embedding: Vec<f64>,
    pub layers: Vec<Block>,
    pub final_norm: Vec<f64>,
    /// [d_model x vocab_size]; present only when embeddings are untied.
    pub head: Vec<f64>,
}

/// Deterministic parameter naming for optimizer state and checkpoints:
/// `embedding`, `layer{i}.attn_norm`, `layer{i}.wq` … `layer{i}.ffn.w1` …,
/// `final_norm`, `head` (untied only).
pub fn model_param_specs(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.d_model;
    let mut out = vec![("embedding".to_string(), vec![config.vocab_size, d])];
    for i in 0..config.n_layer {
        out.push((format!("layer{i}.attn_norm"), vec![d]));
        for w in ["wq", "wk", "wv", "wo"] {
            out.push((format!("layer{i}.{w}"), vec![d, d]));
        }
        out.push((format!("layer{i}.ffn_norm"), vec![d]));
        for (name, shape) in param_specs(&config.ffn) {
            out.push((format!("layer{i}.ffn.{name}"), shape));
        }
    }
    out.push(("final_norm".to_string(), vec![d]));
    if !config.tie_embeddings {
        out.push(("head".to_string(), vec![d, config.vocab_size]));
    }
    out
}

impl TransformerModel {
    /// Deterministic given `seed`. Weights from N(0, 0.02^2), norm scales
    /// at 1, per the init recipe shared with the FFN layers.
    pub fn build(config: ModelConfig, seed: u64) -> Result<TransformerModel> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let d = config.d_model;
        let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
            (0..n).map(|_| normal.sample(rng)).collect()
        };
        let embedding = draw(&mut rng, config.vocab_size * d);
        let mut layers = Vec::with_capacity(config.n_layer);
        for _ in 0..config.n_layer {
            let wq = draw(&mut rng, d * d);
            let wk = draw(&mut rng, d * d);
            let wv = draw(&mut rng, d * d);
            let wo = draw(&mut rng, d * d);
            let ffn = FFNLayer::init_with_rng(config.ffn.clone(), &mut rng)?;
            layers.push(Block {
                attn_norm: vec![1.0; d],
                wq,
                wk,
                wv,
                wo,
                ffn_norm: vec![1.0; d],
                ffn,
            });
        }
        let head = if config.tie_embeddings {
            Vec::new()
        } else {
            draw(&mut rng, d * config.vocab_size)
        };
        Ok(TransformerModel {
            final_norm: vec![1.0; d],
            embedding,
            layers,
            head,
            config,
        })
    }

    pub fn param_count(&self) -> usize {
        model_param_specs(&self.config)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    pub fn param(&self, name: &str) -> &Vec<f64> {
        self.resolve(name)
            .unwrap_or_else(|| panic!("unknown model parameter '{name}'"))
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Vec<f64> {
        self.resolve_mut(name)
            .unwrap_or_else(|| panic!("unknown model parameter '{name}'"))
    }

    fn resolve(&self, name: &str) -> Option<&Vec<f64>> {
        match name {
            "embedding" => return Some(&self.embedding),
            "final_norm" => return Some(&self.final_norm),
            "head" => return Some(&self.head),
            _ => {}
        }
        let rest = name.strip_prefix("layer")?;
        let (idx, field) = rest.split_once('.')?;
        let block = self.layers.get(idx.parse::<usize>().ok()?)?;
        Some(match field {
            "attn_norm" => &block.attn_norm,
            "wq" => &block.wq,
            "wk" => &block.wk,
            "wv" => &block.wv,
            "wo" => &block.wo,
            "ffn_norm" => &block.ffn_norm,
            _ => block.ffn.param(field.strip_prefix("ffn.")?),
        })
    }

    fn resolve_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        match name {
            "embedding" => return Some(&mut self.embedding),
            "final_norm" => return Some(&mut self.final_norm),
            "head" => return Some(&mut self.head),
            _ => {}
        }
        let rest = name.strip_prefix("layer")?;
        let (idx, field) = rest.split_once('.')?;
        let block = self.layers.get_mut(idx.parse::<usize>().ok()?)?;
        Some(match field {
            "attn_norm" => &mut block.attn_norm,
            "wq" => &mut block.wq,
            "wk" => &mut block.wk,
            "wv" => &mut block.wv,
            "wo" => &mut block.wo,
            "ffn_norm" => &mut block.ffn_norm,
            _ => block.ffn.param_mut(field.strip_prefix("ffn.")?),
        })
    }

    /// Logits for a batch of equal-length sequences, flattened to
    /// [batch*len x vocab]. Returns the parameter leaves for backward.
    pub fn forward_logits(
        &self,
        tape: &Rc<Tape>,
        batch: &[Vec<usize>],
        overrides: &[(&str, Tensor)],
    ) -> Result<(Tensor, Vec<(String, Tensor)>)> {
        let seq = self.check_batch(batch)?;
        let d = self.config.d_model;
        let n_head = self.config.n_head;
        let head_dim = self.config.head_dim();
        let mut bound: Vec<(String, Tensor)> = Vec::new();
        fn bind(
            model: &TransformerModel,
            tape: &Rc<Tape>,
            overrides: &[(&str, Tensor)],
            bound: &mut Vec<(String, Tensor)>,
            name: String,
            shape: Vec<usize>,
        ) -> Tensor {
            if let Some((_, t)) = overrides.iter().find(|(n, _)| *n == name) {
                bound.push((name, t.clone()));
                return t.clone();
            }
            let leaf = tape.leaf(&shape, model.param(&name).clone(), true);
            bound.push((name, leaf.clone()));
            leaf
        }
        macro_rules! bind {
            ($name:expr, $shape:expr) => {
                bind(self, tape, overrides, &mut bound, $name, $shape)
            };
        }

        let flat_ids: Vec<usize> = batch.iter().flatten().copied().collect();
        let embedding = bind!("embedding".into(), vec![self.config.vocab_size, d]);
        let mut h = embedding.gather_rows(&flat_ids);

        for (i, block) in self.layers.iter().enumerate() {
            let attn_norm = bind!(format!("layer{i}.attn_norm"), vec![d]);
            let wq = bind!(format!("layer{i}.wq"), vec![d, d]);
            let wk = bind!(format!("layer{i}.wk"), vec![d, d]);
            let wv = bind!(format!("layer{i}.wv"), vec![d, d]);
            let wo = bind!(format!("layer{i}.wo"), vec![d, d]);

            let x = h.rms_norm(&attn_norm, RMS_EPS);
            let q = x.matmul(&wq)?;
            let k = x.matmul(&wk)?;
            let v = x.matmul(&wv)?;

            let inv_sqrt = 1.0 / (head_dim as f64).sqrt();
            let mut seq_outputs = Vec::with_capacity(batch.len());
            for b in 0..batch.len() {
                let qs = q.slice_rows(b * seq, seq);
                let ks = k.slice_rows(b * seq, seq);
                let vs = v.slice_rows(b * seq, seq);
                let mut head_outputs = Vec::with_capacity(n_head);
                for hd in 0..n_head {
                    let qh = qs.slice_cols(hd * head_dim, head_dim).rope(0, ROPE_BASE);
                    let kh = ks.slice_cols(hd * head_dim, head_dim).rope(0, ROPE_BASE);
                    let vh = vs.slice_cols(hd * head_dim, head_dim);
                    let scores = qh.matmul(&kh.transpose())?.scale(inv_sqrt);
                    let weights = scores.causal_softmax_rows();
                    head_outputs.push(weights.matmul(&vh)?);
                }
                seq_outputs.push(Tensor::concat_cols(&head_outputs));
            }
            let attn = Tensor::concat_rows(&seq_outputs).matmul(&wo)?;
            h = h.add(&attn)?;

            let ffn_norm = bind!(format!("layer{i}.ffn_norm"), vec![d]);
            let y = h.rms_norm(&ffn_norm, RMS_EPS);
            let ffn_overrides: Vec<(&str, Tensor)> = overrides
                .iter()
                .filter_map(|(n, t)| {
                    n.strip_prefix(&format!("layer{i}.ffn."))
                        .map(|s| (s, t.clone()))
                })
                .collect();
            let (ffn_out, ffn_bound) = block.ffn.forward_bound(tape, &y, &ffn_overrides)?;
            for (n, t) in ffn_bound {
                bound.push((format!("layer{i}.ffn.{n}"), t));
            }
            h = h.add(&ffn_out)?;
        }

        let final_norm = bind!("final_norm".into(), vec![d]);
        let normed = h.rms_norm(&final_norm, RMS_EPS);
        let logits = if self.config.tie_embeddings {
            let emb = bound
                .iter()
                .find(|(n, _)| n == "embedding")
                .expect("embedding bound first")
                .1
                .clone();
            normed.matmul(&emb.transpose())?
        } else {
            let head = bind!("head".into(), vec![d, self.config.vocab_size]);
            normed.matmul(&head)?
        };
        logits.check_finite("transformer logits")?;
        Ok((logits, bound))
    }

    /// Mean next-token cross-entropy in nats over all predicting
    /// positions. Returns the scalar loss tensor plus parameter leaves.
    pub fn forward_loss_bound(
        &self,
        tape: &Rc<Tape>,
        batch: &[Vec<usize>],
        overrides: &[(&str, Tensor)],
    ) -> Result<(Tensor, Vec<(String, Tensor)>)> {
        let seq = self.check_batch(batch)?;
        if seq < 2 {
            return Err(Error::Data(
                "sequences must have at least 2 tokens for next-token loss".into(),
            ));
        }
        let (logits, bound) = self.forward_logits(tape, batch, overrides)?;
        // predictions come from positions 0..seq-1 of each sequence
        let mut rows = Vec::with_capacity(batch.len() * (seq - 1));
        let mut targets = Vec::with_capacity(rows.capacity());
        for (b, sequence) in batch.iter().enumerate() {
            for t in 0..seq - 1 {
                rows.push(b * seq + t);
                targets.push(sequence[t + 1]);
            }
        }
        let loss = logits.gather_rows(&rows).cross_entropy(&targets);
        Ok((loss, bound))
    }

    pub fn forward_loss(&self, tape: &Rc<Tape>, batch: &[Vec<usize>]) -> Result<f64> {
        Ok(self.forward_loss_bound(tape, batch, &[])?.0.item())
    }

    fn check_batch(&self, batch: &[Vec<usize>]) -> Result<usize> {
        let seq = batch
            .first()
            .ok_or_else(|| Error::Data("empty batch".into()))?
            .len();
        if seq == 0 || seq > self.config.seq_len {
            return Err(Error::Data(format!(
                "sequence length {seq} outside 1..={}",
                self.config.seq_len
            )));
        }
        for s in batch {
            if s.len() != seq {
                return Err(Error::Data("ragged batch: unequal sequence lengths".into()));
            }
            if let Some(&bad) = s.iter().find(|&&t| t >= self.config.vocab_size) {
                return Err(Error::Data(format!(
                    "token id {bad} out of range for vocab {}",
                    self.config.vocab_size
                )));
            }
        }
        Ok(seq)
    }
}
