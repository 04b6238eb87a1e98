//! The ten FFN variants behind one interface: fixed-activation baselines,
//! learnable-activation (LA) mixtures, and token-adaptive mixture-of-
//! activations (MoA), for both the two-matrix (Type-I) and gated
//! three-matrix (Type-II) forms.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::activations::{ActivationDictionary, ActivationKind, Flavor};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// Standard deviation for weight and gate initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateKind {
    /// Normalizes mixing weights across the activation index per token.
    Softmax,
    Sigmoid,
    Tanh,
}

impl GateKind {
    pub fn name(&self) -> &'static str {
        match self {
            GateKind::Softmax => "softmax",
            GateKind::Sigmoid => "sigmoid",
            GateKind::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<GateKind> {
        match s.to_ascii_lowercase().as_str() {
            "softmax" => Ok(GateKind::Softmax),
            "sigmoid" => Ok(GateKind::Sigmoid),
            "tanh" => Ok(GateKind::Tanh),
            other => Err(Error::Parse(format!("unknown gate kind '{other}'"))),
        }
    }

    fn apply(&self, logits: &Tensor) -> Tensor {
        match self {
            GateKind::Softmax => logits.softmax_rows(),
            GateKind::Sigmoid => logits.activation(ActivationKind::Sigmoid),
            GateKind::Tanh => logits.activation(ActivationKind::Tanh),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FFNVariant {
    BaselineI,
    LaI,
    MoaI,
    BaselineII,
    OneLa,
    BiLa,
    QdLa,
    OneMoa,
    BiMoa,
    QdMoa,
}

impl FFNVariant {
    pub const ALL: [FFNVariant; 10] = [
        FFNVariant::BaselineI,
        FFNVariant::LaI,
        FFNVariant::MoaI,
        FFNVariant::BaselineII,
        FFNVariant::OneLa,
        FFNVariant::BiLa,
        FFNVariant::QdLa,
        FFNVariant::OneMoa,
        FFNVariant::BiMoa,
        FFNVariant::QdMoa,
    ];

    pub fn flavor(&self) -> Flavor {
        match self {
            FFNVariant::BaselineI | FFNVariant::LaI | FFNVariant::MoaI => Flavor::TypeI,
            _ => Flavor::TypeII,
        }
    }

    pub fn is_la(&self) -> bool {
        matches!(
            self,
            FFNVariant::LaI | FFNVariant::OneLa | FFNVariant::BiLa | FFNVariant::QdLa
        )
    }

    pub fn is_moa(&self) -> bool {
        matches!(
            self,
            FFNVariant::MoaI | FFNVariant::OneMoa | FFNVariant::BiMoa | FFNVariant::QdMoa
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            FFNVariant::BaselineI => "baseline1",
            FFNVariant::LaI => "la1",
            FFNVariant::MoaI => "moa1",
            FFNVariant::BaselineII => "baseline2",
            FFNVariant::OneLa => "one-la",
            FFNVariant::BiLa => "bi-la",
            FFNVariant::QdLa => "qd-la",
            FFNVariant::OneMoa => "one-moa",
            FFNVariant::BiMoa => "bi-moa",
            FFNVariant::QdMoa => "qd-moa",
        }
    }

    pub fn parse(s: &str) -> Result<FFNVariant> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        for v in FFNVariant::ALL {
            if v.name() == norm {
                return Ok(v);
            }
        }
        Err(Error::Parse(format!("unknown FFN variant '{s}'")))
    }
}

/// Default hidden width: 4d for Type-I, floor(8d/3) for Type-II.
pub fn default_hidden(flavor: Flavor, d_model: usize) -> usize {
    match flavor {
        Flavor::TypeI => 4 * d_model,
        Flavor::TypeII => 8 * d_model / 3,
    }
}

#[derive(Debug, Clone)]
pub struct FFNConfig {
    pub d_model: usize,
    pub hidden: usize,
    pub variant: FFNVariant,
    /// Activation of the fixed baselines; ReLU^2 for Type-I, SiLU for
    /// Type-II (SwiGLU) by default.
    pub baseline_activation: ActivationKind,
    pub dictionary: ActivationDictionary,
    pub gate: GateKind,
    /// Augmented-input mode: gates see (x, 1) instead of x. Off in
    /// training, on for the constant-gate embedding construction.
    pub gate_bias: bool,
    pub seed: u64,
}

impl FFNConfig {
    pub fn new(
        d_model: usize,
        variant: FFNVariant,
        dictionary: ActivationDictionary,
        gate: GateKind,
        seed: u64,
    ) -> Result<FFNConfig> {
        let cfg = FFNConfig {
            d_model,
            hidden: default_hidden(variant.flavor(), d_model),
            variant,
            baseline_activation: match variant.flavor() {
                Flavor::TypeI => ActivationKind::ReLUSq,
                Flavor::TypeII => ActivationKind::Silu,
            },
            dictionary,
            gate,
            gate_bias: false,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.hidden == 0 {
            return Err(Error::Config("d_model and hidden must be positive".into()));
        }
        if self.dictionary.is_empty() {
            return Err(Error::Config("activation dictionary is empty".into()));
        }
        if self.dictionary.flavor != self.variant.flavor() {
            return Err(Error::Config(format!(
                "dictionary flavor {} does not match variant {}",
                self.dictionary.flavor.name(),
                self.variant.name()
            )));
        }
        Ok(())
    }

    fn dict_len(&self) -> usize {
        self.dictionary.len()
    }

    /// Length of the alpha vector (zero for variants without one).
    pub fn alpha_len(&self) -> usize {
        match self.variant {
            FFNVariant::LaI | FFNVariant::OneLa | FFNVariant::BiLa => self.dict_len(),
            FFNVariant::QdLa => self.dictionary.pair_count(),
            _ => 0,
        }
    }

    pub fn beta_len(&self) -> usize {
        match self.variant {
            FFNVariant::BiLa => self.dict_len(),
            _ => 0,
        }
    }

    /// Rows of the primary gate matrix U.
    pub fn u_rows(&self) -> usize {
        match self.variant {
            FFNVariant::MoaI | FFNVariant::OneMoa | FFNVariant::BiMoa => self.dict_len(),
            FFNVariant::QdMoa => self.dictionary.pair_count(),
            _ => 0,
        }
    }

    /// Rows of the secondary gate matrix V (bi-MoA only).
    pub fn v_rows(&self) -> usize {
        match self.variant {
            FFNVariant::BiMoa => self.dict_len(),
            _ => 0,
        }
    }
}

/// Exact parameter accounting for one FFN layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub projection_params: usize,
    pub mixing_params: usize,
    pub gate_params: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.projection_params + self.mixing_params + self.gate_params
    }
}

pub fn param_count(config: &FFNConfig) -> ParamBreakdown {
    let d = config.d_model;
    let h = config.hidden;
    let projections = match config.variant.flavor() {
        Flavor::TypeI => 2 * d * h,
        Flavor::TypeII => 3 * d * h,
    };
    ParamBreakdown {
        projection_params: projections,
        mixing_params: config.alpha_len() + config.beta_len(),
        gate_params: (config.u_rows() + config.v_rows()) * d,
    }
}

/// One FFN layer instance: projection weights, mixing coefficients, and
/// gate parameters as the variant requires.
///
/// Weight layout: `w1` is [d x hidden] row-major so that `x @ w1` projects
/// up; `w2` is [hidden x d] for Type-I output or [d x hidden] for the
/// Type-II second branch; `w3` is [hidden x d] (Type-II only). Gate
/// matrices `u`/`v` are [rows x d].
#[derive(Debug, Clone)]
pub struct FFNLayer {
    pub config: FFNConfig,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub w3: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub u_bias: Vec<f64>,
    pub v_bias: Vec<f64>,
}

/// Parameter names in deterministic order, with shapes; the contract for
/// checkpoints and optimizer state.
pub fn param_specs(config: &FFNConfig) -> Vec<(&'static str, Vec<usize>)> {
    let d = config.d_model;
    let h = config.hidden;
    let mut out = vec![("w1", vec![d, h])];
    match config.variant.flavor() {
        Flavor::TypeI => out.push(("w2", vec![h, d])),
        Flavor::TypeII => {
            out.push(("w2", vec![d, h]));
            out.push(("w3", vec![h, d]));
        }
    }
    if config.alpha_len() > 0 {
        out.push(("alpha", vec![config.alpha_len()]));
    }
    if config.beta_len() > 0 {
        out.push(("beta", vec![config.beta_len()]));
    }
    if config.u_rows() > 0 {
        out.push(("u", vec![config.u_rows(), d]));
        if config.gate_bias {
            out.push(("u_bias", vec![config.u_rows()]));
        }
    }
    if config.v_rows() > 0 {
        out.push(("v", vec![config.v_rows(), d]));
        if config.gate_bias {
            out.push(("v_bias", vec![config.v_rows()]));
        }
    }
    out
}

impl FFNLayer {
    /// Initialize weights and gate rows from
    /// N(0, 0.02^2), mixing coefficients at 1, gate biases at 0.
    /// Deterministic given `config.seed`.
    pub fn init(config: FFNConfig) -> Result<FFNLayer> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        FFNLayer::init_with_rng(config, &mut rng)
    }

    /// Initialize drawing from a caller-owned stream, so a model can seed
    /// all of its layers from one generator.
    pub fn init_with_rng(config: FFNConfig, rng: &mut ChaCha8Rng) -> Result<FFNLayer> {
        config.validate()?;
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| normal.sample(&mut *rng)).collect() };
        let d = config.d_model;
        let h = config.hidden;
        let w1 = draw(d * h);
        let w2 = match config.variant.flavor() {
            Flavor::TypeI => draw(h * d),
            Flavor::TypeII => draw(d * h),
        };
        let w3 = match config.variant.flavor() {
            Flavor::TypeI => Vec::new(),
            Flavor::TypeII => draw(h * d),
        };
        let u = draw(config.u_rows() * d);
        let v = draw(config.v_rows() * d);
        Ok(FFNLayer {
            alpha: vec![1.0; config.alpha_len()],
            beta: vec![1.0; config.beta_len()],
            u_bias: vec![0.0; if config.gate_bias { config.u_rows() } else { 0 }],
            v_bias: vec![0.0; if config.gate_bias { config.v_rows() } else { 0 }],
            w1,
            w2,
            w3,
            u,
            v,
            config,
        })
    }

    pub fn param(&self, name: &str) -> &Vec<f64> {
        match name {
            "w1" => &self.w1,
            "w2" => &self.w2,
            "w3" => &self.w3,
            "alpha" => &self.alpha,
            "beta" => &self.beta,
            "u" => &self.u,
            "v" => &self.v,
            "u_bias" => &self.u_bias,
            "v_bias" => &self.v_bias,
            other => panic!("unknown FFN parameter '{other}'"),
        }
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Vec<f64> {
        match name {
            "w1" => &mut self.w1,
            "w2" => &mut self.w2,
            "w3" => &mut self.w3,
            "alpha" => &mut self.alpha,
            "beta" => &mut self.beta,
            "u" => &mut self.u,
            "v" => &mut self.v,
            "u_bias" => &mut self.u_bias,
            "v_bias" => &mut self.v_bias,
            other => panic!("unknown FFN parameter '{other}'"),
        }
    }

    /// Forward pass on `x` [n x d]. Parameters become constant leaves.
    pub fn forward(&self, tape: &Rc<Tape>, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_bound(tape, x, &[])?.0)
    }

    /// Forward pass that returns the parameter leaves so callers can read
    /// gradients after backward. `overrides` substitutes named parameters
    /// with existing tensors (used by gradient checks).
    pub fn forward_bound(
        &self,
        tape: &Rc<Tape>,
        x: &Tensor,
        overrides: &[(&str, Tensor)],
    ) -> Result<(Tensor, Vec<(String, Tensor)>)> {
        if x.cols() != self.config.d_model {
            return Err(Error::Dim(format!(
                "ffn forward: input has {} columns, expected d_model {}",
                x.cols(),
                self.config.d_model
            )));
        }
        let mut bound: Vec<(String, Tensor)> = Vec::new();
        let mut bind = |name: &str, shape: Vec<usize>| -> Tensor {
            if let Some((_, t)) = overrides.iter().find(|(n, _)| *n == name) {
                bound.push((name.to_string(), t.clone()));
                return t.clone();
            }
            let leaf = tape.leaf(&shape, self.param(name).clone(), true);
            bound.push((name.to_string(), leaf.clone()));
            leaf
        };

        let d = self.config.d_model;
        let h = self.config.hidden;
        let kinds = self.config.dictionary.entries.clone();
        let k_count = kinds.len();

        let out = match self.config.variant {
            FFNVariant::BaselineI => {
                let w1 = bind("w1", vec![d, h]);
                let w2 = bind("w2", vec![h, d]);
                let y = x.matmul(&w1)?;
                y.activation(self.config.baseline_activation).matmul(&w2)?
            }
            FFNVariant::LaI => {
                let w1 = bind("w1", vec![d, h]);
                let w2 = bind("w2", vec![h, d]);
                let alpha = bind("alpha", vec![k_count]);
                let y = x.matmul(&w1)?;
                mix_la(&y, &kinds, &alpha)?.matmul(&w2)?
            }
            FFNVariant::MoaI => {
                let w1 = bind("w1", vec![d, h]);
                let w2 = bind("w2", vec![h, d]);
                let gates = self.gate_weights(tape, x, &mut bind, "u", k_count)?;
                let y = x.matmul(&w1)?;
                mix_moa(&y, &kinds, &gates)?.matmul(&w2)?
            }
            FFNVariant::BaselineII => {
                let (y, z, w3) = self.type2_branches(x, &mut bind)?;
                y.activation(self.config.baseline_activation)
                    .hadamard(&z)?
                    .matmul(&w3)?
            }
            FFNVariant::OneLa => {
                let (y, z, w3) = self.type2_branches(x, &mut bind)?;
                let alpha = bind("alpha", vec![k_count]);
                y.activation(ActivationKind::Silu)
                    .hadamard(&mix_la(&z, &kinds, &alpha)?)?
                    .matmul(&w3)?
            }
            FFNVariant::BiLa => {
                let (y, z, w3) = self.type2_branches(x, &mut bind)?;
                let alpha = bind("alpha", vec![k_count]);
                let beta = bind("beta", vec![k_count]);
                mix_la(&y, &kinds, &beta)?
                    .hadamard(&mix_la(&z, &kinds, &alpha)?)?
                    .matmul(&w3)?
            }
            FFNVariant::QdLa => {
                let (y, z, w3) = self.type2_branches(x, &mut bind)?;
                let pairs = self.config.dictionary.pairs();
                let alpha = bind("alpha", vec![pairs.len()]);
                let ys: Vec<Tensor> = kinds.iter().map(|k| y.activation(*k)).collect();
                let zs: Vec<Tensor> = kinds.iter().map(|k| z.activation(*k)).collect();
                let mut acc: Option<Tensor> = None;
                for (idx, &(k, l)) in pairs.iter().enumerate() {
                    let term = ys[k]
                        .hadamard(&zs[l])?
                        .scalar_mul(&alpha.slice_cols(idx, 1));
                    acc = Some(match acc {
                        None => term,
                        Some(a) => a.add(&term)?,
                    });
                }
                acc.expect("non-empty dictionary").matmul(&w3)?
            }
            FFNVariant::OneMoa => {
                let (y, z, w3) = self.type2_branches(x, &mut bind)?;
                let gates = self.gate_weights(tape, x, &mut bind, "u", k_count)?;
                y.activation(ActivationKind::Silu)
                    .hadamard(&mix_moa(&z, &kinds, &gates)?)?
                    .matmul(&w3)?
            }
            FFNVariant::BiMoa => {
                let (y, z, w3) = self.type2_branches(x, &mut bind)?;
                let rho = self.gate_weights(tape, x, &mut bind, "v", k_count)?;
                let pi = self.gate_weights(tape, x, &mut bind, "u", k_count)?;
                mix_moa(&y, &kinds, &rho)?
                    .hadamard(&mix_moa(&z, &kinds, &pi)?)?
                    .matmul(&w3)?
            }
            FFNVariant::QdMoa => {
                let (y, z, w3) = self.type2_branches(x, &mut bind)?;
                let pairs = self.config.dictionary.pairs();
                let gates = self.gate_weights(tape, x, &mut bind, "u", pairs.len())?;
                let ys: Vec<Tensor> = kinds.iter().map(|k| y.activation(*k)).collect();
                let zs: Vec<Tensor> = kinds.iter().map(|k| z.activation(*k)).collect();
                let mut acc: Option<Tensor> = None;
                for (idx, &(k, l)) in pairs.iter().enumerate() {
                    let term = ys[k]
                        .hadamard(&zs[l])?
                        .row_scale(&gates.slice_cols(idx, 1))?;
                    acc = Some(match acc {
                        None => term,
                        Some(a) => a.add(&term)?,
                    });
                }
                acc.expect("non-empty dictionary").matmul(&w3)?
            }
        };
        out.check_finite(self.config.variant.name())?;
        Ok((out, bound))
    }

    fn type2_branches(
        &self,
        x: &Tensor,
        bind: &mut dyn FnMut(&str, Vec<usize>) -> Tensor,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let d = self.config.d_model;
        let h = self.config.hidden;
        let w1 = bind("w1", vec![d, h]);
        let w2 = bind("w2", vec![d, h]);
        let w3 = bind("w3", vec![h, d]);
        Ok((x.matmul(&w1)?, x.matmul(&w2)?, w3))
    }

    /// Mixing weights [n x rows]: phi applied to x @ U^T (+ bias when the
    /// layer is in augmented-input mode). Gates see the raw token x.
    fn gate_weights(
        &self,
        _tape: &Rc<Tape>,
        x: &Tensor,
        bind: &mut dyn FnMut(&str, Vec<usize>) -> Tensor,
        which: &str,
        rows: usize,
    ) -> Result<Tensor> {
        let d = self.config.d_model;
        let umat = bind(which, vec![rows, d]);
        let mut logits = x.matmul(&umat.transpose())?;
        if self.config.gate_bias {
            let bias_name = if which == "u" { "u_bias" } else { "v_bias" };
            let bias = bind(bias_name, vec![rows]);
            logits = logits.add_row_vec(&bias)?;
        }
        Ok(self.config.gate.apply(&logits))
    }
}

fn mix_la(y: &Tensor, kinds: &[ActivationKind], alpha: &Tensor) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for (k, kind) in kinds.iter().enumerate() {
        let term = y.activation(*kind).scalar_mul(&alpha.slice_cols(k, 1));
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
    }
    Ok(acc.expect("non-empty dictionary"))
}

fn mix_moa(y: &Tensor, kinds: &[ActivationKind], gates: &Tensor) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for (k, kind) in kinds.iter().enumerate() {
        let term = y.activation(*kind).row_scale(&gates.slice_cols(k, 1))?;
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
    }
    Ok(acc.expect("non-empty dictionary"))
}

/// Rewrite an LA layer as the MoA layer that computes the same function:
/// tanh gates with zero weight rows, bias arctanh(rho * coefficient), and
/// output weights rescaled by 1/rho (1/rho^2 for the bi-sided form).
pub fn embed_la_as_moa(la: &FFNLayer, rho: f64) -> Result<FFNLayer> {
    if !la.config.variant.is_la() {
        return Err(Error::Contract(format!(
            "embed_la_as_moa expects an LA variant, got {}",
            la.config.variant.name()
        )));
    }
    if rho <= 0.0 {
        return Err(Error::Range("rho must be positive".into()));
    }
    let coeff_bias = |coeffs: &[f64]| -> Result<Vec<f64>> {
        coeffs
            .iter()
            .map(|&a| {
                if (rho * a).abs() >= 1.0 {
                    Err(Error::Range(format!(
                        "|rho * alpha| = {} >= 1; choose a smaller rho",
                        (rho * a).abs()
                    )))
                } else {
                    Ok((rho * a).atanh())
                }
            })
            .collect()
    };

    let (variant, output_scale) = match la.config.variant {
        FFNVariant::LaI => (FFNVariant::MoaI, 1.0 / rho),
        FFNVariant::OneLa => (FFNVariant::OneMoa, 1.0 / rho),
        FFNVariant::BiLa => (FFNVariant::BiMoa, 1.0 / (rho * rho)),
        FFNVariant::QdLa => (FFNVariant::QdMoa, 1.0 / rho),
        _ => unreachable!(),
    };
    let mut config = la.config.clone();
    config.variant = variant;
    config.gate = GateKind::Tanh;
    config.gate_bias = true;

    let u_bias = coeff_bias(&la.alpha)?;
    let v_bias = coeff_bias(&la.beta)?;
    let scale_out = |w: &[f64]| w.iter().map(|x| x * output_scale).collect::<Vec<f64>>();
    let (w2, w3) = match variant {
        FFNVariant::MoaI => (scale_out(&la.w2), la.w3.clone()),
        _ => (la.w2.clone(), scale_out(&la.w3)),
    };
    Ok(FFNLayer {
        u: vec![0.0; config.u_rows() * config.d_model],
        v: vec![0.0; config.v_rows() * config.d_model],
        u_bias,
        v_bias,
        alpha: Vec::new(),
        beta: Vec::new(),
        w1: la.w1.clone(),
        w2,
        w3,
        config,
    })
}

#[derive(Debug, Clone)]
pub struct GradCheckRow {
    pub variant: FFNVariant,
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Finite-difference audit of every parameter group of every variant at
/// small width, over a batch of random points; returns one row per
/// variant with the worst relative error across its parameter groups.
pub fn grad_check_all(points: usize, seed: u64, tol: f64) -> Result<Vec<GradCheckRow>> {
    use crate::activations::{default_dictionary_code, parse_dictionary};
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let d = 4usize;
    let mut rows = Vec::new();
    for (idx, variant) in FFNVariant::ALL.into_iter().enumerate() {
        let flavor = variant.flavor();
        let dict = parse_dictionary(default_dictionary_code(flavor), flavor)?;
        let cfg = FFNConfig::new(d, variant, dict, GateKind::Sigmoid, seed)?;
        let layer = FFNLayer::init(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(idx as u64));
        let x: Vec<f64> = (0..points * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut max_err = 0.0f64;
        for (name, shape) in param_specs(&layer.config) {
            let l2 = layer.clone();
            let x2 = x.clone();
            let err = grad_check(
                |tape, leaf| {
                    let xt = tape.leaf(&[points, d], x2.clone(), false);
                    let (out, _) = l2.forward_bound(tape, &xt, &[(name, leaf.clone())])?;
                    Ok(out.sum())
                },
                &shape,
                layer.param(name),
                1e-5,
            )?;
            max_err = max_err.max(err);
        }
        rows.push(GradCheckRow {
            variant,
            max_rel_err: max_err,
            pass: max_err <= tol,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::parse_dictionary;
    use crate::tensor::grad_check;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn dict(flavor: Flavor) -> ActivationDictionary {
        match flavor {
            Flavor::TypeI => parse_dictionary("gsr2lr", flavor).unwrap(),
            Flavor::TypeII => parse_dictionary("gsr2ltr", flavor).unwrap(),
        }
    }

    fn layer(variant: FFNVariant, d: usize, seed: u64) -> FFNLayer {
        let cfg = FFNConfig::new(d, variant, dict(variant.flavor()), GateKind::Sigmoid, seed)
            .unwrap();
        FFNLayer::init(cfg).unwrap()
    }

    fn random_input(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn forward_values(layer: &FFNLayer, x: &[f64], n: usize) -> Vec<f64> {
        let tape = Tape::new();
        let xt = tape.leaf(&[n, layer.config.d_model], x.to_vec(), false);
        layer.forward(&tape, &xt).unwrap().value()
    }

    #[test]
    fn baseline1_hand_evaluation() {
        // W1 = W2 = I with d = hidden = 2: f(x) = ReLU^2(x)
        let mut cfg = FFNConfig::new(
            2,
            FFNVariant::BaselineI,
            dict(Flavor::TypeI),
            GateKind::Sigmoid,
            0,
        )
        .unwrap();
        cfg.hidden = 2;
        let mut l = FFNLayer::init(cfg).unwrap();
        l.w1 = vec![1.0, 0.0, 0.0, 1.0];
        l.w2 = vec![1.0, 0.0, 0.0, 1.0];
        assert_eq!(forward_values(&l, &[2.0, -3.0], 1), vec![4.0, 0.0]);
    }

    #[test]
    fn init_contract() {
        let l = layer(FFNVariant::LaI, 8, 42);
        assert_eq!(l.alpha, vec![1.0; 5]);

        let l = layer(FFNVariant::MoaI, 8, 7);
        assert_eq!(l.u.len(), 5 * 8);
        let mean = l.u.iter().sum::<f64>() / l.u.len().max(1) as f64;
        let var = l.u.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / l.u.len() as f64;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((0.01..0.03).contains(&var.sqrt()), "{}", var.sqrt());

        let a = layer(FFNVariant::BiMoa, 16, 99);
        let b = layer(FFNVariant::BiMoa, 16, 99);
        assert_eq!(a.w1, b.w1);
        assert_eq!(a.u, b.u);
        assert_eq!(a.v, b.v);
    }

    #[test]
    fn zero_dim_config_rejected() {
        assert!(FFNConfig::new(
            0,
            FFNVariant::BaselineI,
            dict(Flavor::TypeI),
            GateKind::Sigmoid,
            0
        )
        .is_err());
    }

    #[test]
    fn moa_with_zero_gates_halves_la_output() {
        // sigmoid(0) = 1/2: zero gate rows make MoA exactly half of the
        // all-ones LA output with the same projection weights.
        let mut moa = layer(FFNVariant::MoaI, 6, 3);
        moa.u.iter_mut().for_each(|x| *x = 0.0);
        let mut la = layer(FFNVariant::LaI, 6, 5);
        la.w1 = moa.w1.clone();
        la.w2 = moa.w2.clone();
        let x = random_input(4, 6, 11);
        let mv = forward_values(&moa, &x, 4);
        let lv = forward_values(&la, &x, 4);
        for (m, l) in mv.iter().zip(&lv) {
            assert!((m - 0.5 * l).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_gate_weights_sum_to_one() {
        let cfg = FFNConfig::new(
            8,
            FFNVariant::OneMoa,
            dict(Flavor::TypeII),
            GateKind::Softmax,
            17,
        )
        .unwrap();
        let l = FFNLayer::init(cfg).unwrap();
        let x = random_input(64, 8, 23);
        let tape = Tape::new();
        let xt = tape.leaf(&[64, 8], x, false);
        let mut bound = Vec::new();
        let mut bind = |name: &str, shape: Vec<usize>| -> Tensor {
            let t = tape.leaf(&shape, l.param(name).clone(), false);
            bound.push((name.to_string(), t.clone()));
            t
        };
        let k = l.config.dict_len();
        let gates = l.gate_weights(&tape, &xt, &mut bind, "u", k).unwrap();
        for row in gates.value().chunks(k) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_la_recovers_fixed_baselines() {
        // Type-I: LA with one-hot alpha at sigma_j is bit-identical to the
        // fixed baseline with sigma_j, given the same weights.
        let base_dict = dict(Flavor::TypeI);
        for (j, kind) in base_dict.entries.iter().enumerate() {
            let mut la = layer(FFNVariant::LaI, 6, 31);
            la.alpha.iter_mut().for_each(|a| *a = 0.0);
            la.alpha[j] = 1.0;
            let mut base = layer(FFNVariant::BaselineI, 6, 31);
            base.config.baseline_activation = *kind;
            base.w1 = la.w1.clone();
            base.w2 = la.w2.clone();
            let x = random_input(8, 6, 37);
            assert_eq!(forward_values(&la, &x, 8), forward_values(&base, &x, 8));
        }
        // Type-II: bi-LA with beta one-hot at sigma_j and alpha one-hot at
        // Identity recovers the fixed Type-II baseline with sigma_j.
        let d2 = parse_dictionary("igsr2ltr", Flavor::TypeII).unwrap();
        for (j, kind) in d2.entries.clone().iter().enumerate() {
            let cfg = FFNConfig::new(6, FFNVariant::BiLa, d2.clone(), GateKind::Sigmoid, 41)
                .unwrap();
            let mut la = FFNLayer::init(cfg).unwrap();
            la.alpha.iter_mut().for_each(|a| *a = 0.0);
            la.beta.iter_mut().for_each(|b| *b = 0.0);
            la.alpha[0] = 1.0; // Identity branch
            la.beta[j] = 1.0;
            let cfg2 =
                FFNConfig::new(6, FFNVariant::BaselineII, d2.clone(), GateKind::Sigmoid, 41)
                    .unwrap();
            let mut base = FFNLayer::init(cfg2).unwrap();
            base.config.baseline_activation = *kind;
            base.w1 = la.w1.clone();
            base.w2 = la.w2.clone();
            base.w3 = la.w3.clone();
            let x = random_input(8, 6, 43);
            assert_eq!(forward_values(&la, &x, 8), forward_values(&base, &x, 8));
        }
    }

    #[test]
    fn embed_la_as_moa_matches_source() {
        for variant in [
            FFNVariant::LaI,
            FFNVariant::OneLa,
            FFNVariant::BiLa,
            FFNVariant::QdLa,
        ] {
            let mut la = layer(variant, 6, 51);
            // non-trivial coefficients
            let mut rng = ChaCha8Rng::seed_from_u64(52);
            la.alpha.iter_mut().for_each(|a| *a = rng.gen_range(-2.0..2.0));
            la.beta.iter_mut().for_each(|b| *b = rng.gen_range(-2.0..2.0));
            let moa = embed_la_as_moa(&la, 0.25).unwrap();
            let x = random_input(100, 6, 53);
            let lv = forward_values(&la, &x, 100);
            let mv = forward_values(&moa, &x, 100);
            let max_diff = lv
                .iter()
                .zip(&mv)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_diff <= 1e-12, "{}: {max_diff}", variant.name());
        }
    }

    #[test]
    fn embed_bias_value_and_zero_alpha_case() {
        let mut la = layer(FFNVariant::LaI, 4, 61);
        la.alpha = vec![1.0; 5];
        let moa = embed_la_as_moa(&la, 0.5).unwrap();
        for b in &moa.u_bias {
            assert!((b - 0.5493061443340549).abs() < 1e-15); // arctanh(0.5)
        }

        la.alpha = vec![0.0; 5];
        let moa = embed_la_as_moa(&la, 0.5).unwrap();
        let x = random_input(6, 4, 62);
        for v in forward_values(&moa, &x, 6) {
            assert_eq!(v, 0.0);
        }

        la.alpha = vec![3.0; 5];
        assert!(embed_la_as_moa(&la, 0.5).is_err());
    }

    #[test]
    fn token_adaptivity_witness() {
        let l = layer(FFNVariant::MoaI, 8, 71);
        // nonzero gate row guaranteed by init; find two inputs with
        // mixing weights differing by > 1e-3
        let x = random_input(64, 8, 73);
        let tape = Tape::new();
        let xt = tape.leaf(&[64, 8], x, false);
        let mut bind = |name: &str, shape: Vec<usize>| -> Tensor {
            tape.leaf(&shape, l.param(name).clone(), false)
        };
        let gates = l.gate_weights(&tape, &xt, &mut bind, "u", 5).unwrap().value();
        let mut found = false;
        'outer: for i in 0..64 {
            for j in (i + 1)..64 {
                let diff = (0..5)
                    .map(|k| (gates[i * 5 + k] - gates[j * 5 + k]).abs())
                    .fold(0.0f64, f64::max);
                if diff > 1e-3 {
                    found = true;
                    break 'outer;
                }
            }
        }
        assert!(found, "no pair of tokens with distinct mixing weights");
    }

    #[test]
    fn param_count_formulas() {
        let mut cfg = FFNConfig::new(
            768,
            FFNVariant::MoaI,
            dict(Flavor::TypeI),
            GateKind::Softmax,
            0,
        )
        .unwrap();
        assert_eq!(param_count(&cfg).gate_params, 5 * 768);
        assert_eq!(param_count(&cfg).gate_params, 3840);

        cfg = FFNConfig::new(
            768,
            FFNVariant::BiMoa,
            parse_dictionary("igsr2lt", Flavor::TypeII).unwrap(),
            GateKind::Sigmoid,
            0,
        )
        .unwrap();
        assert_eq!(param_count(&cfg).gate_params, 2 * 6 * 768);

        let cfg3 = FFNConfig::new(
            16,
            FFNVariant::QdLa,
            parse_dictionary("gsr2", Flavor::TypeII).unwrap(),
            GateKind::Sigmoid,
            0,
        )
        .unwrap();
        assert_eq!(param_count(&cfg3).mixing_params, 6);
    }

    #[test]
    fn overhead_bound_and_independence_from_hidden() {
        for variant in FFNVariant::ALL {
            let d = 64;
            let dd = dict(variant.flavor());
            let kk = dd.len();
            let mut cfg = FFNConfig::new(d, variant, dd, GateKind::Sigmoid, 0).unwrap();
            let pc1 = param_count(&cfg);
            cfg.hidden *= 4;
            let pc2 = param_count(&cfg);
            assert_eq!(
                pc1.gate_params + pc1.mixing_params,
                pc2.gate_params + pc2.mixing_params
            );
            assert!(pc1.gate_params + pc1.mixing_params <= 2 * kk * kk * d);
            assert_eq!(pc2.projection_params, 4 * pc1.projection_params);
        }
    }

    #[test]
    fn all_variants_param_grads_pass_grad_check() {
        // Gradient of sum(forward) w.r.t. every parameter group.
        for variant in FFNVariant::ALL {
            let l = layer(variant, 4, 81);
            let x = random_input(3, 4, 83);
            for (name, shape) in param_specs(&l.config) {
                let l2 = l.clone();
                let x2 = x.clone();
                let err = grad_check(
                    |tape, leaf| {
                        let xt = tape.leaf(&[3, 4], x2.clone(), false);
                        let (out, _) =
                            l2.forward_bound(tape, &xt, &[(name, leaf.clone())])?;
                        Ok(out.sum())
                    },
                    &shape,
                    l.param(name),
                    1e-5,
                )
                .unwrap();
                assert!(
                    err <= 1e-5,
                    "{} / {}: rel err {err}",
                    variant.name(),
                    name
                );
            }
        }
    }

    #[test]
    fn degenerate_single_entry_dictionary() {
        let dd = parse_dictionary("r2", Flavor::TypeI).unwrap();
        let cfg = FFNConfig::new(4, FFNVariant::LaI, dd, GateKind::Sigmoid, 91).unwrap();
        let mut l = FFNLayer::init(cfg).unwrap();
        l.alpha = vec![2.0];
        let mut base = layer(FFNVariant::BaselineI, 4, 91);
        base.w1 = l.w1.clone();
        base.w2 = l.w2.clone();
        let x = random_input(5, 4, 92);
        let lv = forward_values(&l, &x, 5);
        let bv = forward_values(&base, &x, 5);
        for (a, b) in lv.iter().zip(&bv) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }
}
