//! Parameter, FLOP, and wall-clock accounting across FFN variants.
//!
//! Unit convention, declared in every report header: projections, gates,
//! and mixing are counted as multiply-accumulates (MACs); scalar
//! activation evaluations are counted separately, one unit per evaluation.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::activations::Flavor;
use crate::ffn::{FFNConfig, FFNVariant};
use crate::tensor::Tape;
use crate::train::{AdamW, Corpus, TrainConfig};
use crate::transformer::{ModelConfig, TransformerModel};

/// Analytic per-token cost of one FFN layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopBreakdown {
    /// 2 d D (Type-I) or 3 d D (Type-II) projection MACs
    pub projection_macs: u64,
    /// scalar activation evaluations
    pub activation_evals: u64,
    /// gate logits: rows(U) d (+ rows(V) d) MACs
    pub gate_macs: u64,
    /// mixing-weight application: D x (mixing coefficients per unit) MACs
    pub mixing_macs: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.projection_macs + self.activation_evals + self.gate_macs + self.mixing_macs
    }

    pub fn extra_over(&self, baseline: &FlopBreakdown) -> u64 {
        self.total() - baseline.total()
    }
}

/// Exact per-token FLOP count for one FFN layer under the declared unit
/// convention.
pub fn analytic_flops(config: &FFNConfig) -> FlopBreakdown {
    let d = config.d_model as u64;
    let big_d = config.hidden as u64;
    let k = config.dictionary.len() as u64;
    let pairs = config.dictionary.pair_count() as u64;
    let projection_macs = match config.variant.flavor() {
        Flavor::TypeI => 2 * d * big_d,
        Flavor::TypeII => 3 * d * big_d,
    };
    // evaluations of scalar activations per token; baselines apply one
    // activation to the D hidden units, dictionary variants apply all of
    // them per mixed branch
    let activation_evals = match config.variant {
        FFNVariant::BaselineI | FFNVariant::BaselineII => big_d,
        FFNVariant::LaI | FFNVariant::MoaI => k * big_d,
        // one-branch mixing still evaluates the baseline linear branch free
        FFNVariant::OneLa | FFNVariant::OneMoa => k * big_d,
        // both branches carry the dictionary (qd pairs reuse the same
        // 2 |K| D evaluations; pairing is a product, counted under mixing)
        FFNVariant::BiLa | FFNVariant::QdLa | FFNVariant::BiMoa | FFNVariant::QdMoa => {
            2 * k * big_d
        }
    };
    let gate_macs = (config.u_rows() as u64 + config.v_rows() as u64) * d;
    let mixing_per_unit = match config.variant {
        FFNVariant::BaselineI | FFNVariant::BaselineII => 0,
        FFNVariant::LaI | FFNVariant::MoaI | FFNVariant::OneLa | FFNVariant::OneMoa => k,
        FFNVariant::BiLa | FFNVariant::BiMoa => 2 * k,
        FFNVariant::QdLa | FFNVariant::QdMoa => pairs,
    };
    FlopBreakdown {
        projection_macs,
        activation_evals,
        gate_macs,
        mixing_macs: big_d * mixing_per_unit,
    }
}

#[derive(Debug, Clone)]
pub struct OverheadReport {
    pub variant: FFNVariant,
    pub params_total: usize,
    pub params_delta_vs_baseline: i64,
    pub flops_per_token: u64,
    pub mean_step_ms: f64,
    pub median_step_ms: f64,
    /// fastest observed step; scheduler noise only ever adds time, so this
    /// is the most stable estimator on a shared machine and the one the
    /// baseline ratio is computed from
    pub min_step_ms: f64,
    /// best-effort; the default allocator exposes no statistics, so this
    /// is 0 ("unavailable") on this build
    pub peak_alloc_bytes: u64,
    pub ratio_vs_baseline: f64,
    /// batch size actually timed (widened if steps ran under 1 ms)
    pub batch_size_used: usize,
    pub widened: bool,
}

fn flavor_baseline(flavor: Flavor) -> FFNVariant {
    match flavor {
        Flavor::TypeI => FFNVariant::BaselineI,
        Flavor::TypeII => FFNVariant::BaselineII,
    }
}

/// Raw step timings for one variant at a fixed batch size.
fn time_steps(
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    corpus: &Corpus,
    batch_size: usize,
    steps: usize,
    warmup: usize,
) -> Result<Vec<f64>> {
    let mut model = TransformerModel::build(model_cfg.clone(), 0)?;
    let mut opt = AdamW::new();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut timings = Vec::with_capacity(steps);
    for step in 0..warmup + steps {
        let batch = corpus.sample_batch(&mut rng, batch_size, model_cfg.seq_len)?;
        let t0 = Instant::now();
        let tape = Tape::new();
        let (loss, bound) = model.forward_loss_bound(&tape, &batch, &[])?;
        if !loss.item().is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at step {step}")));
        }
        loss.backward()?;
        let mut groups: Vec<(String, Vec<f64>, Vec<f64>)> = bound
            .iter()
            .map(|(n, t)| (n.clone(), std::mem::take(model.param_mut(n)), t.grad()))
            .collect();
        let stepped = opt.step(&mut groups, 1e-4, train);
        for (name, param, _) in groups {
            *model.param_mut(&name) = param;
        }
        stepped?;
        if step >= warmup {
            timings.push(t0.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(timings)
}

fn median(sorted: &mut Vec<f64>) -> f64 {
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Time one variant, widening the batch until steps take at least 1 ms so
/// the timer resolution is adequate.
pub fn wall_clock(
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    corpus: &Corpus,
    steps: usize,
    warmup: usize,
) -> Result<(f64, f64, f64, usize, bool)> {
    if steps < 10 {
        return Err(Error::Config("need at least 10 timed steps".into()));
    }
    let mut batch_size = train.batch_size;
    let mut widened = false;
    loop {
        let mut t = time_steps(model_cfg, train, corpus, batch_size, steps, warmup)?;
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        let med = median(&mut t);
        let min = t[0]; // median() leaves the vector sorted
        if mean >= 1.0 || batch_size >= 512 {
            return Ok((mean, med, min, batch_size, widened));
        }
        batch_size *= 2;
        widened = true;
    }
}

/// Full overhead comparison: every requested variant timed in the same
/// process against its same-flavor baseline (run first).
pub fn overhead_reports(
    base_cfg: &ModelConfig,
    train: &TrainConfig,
    variants: &[FFNVariant],
    steps: usize,
    warmup: usize,
    seed: u64,
) -> Result<Vec<OverheadReport>> {
    if variants.is_empty() {
        return Err(Error::Config("no variants requested".into()));
    }
    let flavor = variants[0].flavor();
    if variants.iter().any(|v| v.flavor() != flavor) {
        return Err(Error::Config(
            "overhead comparison mixes Type-I and Type-II variants".into(),
        ));
    }
    // synthetic corpus so the bench needs no input file
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bytes: Vec<u8> = (0..1 << 16).map(|_| rng.gen::<u8>()).collect();
    let corpus = Corpus::from_bytes(bytes)?;

    let with_variant = |variant: FFNVariant| -> Result<ModelConfig> {
        let mut cfg = base_cfg.clone();
        cfg.ffn = FFNConfig::new(
            cfg.d_model,
            variant,
            crate::activations::parse_dictionary(
                crate::config::default_dictionary_code(flavor),
                flavor,
            )?,
            cfg.ffn.gate,
            cfg.ffn.seed,
        )?;
        cfg.validate()?;
        Ok(cfg)
    };

    let baseline_variant = flavor_baseline(flavor);
    let base_model = with_variant(baseline_variant)?;
    let base_params = crate::transformer::model_param_specs(&base_model)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum::<usize>();
    let (base_mean, base_median, base_min, base_batch, base_widened) =
        wall_clock(&base_model, train, &corpus, steps, warmup)?;

    let mut out = Vec::new();
    out.push(OverheadReport {
        variant: baseline_variant,
        params_total: base_params,
        params_delta_vs_baseline: 0,
        flops_per_token: analytic_flops(&base_model.ffn).total(),
        mean_step_ms: base_mean,
        median_step_ms: base_median,
        min_step_ms: base_min,
        peak_alloc_bytes: 0,
        ratio_vs_baseline: 1.0,
        batch_size_used: base_batch,
        widened: base_widened,
    });
    for &variant in variants {
        if variant == baseline_variant {
            continue;
        }
        let cfg = with_variant(variant)?;
        let params = crate::transformer::model_param_specs(&cfg)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum::<usize>();
        let (mean, med, min, batch, widened) = wall_clock(&cfg, train, &corpus, steps, warmup)?;
        out.push(OverheadReport {
            variant,
            params_total: params,
            params_delta_vs_baseline: params as i64 - base_params as i64,
            flops_per_token: analytic_flops(&cfg.ffn).total(),
            mean_step_ms: mean,
            median_step_ms: med,
            min_step_ms: min,
            peak_alloc_bytes: 0,
            ratio_vs_baseline: min / base_min,
            batch_size_used: batch,
            widened,
        });
    }
    Ok(out)
}

pub const REPORT_HEADER_NOTE: &str =
    "# units: MACs for projections/gates/mixing, 1 per scalar activation eval; \
     peak_alloc_bytes=0 means unavailable on this allocator";

pub fn overhead_csv(reports: &[OverheadReport]) -> String {
    let mut out = String::from(REPORT_HEADER_NOTE);
    out.push('\n');
    out.push_str(
        "variant,params_total,params_delta,flops_per_token,mean_step_ms,median_step_ms,\
         min_step_ms,peak_alloc_bytes,ratio_vs_baseline,batch_size,widened\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{:.4},{:.4},{:.4},{},{:.4},{},{}\n",
            r.variant.name(),
            r.params_total,
            r.params_delta_vs_baseline,
            r.flops_per_token,
            r.mean_step_ms,
            r.median_step_ms,
            r.min_step_ms,
            r.peak_alloc_bytes,
            r.ratio_vs_baseline,
            r.batch_size_used,
            r.widened
        ));
    }
    out
}

pub fn overhead_table(reports: &[OverheadReport]) -> String {
    let mut rows = vec![[
        "variant".to_string(),
        "params".to_string(),
        "delta".to_string(),
        "flops/token".to_string(),
        "mean ms".to_string(),
        "median ms".to_string(),
        "min ms".to_string(),
        "ratio".to_string(),
    ]];
    for r in reports {
        rows.push([
            r.variant.name().to_string(),
            r.params_total.to_string(),
            format!("{:+}", r.params_delta_vs_baseline),
            r.flops_per_token.to_string(),
            format!("{:.3}", r.mean_step_ms),
            format!("{:.3}", r.median_step_ms),
            format!("{:.3}", r.min_step_ms),
            format!("{:.3}", r.ratio_vs_baseline),
        ]);
    }
    let mut widths = [0usize; 8];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::from(REPORT_HEADER_NOTE);
    out.push('\n');
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:>w$}", w = w))
            .collect();
        out.push_str(&line.join("  "));
        out.push('\n');
    }
    out
}
