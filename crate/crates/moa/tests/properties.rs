//! Property-based invariants for the config grammar, the schedule, and
//! the analytic cost model.

use proptest::prelude::*;

use moa::bench::analytic_flops;
use moa::config::RunConfig;
use moa::ffn::{param_count, FFNConfig, FFNVariant, GateKind};
use moa::train::{lr_at, Schedule, TrainConfig};

fn any_variant() -> impl Strategy<Value = FFNVariant> {
    prop_oneof![
        Just(FFNVariant::BaselineI),
        Just(FFNVariant::LaI),
        Just(FFNVariant::MoaI),
        Just(FFNVariant::BaselineII),
        Just(FFNVariant::OneLa),
        Just(FFNVariant::BiLa),
        Just(FFNVariant::QdLa),
        Just(FFNVariant::OneMoa),
        Just(FFNVariant::BiMoa),
        Just(FFNVariant::QdMoa),
    ]
}

fn any_gate() -> impl Strategy<Value = GateKind> {
    prop_oneof![
        Just(GateKind::Softmax),
        Just(GateKind::Sigmoid),
        Just(GateKind::Tanh),
    ]
}

fn ffn_config(d: usize, variant: FFNVariant, gate: GateKind, hidden: usize) -> FFNConfig {
    let dict = moa::activations::parse_dictionary(
        moa::config::default_dictionary_code(variant.flavor()),
        variant.flavor(),
    )
    .unwrap();
    let mut cfg = FFNConfig::new(d, variant, dict, gate, 0).unwrap();
    if hidden > 0 {
        cfg.hidden = hidden;
    }
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// parse(render(cfg)) == cfg for configs reachable through `set`
    #[test]
    fn config_roundtrips(
        d_model in prop::sample::select(vec![8usize, 16, 32, 64, 128]),
        n_layer in 1usize..4,
        seed in any::<u64>(),
        variant in any_variant(),
        gate in any_gate(),
        max_lr in 1e-5f64..1e-1,
        total_steps in 10usize..100_000,
    ) {
        let mut cfg = RunConfig::default();
        cfg.set("model.d_model", &d_model.to_string()).unwrap();
        cfg.set("model.n_layer", &n_layer.to_string()).unwrap();
        cfg.set("seed", &seed.to_string()).unwrap();
        cfg.set("ffn.variant", variant.name()).unwrap();
        cfg.set("ffn.gate", gate.name()).unwrap();
        cfg.set("train.max_lr", &format!("{max_lr:e}")).unwrap();
        cfg.set("train.total_steps", &total_steps.to_string()).unwrap();
        let reparsed = RunConfig::parse(&cfg.render()).unwrap();
        prop_assert_eq!(&reparsed, &cfg);
        // render is a fixed point
        prop_assert_eq!(reparsed.render(), cfg.render());
    }

    /// the learning rate is always within [0, max_lr] and hits max_lr at
    /// the end of warmup
    #[test]
    fn lr_stays_in_range(
        max_lr in 1e-6f64..1.0,
        warmup in 1usize..200,
        extra in 1usize..2000,
        schedule in prop_oneof![Just(Schedule::Cos), Just(Schedule::Wsd)],
        probe in 0usize..2200,
    ) {
        let mut cfg = TrainConfig::defaults(warmup + extra, "unused");
        cfg.max_lr = max_lr;
        cfg.warmup_steps = warmup;
        cfg.schedule = schedule;
        let step = probe.min(cfg.total_steps);
        let lr = lr_at(&cfg, step).unwrap();
        // the upper edge may overshoot by a rounding ulp where the ramp
        // meets the decay, hence the relative slack
        let slack = max_lr * 1e-12;
        prop_assert!(lr >= 0.0 && lr <= max_lr + slack, "lr {lr} at step {step}");
        let at_peak = lr_at(&cfg, warmup).unwrap();
        prop_assert!((at_peak - max_lr).abs() <= slack, "peak lr {at_peak}");
    }

    /// gate parameters scale linearly with width and are zero exactly for
    /// the variants without gates
    #[test]
    fn gate_params_match_structure(
        d in prop::sample::select(vec![8usize, 16, 64, 256]),
        variant in any_variant(),
        gate in any_gate(),
    ) {
        let cfg = ffn_config(d, variant, gate, 0);
        let pc = param_count(&cfg);
        if variant.is_moa() {
            prop_assert!(pc.gate_params > 0);
            prop_assert_eq!(pc.gate_params % d, 0);
            let doubled = param_count(&ffn_config(2 * d, variant, gate, 0));
            prop_assert_eq!(doubled.gate_params, 2 * pc.gate_params);
        } else {
            prop_assert_eq!(pc.gate_params, 0);
        }
    }

    /// analytic FLOPs are monotone in both width and hidden size
    #[test]
    fn flops_monotone(
        d in prop::sample::select(vec![8usize, 16, 64]),
        hidden in prop::sample::select(vec![32usize, 128, 512]),
        variant in any_variant(),
        gate in any_gate(),
    ) {
        let base = analytic_flops(&ffn_config(d, variant, gate, hidden)).total();
        let wider = analytic_flops(&ffn_config(2 * d, variant, gate, hidden)).total();
        let deeper = analytic_flops(&ffn_config(d, variant, gate, 2 * hidden)).total();
        prop_assert!(wider > base);
        prop_assert!(deeper > base);
    }
}
