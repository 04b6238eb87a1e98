//! End-to-end checks of the `moa` binary: exit codes, run-directory
//! layout, overrides, and byte-stable artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};

static NEXT: AtomicUsize = AtomicUsize::new(0);

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "moa-cli-{}-{}-{}",
        std::process::id(),
        tag,
        NEXT.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moa"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("MOA_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_corpus_is_a_config_error() {
    let dir = scratch_dir("missing-corpus");
    let o = run(
        &dir,
        &["train", "--set", "train.corpus_path=/nonexistent/corpus.bin"],
    );
    assert_eq!(o.status.code(), Some(2), "stderr: {}", stderr(&o));
    assert!(
        stderr(&o).contains("/nonexistent/corpus.bin"),
        "error must name the missing path: {}",
        stderr(&o)
    );
}

#[test]
fn malformed_config_reports_line_and_key() {
    let dir = scratch_dir("bad-config");
    let cfg = dir.join("bad.cfg");
    std::fs::write(
        &cfg,
        "schema_version=1\nmodel.d_model=32\nffn.wibble=7\n",
    )
    .unwrap();
    let o = run(&dir, &["--config", cfg.to_str().unwrap(), "grad-check"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("ffn.wibble"), "unknown key named: {err}");
    assert!(err.contains('3'), "line number reported: {err}");
}

#[test]
fn set_overrides_are_echoed_into_the_run_config() {
    let dir = scratch_dir("override-echo");
    let o = run(
        &dir,
        &["--set", "ffn.variant=qd-moa", "--set", "model.d_model=16", "grad-check"],
    );
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(&o));
    let echo = std::fs::read_to_string(dir.join("grad-check/config.txt")).unwrap();
    assert!(echo.contains("ffn.variant = qd-moa"));
    assert!(echo.contains("model.d_model = 16"));
    assert!(echo.contains("schema_version = 1"));
}

#[test]
fn grad_check_writes_report_and_succeeds() {
    let dir = scratch_dir("grad-check");
    let o = run(&dir, &["grad-check"]);
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(&o));
    let csv =
        std::fs::read_to_string(dir.join("grad-check/reports/grad_check.csv")).unwrap();
    assert!(csv.starts_with("variant,max_rel_err,pass"));
    // header + ten variants
    assert_eq!(csv.lines().count(), 11);
    assert!(!csv.contains("false"));
}

#[test]
fn train_emits_metrics_and_checkpoints() {
    let dir = scratch_dir("train");
    let corpus = dir.join("corpus.bin");
    // varied but deterministic bytes; content does not matter here
    let bytes: Vec<u8> = (0..20_000u32).map(|i| (i * 31 % 251) as u8).collect();
    std::fs::write(&corpus, bytes).unwrap();
    let o = run(
        &dir,
        &[
            "train",
            "--set",
            &format!("train.corpus_path={}", corpus.display()),
            "--set",
            "model.d_model=16",
            "--set",
            "model.n_head=2",
            "--set",
            "model.seq_len=16",
            "--set",
            "train.batch_size=2",
            "--set",
            "train.total_steps=12",
            "--set",
            "train.warmup_steps=2",
            "--set",
            "train.eval_interval=4",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(&o));
    let metrics = std::fs::read_to_string(dir.join("train/metrics.jsonl")).unwrap();
    let mut train_rows = 0;
    let mut eval_rows = 0;
    for line in metrics.lines() {
        assert!(line.starts_with('{') && line.ends_with('}'), "jsonl row: {line}");
        for field in ["\"step\":", "\"kind\":", "\"loss\":", "\"lr\":"] {
            assert!(line.contains(field), "{field} missing in {line}");
        }
        if line.contains("\"kind\":\"eval\"") {
            eval_rows += 1;
        } else {
            assert!(line.contains("\"kind\":\"train\""));
            train_rows += 1;
        }
    }
    assert_eq!(train_rows, 12);
    assert!(eval_rows >= 3, "expected eval rows at the eval interval");
    assert!(dir.join("train/checkpoints/final-seed0.ckpt").exists());
}

const TINY_WITNESS: &[&str] = &[
    "--set",
    "grid.restarts=1",
    "--set",
    "grid.fit_steps=40",
    "--set",
    "grid.lm_iterations=25",
    "--set",
    "grid.fit_points_per_axis=9",
    "--set",
    "grid.report_points_per_axis=41",
];

#[test]
fn witness_artifacts_are_byte_stable_across_runs() {
    let read = |dir: &Path, name: &str| {
        std::fs::read(dir.join("witness/reports").join(name)).unwrap()
    };
    let mut args = vec!["witness", "theorem2"];
    args.extend_from_slice(TINY_WITNESS);

    let a = scratch_dir("witness-a");
    let oa = run(&a, &args);
    assert_eq!(oa.status.code(), Some(0), "stderr: {}", stderr(&oa));
    let b = scratch_dir("witness-b");
    let ob = run(&b, &args);
    assert_eq!(ob.status.code(), Some(0), "stderr: {}", stderr(&ob));

    assert_eq!(
        read(&a, "witness_report.csv"),
        read(&b, "witness_report.csv"),
        "witness report must be byte-identical across runs"
    );
    assert_eq!(read(&a, "jump_report.csv"), read(&b, "jump_report.csv"));
}

#[test]
fn env_output_override_wins_over_flag() {
    let flag_dir = scratch_dir("env-flag");
    let env_dir = scratch_dir("env-env");
    let o = Command::new(env!("CARGO_BIN_EXE_moa"))
        .args(["grad-check", "--out"])
        .arg(&flag_dir)
        .env("MOA_OUT", &env_dir)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(&o));
    assert!(env_dir.join("grad-check/config.txt").exists());
    assert!(!flag_dir.join("grad-check/config.txt").exists());
}
