//! Command-line entry point: train, ablate, witness, bench, grad-check.
//!
//! Every command reads the same config document (`--config`, overridable
//! with repeated `--set key=value`), writes into one run directory
//! (`MOA_OUT` env > `--out` flag > config `output.dir`), and is
//! deterministic given config + seed. Wall-clock notes go to `log.txt`;
//! all other artifacts are byte-stable.
//!
//! Exit codes: 0 success, 2 config/usage, 3 numeric failure, 4 violated
//! theorem assertion.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use moa::bench::{overhead_csv, overhead_reports, overhead_table};
use moa::checkpoint::save_model;
use moa::config::RunConfig;
use moa::error::Error;
use moa::expressivity::{jump_checks, jump_checks_csv, witness_csv, witness_suite, WitnessSuite};
use moa::ffn::{grad_check_all, FFNVariant, GateKind};
use moa::train::{run_ablation, train_model, AblationCell, Corpus};

#[derive(Parser)]
#[command(name = "moa", about = "Feedforward-variant training and analysis harness")]
struct Cli {
    /// config document; defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// override one config key, e.g. --set ffn.variant=bi-moa (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// override the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// worker cap for grid jobs
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// output directory (MOA_OUT env wins over this flag)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one model per configured seed; writes metrics and checkpoints
    Train,
    /// Gate ablation grid at matched toy scale
    Ablate,
    /// Expressivity separation experiments (exactness, floors, jumps)
    Witness {
        /// all | theorem1 | theorem2
        #[arg(default_value = "all")]
        suite: String,
    },
    /// Parameter / FLOP / wall-clock overhead comparison
    Bench {
        /// type1 | type2
        #[arg(long, default_value = "type2")]
        flavor: String,
        #[arg(long, default_value_t = 15)]
        steps: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
    },
    /// Finite-difference gradient audit of all ten FFN variants
    GradCheck,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Parse(_) | Error::Config(_) | Error::Range(_) | Error::Data(_) | Error::Io(_) => 2,
        Error::Numeric(_) | Error::Dim(_) | Error::Fit(_) => 3,
        Error::Contract(_) | Error::Geometry(_) => 4,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("config '{}' unreadable: {e}", path.display()))
            })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for item in &cli.overrides {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects KEY=VALUE, got '{item}'"))
        })?;
        cfg.set(key, value)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Ok(dir) = std::env::var("MOA_OUT") {
        cfg.output_dir = dir;
    } else if let Some(dir) = &cli.out {
        cfg.output_dir = dir.display().to_string();
    }
    Ok(cfg)
}

struct RunDir {
    root: PathBuf,
    log: std::fs::File,
}

impl RunDir {
    fn create(cfg: &RunConfig, command: &str) -> Result<RunDir, Error> {
        let root = Path::new(&cfg.output_dir).join(command);
        std::fs::create_dir_all(root.join("reports"))?;
        std::fs::create_dir_all(root.join("checkpoints"))?;
        std::fs::write(root.join("config.txt"), cfg.render())?;
        let log = std::fs::File::create(root.join("log.txt"))?;
        Ok(RunDir { root, log })
    }

    fn log(&mut self, msg: &str) {
        let _ = writeln!(self.log, "{msg}");
    }

    fn report(&self, name: &str, contents: &str) -> Result<(), Error> {
        std::fs::write(self.root.join("reports").join(name), contents)?;
        Ok(())
    }
}

fn cmd_train(cfg: &RunConfig) -> Result<(), Error> {
    let mut dir = RunDir::create(cfg, "train")?;
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    let corpus = Corpus::load(&train_cfg.corpus_path)?;
    for &seed in &train_cfg.seeds {
        let metrics_path = dir.root.join(format!("metrics-seed{seed}.jsonl"));
        let mut sink = std::fs::File::create(&metrics_path)?;
        let started = std::time::Instant::now();
        let (model, metrics) =
            train_model(&model_cfg, &train_cfg, seed, &corpus, Some(&mut sink))?;
        dir.log(&format!(
            "seed {seed}: {} steps in {:.1}s, terminal val loss {:.4}",
            train_cfg.total_steps,
            started.elapsed().as_secs_f64(),
            metrics.terminal_val_loss
        ));
        save_model(
            &dir.root.join(format!("checkpoints/final-seed{seed}.ckpt")),
            &model,
            &cfg.render(),
        )?;
    }
    // canonical single metrics file for the first seed, per output layout
    let first = train_cfg.seeds[0];
    std::fs::copy(
        dir.root.join(format!("metrics-seed{first}.jsonl")),
        dir.root.join("metrics.jsonl"),
    )?;
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig) -> Result<(), Error> {
    let mut dir = RunDir::create(cfg, "ablate")?;
    let train_cfg = cfg.train_config()?;
    let corpus = Corpus::load(&train_cfg.corpus_path)?;
    // Table-2-shaped grid: same-flavor fixed baseline plus the configured
    // variant under each gate, all at the configured peak lr
    let mut grid = Vec::new();
    let baseline_variant = match cfg.variant.flavor() {
        moa::activations::Flavor::TypeI => FFNVariant::BaselineI,
        moa::activations::Flavor::TypeII => FFNVariant::BaselineII,
    };
    let mut base_run = cfg.clone();
    base_run.variant = baseline_variant;
    grid.push(AblationCell {
        name: "baseline".into(),
        model_cfg: base_run.model_config()?,
        max_lr: cfg.max_lr,
        is_baseline: true,
    });
    for gate in [GateKind::Softmax, GateKind::Sigmoid, GateKind::Tanh] {
        let mut run = cfg.clone();
        run.gate = gate;
        grid.push(AblationCell {
            name: format!("{}-{}", cfg.variant.name(), gate.name()),
            model_cfg: run.model_config()?,
            max_lr: cfg.max_lr,
            is_baseline: false,
        });
    }
    let started = std::time::Instant::now();
    let rows = run_ablation(&grid, &train_cfg, &corpus)?;
    dir.log(&format!(
        "{} cells x {} seeds in {:.1}s",
        grid.len(),
        train_cfg.seeds.len(),
        started.elapsed().as_secs_f64()
    ));
    dir.report("ablation.csv", &moa::train::ablation_csv(&rows))?;
    Ok(())
}

fn cmd_witness(cfg: &RunConfig, suite: &str) -> Result<(), Error> {
    let suite = WitnessSuite::parse(suite)?;
    let mut dir = RunDir::create(cfg, "witness")?;
    let budget = cfg.fit_budget();
    let grid = cfg.report_grid(2)?;
    let started = std::time::Instant::now();
    let rows = witness_suite(suite, &budget, &grid)?;
    let jumps = jump_checks()?;
    dir.log(&format!(
        "{} witness rows + {} jump checks in {:.1}s",
        rows.len(),
        jumps.len(),
        started.elapsed().as_secs_f64()
    ));
    dir.report("witness_report.csv", &witness_csv(&rows))?;
    dir.report("jump_report.csv", &jump_checks_csv(&jumps))?;
    let mut violations: Vec<String> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} vs {} (width {}): total {:.3e}", r.family, r.target, r.width, r.total))
        .collect();
    violations.extend(
        jumps
            .iter()
            .filter(|j| !j.pass)
            .map(|j| format!("{}: {:.3e} > {:.1e}", j.name, j.metric, j.bound)),
    );
    if !violations.is_empty() {
        return Err(Error::Contract(format!(
            "violated bounds: {}",
            violations.join("; ")
        )));
    }
    Ok(())
}

fn cmd_bench(cfg: &RunConfig, flavor: &str, steps: usize, warmup: usize) -> Result<(), Error> {
    let mut dir = RunDir::create(cfg, "bench")?;
    let variants: Vec<FFNVariant> = match flavor {
        "type1" => vec![FFNVariant::BaselineI, FFNVariant::LaI, FFNVariant::MoaI],
        "type2" => vec![
            FFNVariant::BaselineII,
            FFNVariant::OneLa,
            FFNVariant::BiLa,
            FFNVariant::QdLa,
            FFNVariant::OneMoa,
            FFNVariant::BiMoa,
            FFNVariant::QdMoa,
        ],
        other => return Err(Error::Config(format!("unknown flavor '{other}'"))),
    };
    let model_cfg = {
        let mut run = cfg.clone();
        run.variant = variants[0];
        run.model_config()?
    };
    let train_cfg = cfg.train_config()?;
    let started = std::time::Instant::now();
    let reports = overhead_reports(&model_cfg, &train_cfg, &variants, steps, warmup, cfg.seed)?;
    dir.log(&format!(
        "{} variants timed in {:.1}s",
        reports.len(),
        started.elapsed().as_secs_f64()
    ));
    dir.report("overhead.csv", &overhead_csv(&reports))?;
    dir.report("overhead.txt", &overhead_table(&reports))?;
    println!("{}", overhead_table(&reports));
    Ok(())
}

fn cmd_grad_check(cfg: &RunConfig) -> Result<(), Error> {
    let dir = RunDir::create(cfg, "grad-check")?;
    let rows = grad_check_all(20, cfg.seed, 1e-5)?;
    let mut csv = String::from("variant,max_rel_err,pass\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{:.3e},{}\n",
            r.variant.name(),
            r.max_rel_err,
            r.pass
        ));
        println!("{:<10} max rel err {:.3e}  {}", r.variant.name(), r.max_rel_err, if r.pass { "pass" } else { "FAIL" });
    }
    dir.report("grad_check.csv", &csv)?;
    if rows.iter().any(|r| !r.pass) {
        return Err(Error::Numeric(
            "gradient check exceeded 1e-5 relative error".into(),
        ));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build_global()
    {
        eprintln!("error: worker pool: {e}");
        return ExitCode::from(2);
    }
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.cmd {
        Cmd::Train => cmd_train(&cfg),
        Cmd::Ablate => cmd_ablate(&cfg),
        Cmd::Witness { suite } => cmd_witness(&cfg, suite),
        Cmd::Bench {
            flavor,
            steps,
            warmup,
        } => cmd_bench(&cfg, flavor, *steps, *warmup),
        Cmd::GradCheck => cmd_grad_check(&cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
