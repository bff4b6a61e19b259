//! The `cibr` command line: argument parsing, config files, artifacts and
//! exit codes.
//!
//! Exit codes: 0 success, 1 gradient check failure, 2 invalid configuration
//! or input, 3 numerical divergence, 4 file or checkpoint I/O.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::de::DeserializeOwned;

use crate::certify::{registry, run_cases, GradCase, GRADCHECK_TOL};
use crate::error::{Error, Result};
use crate::eval::{export_embeddings, Direction};
use crate::nn::Checkpoint;
use crate::train::{
    estimate_mi, evaluate, open_source, run_training_with, step_csv, sweep_csv, sweep_lambda_with, write_json, Encoders,
    MiConfig, RunConfig, TrainMode,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_GRADCHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub const DEFAULT_LAMBDAS: [f64; 6] = [0.0, 0.1, 0.5, 1.0, 2.0, 5.0];

#[derive(Debug, Parser)]
#[command(name = "cibr", version, about = "Contrastive alignment with an information-bottleneck regularizer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train both encoders and write steps.csv, manifest.json, checkpoint.bin
    Train(RunArgs),
    /// Score a checkpoint on held-out data and write report.json
    Eval(EvalArgs),
    /// Train once per λ and write sweep.csv
    Sweep(SweepArgs),
    /// Fit a standalone critic and write mi.json
    EstimateMi(RunArgs),
    /// Certify every backward rule against finite differences
    Gradcheck,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config file
    #[arg(long)]
    pub config: PathBuf,
    /// output directory (overrides the config's `out`)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// run seed (overrides the config's `seed`)
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// checkpoint to score; defaults to `<out>/checkpoint.bin`
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub direction: Option<Direction>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// comma-separated λ values
    #[arg(long, allow_hyphen_values = true)]
    pub lambdas: Option<String>,
}

/// Stable exit code of each error kind.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } | Error::NumericalDivergence { .. } | Error::Evaluation(_) | Error::DegenerateEmbedding { .. } => {
            EXIT_DIVERGENCE
        }
        Error::Io { .. } | Error::Checkpoint(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run(argv: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::EstimateMi(a) => cmd_estimate_mi(&a),
        Command::Gradcheck => return gradcheck_report(&registry(), &mut std::io::stdout()),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// A config document plus the output directory it names, if any.
struct ConfigFile<C> {
    config: C,
    out: Option<PathBuf>,
}

fn read_config<C: DeserializeOwned>(path: &Path) -> Result<ConfigFile<C>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    let out = match table.remove("out") {
        None => None,
        Some(toml::Value::String(s)) => Some(PathBuf::from(s)),
        Some(other) => return Err(Error::Config(format!("{}: `out` must be a string, got {other}", path.display()))),
    };
    let config = C::deserialize(table).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    Ok(ConfigFile { config, out })
}

fn out_dir(flag: &Option<PathBuf>, file: Option<PathBuf>) -> Result<PathBuf> {
    let dir = flag.clone().or(file).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    Ok(dir)
}

fn load_run_config(a: &RunArgs) -> Result<(RunConfig, PathBuf)> {
    let file = read_config::<RunConfig>(&a.config)?;
    let mut config = file.config;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok((config, out_dir(&a.out, file.out)?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn cmd_train(a: &RunArgs) -> Result<()> {
    let (config, out) = load_run_config(a)?;
    info!("training {} steps, lambda {}, seed {}", config.steps, config.lambda, config.seed);
    let every = (config.steps / 10).max(1);
    let run = run_training_with::<f64>(&config, TrainMode::Cibr, |r| {
        if r.step % every == 0 {
            info!("step {} clip {:.4} reg {:.4} I(zv;zt) {:.4}", r.step, r.clip_loss, r.regularizer_v + r.regularizer_t, r.i_zv_zt);
        }
    })?;
    write_text(&out.join("steps.csv"), &step_csv(&run.records))?;
    write_json(&out.join("manifest.json"), &run.manifest)?;
    run.checkpoint().save(&out.join("checkpoint.bin"))?;
    let m = &run.manifest.final_metrics;
    println!("train: clip {:.4}, reg {:.4}, I(zv;zt) {:.4}; wrote {}", m.clip_loss, m.reg_v + m.reg_t, m.i_zv_zt, out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (mut config, out) = load_run_config(&a.run)?;
    if let Some(d) = a.direction {
        config.eval.direction = d;
    }
    let path = a.checkpoint.clone().unwrap_or_else(|| out.join("checkpoint.bin"));
    let ckpt = Checkpoint::<f64>::load(&path)?;
    let get = |name: &str| ckpt.get(name).cloned().ok_or_else(|| Error::Checkpoint(format!("{} has no `{name}` entry", path.display())));
    let enc = Encoders { v: get("enc_v")?, t: get("enc_t")? };
    let source = open_source(&config)?;
    for (side, net, data_dim) in [("v", &enc.v, source.dim_v()), ("t", &enc.t, source.dim_t())] {
        let want = net.spec.input_dim();
        if want != data_dim {
            return Err(Error::Config(format!("checkpoint enc_{side} expects input dim {want}, data has dim_{side} {data_dim}")));
        }
    }
    let report = evaluate(&enc, &source, &config)?;
    write_json(&out.join("report.json"), &report)?;
    let held = source.held_out(config.seed, "eval", config.eval.n_eval)?;
    let (zv, zt) = enc.embed(&held)?;
    export_embeddings(&zv, held.labels.as_deref(), &out.join("embeddings_v.csv"))?;
    export_embeddings(&zt, held.labels.as_deref(), &out.join("embeddings_t.csv"))?;
    let r1 = report.retrieval.recall_at.get(&1).copied().unwrap_or(f64::NAN);
    match &report.classification {
        Some(c) => println!("eval ({}): R@1 {r1:.4}, accuracy {:.4}", report.retrieval.direction, c.accuracy),
        None => println!("eval ({}): R@1 {r1:.4}", report.retrieval.direction),
    }
    Ok(())
}

pub fn parse_lambdas(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if parts.is_empty() {
        return Err(Error::Config("--lambdas needs at least one value".into()));
    }
    parts.iter().map(|p| p.parse::<f64>().map_err(|_| Error::Config(format!("--lambdas: cannot parse {p:?}")))).collect()
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let lambdas = match &a.lambdas {
        Some(t) => parse_lambdas(t)?,
        None => DEFAULT_LAMBDAS.to_vec(),
    };
    let (config, out) = load_run_config(&a.run)?;
    let mut manifests = Vec::new();
    let rows = sweep_lambda_with::<f64>(&config, &lambdas, |lambda, run| {
        info!("lambda {lambda} done");
        manifests.push((lambda, run.manifest.clone()));
    })?;
    for (lambda, m) in &manifests {
        write_json(&out.join(format!("manifest_lambda_{lambda}.json")), m)?;
    }
    write_text(&out.join("sweep.csv"), &sweep_csv(&rows))?;
    println!("sweep: {} runs; wrote {}", rows.len(), out.join("sweep.csv").display());
    Ok(())
}

fn cmd_estimate_mi(a: &RunArgs) -> Result<()> {
    let file = read_config::<MiConfig>(&a.config)?;
    let mut cfg = file.config;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let out = out_dir(&a.out, file.out)?;
    let report = estimate_mi::<f64>(&cfg)?;
    write_json(&out.join("mi.json"), &report)?;
    match report.oracle_nats {
        Some(o) => println!("estimate-mi: {:.4} nats (closed form {o:.4})", report.estimate_nats),
        None => println!("estimate-mi: {:.4} nats", report.estimate_nats),
    }
    Ok(())
}

/// Runs `cases`, writes one line per case to `w`, and returns the exit code.
pub fn gradcheck_report(cases: &[GradCase], w: &mut impl Write) -> i32 {
    let outcomes = run_cases(cases);
    let mut failed = Vec::new();
    for o in &outcomes {
        let line = match &o.result {
            Ok(e) => format!("{:<28} max_rel_err {e:.3e} {}", o.name, if o.passed() { "ok" } else { "FAIL" }),
            Err(msg) => format!("{:<28} error: {msg} FAIL", o.name),
        };
        let _ = writeln!(w, "{line}");
        if !o.passed() {
            failed.push(o.name.as_str());
        }
    }
    if failed.is_empty() {
        let _ = writeln!(w, "gradcheck: all {} cases below {GRADCHECK_TOL:e}", outcomes.len());
        EXIT_OK
    } else {
        let _ = writeln!(w, "gradcheck: failing: {}", failed.join(", "));
        EXIT_GRADCHECK
    }
}
