//! Alternating critic/encoder training, λ sweeps and standalone MI estimation.

mod config;
mod critic;
mod mi;
mod run;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use config::{CriticNetConfig, EncoderConfig, EvalConfig, RunConfig};
pub use critic::{critic_update, CriticState};
pub use mi::{critic_value, estimate_mi, fit_critic, CriticFit, MiConfig, MiReport};
pub use run::{
    encoder_update, evaluate, init_encoders, open_source, unit_rows, run_training, run_training_with, CriticSet, EncoderOptim, EncoderStep,
    Encoders, FinalMetrics, RunManifest, RunOutput, StepRecord, TrainMode, CHECKPOINT_NAMES, LIBRARY_VERSION,
};

pub const STEP_CSV_HEADER: &str = "step,clip_loss,reg_v,reg_t,total_loss,i_zv_zt,wall_ms";
pub const SWEEP_CSV_HEADER: &str = "lambda,recall_at_1,accuracy,reg_v,reg_t,i_zv_zt";

/// Step log as CSV text; floats use the shortest exact representation.
pub fn step_csv(records: &[StepRecord]) -> String {
    let mut out = format!("{STEP_CSV_HEADER}\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.3}",
            r.step, r.clip_loss, r.regularizer_v, r.regularizer_t, r.total_loss, r.i_zv_zt, r.wall_ms
        );
    }
    out
}

pub fn write_step_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    std::fs::write(path, step_csv(records)).map_err(|e| Error::io(path, e))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One λ of a sweep, evaluated on held-out data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub recall_at_1: f64,
    pub accuracy: Option<f64>,
    pub reg_v: f64,
    pub reg_t: f64,
    pub i_zv_zt: f64,
}

fn tag_lambda(e: Error, lambda: f64) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("lambda {lambda}: {m}")),
        Error::Divergence { step, detail } => Error::Divergence { step, detail: format!("lambda {lambda}: {detail}") },
        other => other,
    }
}

/// Independent runs of `base` at each λ (same seed), rows sorted by λ.
pub fn sweep_lambda<T: Scalar>(base: &RunConfig, lambdas: &[f64]) -> Result<Vec<SweepRow>> {
    sweep_lambda_with::<T>(base, lambdas, |_, _| {})
}

/// As [`sweep_lambda`], reporting each finished run to `on_run`.
pub fn sweep_lambda_with<T: Scalar>(
    base: &RunConfig,
    lambdas: &[f64],
    mut on_run: impl FnMut(f64, &RunOutput<T>),
) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::Config("sweep needs at least one lambda".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::Config(format!("sweep lambdas must be >= 0, got {bad}")));
    }
    let mut order: Vec<f64> = lambdas.to_vec();
    order.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(order.len());
    for lambda in order {
        let cfg = RunConfig { lambda, ..base.clone() };
        let out = run_training::<T>(&cfg).map_err(|e| tag_lambda(e, lambda))?;
        on_run(lambda, &out);
        let m = &out.manifest.final_metrics;
        rows.push(SweepRow {
            lambda,
            recall_at_1: m.eval.retrieval.recall_at.get(&1).copied().unwrap_or(f64::NAN),
            accuracy: m.eval.classification.as_ref().map(|c| c.accuracy),
            reg_v: m.reg_v,
            reg_t: m.reg_t,
            i_zv_zt: m.i_zv_zt,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        let acc = r.accuracy.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{},{}", r.lambda, r.recall_at_1, acc, r.reg_v, r.reg_t, r.i_zv_zt);
    }
    out
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    std::fs::write(path, sweep_csv(rows)).map_err(|e| Error::io(path, e))
}
