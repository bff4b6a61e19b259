use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::data::{Batch, DataSource};
use crate::error::{Error, Result};
use crate::eval::{build_prototypes, paired_retrieval, prototype_classify, EvalReport};
use crate::nn::{adam_step, AdamState, Checkpoint, MlpParams, MlpSpec};
use crate::objectives::{
    cibr_total_loss, cosine_similarity_matrix, info_nce_loss, CIBDiagnostics, CibrCritics, CibrInputs, ConditionalCritics,
    LossConfig,
};
use crate::rng::Stream;
use crate::scalar::Scalar;

use super::config::RunConfig;
use super::critic::{critic_update, CriticState};

pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Image (`v`) and text (`t`) encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoders<T> {
    pub v: MlpParams<T>,
    pub t: MlpParams<T>,
}

impl<T: Scalar> Encoders<T> {
    pub fn embed(&self, batch: &Batch) -> Result<(Tensor<T>, Tensor<T>)> {
        Ok((self.v.forward_value(&batch.xv.cast())?, self.t.forward_value(&batch.xt.cast())?))
    }
}

/// Adam states of both encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOptim<T> {
    pub v: AdamState<T>,
    pub t: AdamState<T>,
}

/// The five trained critics of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticSet<T> {
    pub v_with_x: CriticState<T>,
    pub v_cond: CriticState<T>,
    pub t_with_x: CriticState<T>,
    pub t_cond: CriticState<T>,
    pub cross: CriticState<T>,
}

pub const CHECKPOINT_NAMES: [&str; 7] = ["enc_v", "enc_t", "critic_v_x", "critic_v_c", "critic_t_x", "critic_t_c", "critic_cross"];

impl<T: Scalar> CriticSet<T> {
    /// Frozen view used by the encoder update.
    pub fn frozen(&self) -> CibrCritics<T> {
        CibrCritics {
            v: ConditionalCritics { with_x: self.v_with_x.params.clone(), cond_only: self.v_cond.params.clone() },
            t: ConditionalCritics { with_x: self.t_with_x.params.clone(), cond_only: self.t_cond.params.clone() },
            cross: self.cross.params.clone(),
        }
    }

    fn each_mut(&mut self) -> [&mut CriticState<T>; 5] {
        [&mut self.v_with_x, &mut self.v_cond, &mut self.t_with_x, &mut self.t_cond, &mut self.cross]
    }
}

/// Values recorded by one encoder update, before the parameters move.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderStep {
    pub clip_loss: f64,
    pub reg_v: f64,
    pub reg_t: f64,
    pub total_loss: f64,
    pub diagnostics: CIBDiagnostics,
}

/// One descent step on the regularized loss with `critics` frozen. With
/// `critics = None` only the contrastive loss is built and the
/// regularizer terms are reported as zero.
#[allow(clippy::too_many_arguments)]
pub fn encoder_update<T: Scalar>(
    enc: &mut Encoders<T>,
    optim: &mut EncoderOptim<T>,
    critics: Option<&CibrCritics<T>>,
    xv: &Tensor<T>,
    xt: &Tensor<T>,
    lambda: f64,
    beta: f64,
    cfg: &LossConfig,
    step: usize,
) -> Result<EncoderStep> {
    let mut tape = Tape::new();
    let pv = enc.v.record(&mut tape, true);
    let pt = enc.t.record(&mut tape, true);
    let (xv, xt) = (tape.constant(xv.clone()), tape.constant(xt.clone()));
    let zv = crate::nn::mlp_forward(&mut tape, &pv, xv)?;
    let zt = crate::nn::mlp_forward(&mut tape, &pt, xt)?;
    let (total, out) = match critics {
        Some(c) => {
            let (terms, diag) = cibr_total_loss(&mut tape, CibrInputs { zv, zt, xv, xt }, c, lambda, beta, cfg)?;
            let val = |v| tape.value(v).data()[0].to_f64_lossy();
            let out = EncoderStep {
                clip_loss: val(terms.clip),
                reg_v: val(terms.reg_v),
                reg_t: val(terms.reg_t),
                total_loss: val(terms.total),
                diagnostics: diag,
            };
            (terms.total, out)
        }
        None => {
            let s = cosine_similarity_matrix(&mut tape, zv, zt)?;
            let clip = info_nce_loss(&mut tape, s, cfg)?;
            let v = tape.value(clip).data()[0].to_f64_lossy();
            let out = EncoderStep { clip_loss: v, reg_v: 0.0, reg_t: 0.0, total_loss: v, diagnostics: CIBDiagnostics::new(beta, 0.0, 0.0, 0.0) };
            (clip, out)
        }
    };
    if !out.total_loss.is_finite() {
        return Err(Error::Divergence { step, detail: format!("total loss is {}", out.total_loss) });
    }
    let grads = tape.backward(total)?;
    let pick = |vars: &crate::nn::MlpVars| -> Vec<Tensor<T>> {
        vars.all().iter().map(|&v| grads.get(v).expect("encoder params are trainable").clone()).collect()
    };
    let (gv, gt) = (pick(&pv), pick(&pt));
    let tag = |side: &'static str| move |e: Error| Error::Divergence { step, detail: format!("encoder {side}: {e}") };
    // both gradients are checked before either encoder moves
    if let Some(i) = gv.iter().position(|g| !g.is_finite()) {
        return Err(tag("v")(Error::NumericalDivergence { param: MlpParams::<T>::tensor_name(i) }));
    }
    if let Some(i) = gt.iter().position(|g| !g.is_finite()) {
        return Err(tag("t")(Error::NumericalDivergence { param: MlpParams::<T>::tensor_name(i) }));
    }
    adam_step(&mut enc.v, &gv.iter().collect::<Vec<_>>(), &mut optim.v).map_err(tag("v"))?;
    adam_step(&mut enc.t, &gt.iter().collect::<Vec<_>>(), &mut optim.t).map_err(tag("t"))?;
    Ok(out)
}

/// One row of the step log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based
    pub step: usize,
    pub clip_loss: f64,
    pub regularizer_v: f64,
    pub regularizer_t: f64,
    pub total_loss: f64,
    pub i_zv_zt: f64,
    pub wall_ms: f64,
}

/// Trailing-window means of the step log plus the held-out evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub window: usize,
    pub clip_loss: f64,
    pub reg_v: f64,
    pub reg_t: f64,
    pub total_loss: f64,
    pub i_zv_zt: f64,
    pub cib_value: f64,
    pub eval: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub library_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub mode: TrainMode,
    pub steps_completed: usize,
    pub final_metrics: FinalMetrics,
}

/// `Cibr` trains critics and the regularized loss; `ClipOnly` never builds
/// a critic and optimizes the contrastive loss alone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Cibr,
    ClipOnly,
}

#[derive(Clone, Debug)]
pub struct RunOutput<T> {
    pub encoders: Encoders<T>,
    pub critics: Option<CriticSet<T>>,
    pub records: Vec<StepRecord>,
    pub manifest: RunManifest,
}

impl<T: Scalar> RunOutput<T> {
    pub fn checkpoint(&self) -> Checkpoint<T> {
        let mut entries = vec![("enc_v".to_string(), self.encoders.v.clone()), ("enc_t".to_string(), self.encoders.t.clone())];
        if let Some(c) = &self.critics {
            let params = [&c.v_with_x, &c.v_cond, &c.t_with_x, &c.t_cond, &c.cross].map(|s| s.params.clone());
            entries.extend(CHECKPOINT_NAMES[2..].iter().map(|n| n.to_string()).zip(params));
        }
        Checkpoint { entries }
    }
}

fn mlp<T: Scalar>(input: usize, hidden: &[usize], output: usize, seed: u64, label: &str) -> Result<MlpParams<T>> {
    MlpParams::init(&MlpSpec::with_hidden(input, hidden, output)?, seed, &Stream::new(seed, format!("init/{label}")))
}

/// Freshly initialized encoders for `config` over inputs of the given widths.
pub fn init_encoders<T: Scalar>(config: &RunConfig, dim_v: usize, dim_t: usize) -> Result<Encoders<T>> {
    let e = &config.encoder;
    Ok(Encoders {
        v: mlp(dim_v, &e.hidden, e.embed_dim, config.seed, "enc_v")?,
        t: mlp(dim_t, &e.hidden, e.embed_dim, config.seed, "enc_t")?,
    })
}

fn init_critics<T: Scalar>(config: &RunConfig, dim_v: usize, dim_t: usize) -> Result<CriticSet<T>> {
    let d = config.encoder.embed_dim;
    let state = |input: usize, label: &str| -> Result<CriticState<T>> {
        let c = if label == "critic_cross" { &config.diag_critic } else { &config.critic };
        CriticState::new(mlp(input, &c.hidden, 1, config.seed, label)?, c.adam(), config.ema_decay)
    };
    Ok(CriticSet {
        v_with_x: state(d + dim_v + dim_t, "critic_v_x")?,
        v_cond: state(d + dim_t, "critic_v_c")?,
        t_with_x: state(d + dim_t + dim_v, "critic_t_x")?,
        t_cond: state(d + dim_v, "critic_t_c")?,
        cross: state(2 * d, "critic_cross")?,
    })
}

/// Row-normalized copy, as the critics see embeddings.
pub fn unit_rows<T: Scalar>(z: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = tape.constant(z.clone());
    let u = tape.row_l2_normalize(v)?;
    Ok(tape.value(u).clone())
}

/// `k` updates of every critic on one batch with fixed embeddings.
#[allow(clippy::too_many_arguments)]
fn critic_round<T: Scalar>(
    critics: &mut CriticSet<T>,
    zv: &Tensor<T>,
    zt: &Tensor<T>,
    xv: &Tensor<T>,
    xt: &Tensor<T>,
    k: usize,
    cfg: &LossConfig,
    step: usize,
) -> Result<()> {
    for _ in 0..k {
        let inputs: [(&Tensor<T>, Vec<&Tensor<T>>); 5] =
            [(zv, vec![xv, xt]), (zv, vec![xt]), (zt, vec![xt, xv]), (zt, vec![xv]), (zv, vec![zt])];
        for (state, (a, b)) in critics.each_mut().into_iter().zip(inputs) {
            critic_update(state, a, &b, cfg, step)?;
        }
    }
    Ok(())
}

/// Held-out retrieval, and prototype classification when labels exist.
pub fn evaluate<T: Scalar>(enc: &Encoders<T>, source: &DataSource, config: &RunConfig) -> Result<EvalReport> {
    let e = &config.eval;
    let batch = source.held_out(config.seed, "eval", e.n_eval)?;
    let (zv, zt) = enc.embed(&batch)?;
    let retrieval = paired_retrieval(&zv, &zt, &e.ks, e.direction)?;
    let classification = match (source.n_classes(), &batch.labels) {
        (Some(c), Some(labels)) => {
            let proto_batch = source.held_out(config.seed, "proto", e.n_proto)?;
            let (_, zt_p) = enc.embed(&proto_batch)?;
            let protos = build_prototypes(&zt_p, proto_batch.labels.as_deref().unwrap_or_default(), c)?;
            Some(prototype_classify(&zv, &protos, labels)?)
        }
        _ => None,
    };
    Ok(EvalReport { retrieval, classification })
}

fn final_metrics(records: &[StepRecord], window: usize, beta: f64, eval: EvalReport) -> FinalMetrics {
    let tail = &records[records.len().saturating_sub(window)..];
    let n = tail.len() as f64;
    let mean = |f: fn(&StepRecord) -> f64| tail.iter().map(f).sum::<f64>() / n;
    let (reg_v, reg_t, i) = (mean(|r| r.regularizer_v), mean(|r| r.regularizer_t), mean(|r| r.i_zv_zt));
    FinalMetrics {
        window: tail.len(),
        clip_loss: mean(|r| r.clip_loss),
        reg_v,
        reg_t,
        total_loss: mean(|r| r.total_loss),
        i_zv_zt: i,
        cib_value: CIBDiagnostics::new(beta, i, reg_v, reg_t).cib_value,
        eval,
    }
}

/// The run's data with held-out rows reserved, as both training and later
/// evaluation of a checkpoint see it.
pub fn open_source(config: &RunConfig) -> Result<DataSource> {
    let mut source = config.data.open()?;
    if let DataSource::Fixed { data, .. } = &source {
        let n = config.eval.n_eval.min(data.len() / 5);
        source.reserve_holdout(n)?;
    }
    Ok(source)
}

pub fn run_training<T: Scalar>(config: &RunConfig) -> Result<RunOutput<T>> {
    run_training_with(config, TrainMode::Cibr, |_| {})
}

/// The full loop; `on_step` observes every record as it is produced.
pub fn run_training_with<T: Scalar>(
    config: &RunConfig,
    mode: TrainMode,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<RunOutput<T>> {
    config.validate()?;
    let source = open_source(config)?;
    let (dv, dt) = (source.dim_v(), source.dim_t());
    let mut enc = init_encoders::<T>(config, dv, dt)?;
    let mut optim = EncoderOptim { v: AdamState::for_mlp(&enc.v, config.encoder_adam())?, t: AdamState::for_mlp(&enc.t, config.encoder_adam())? };
    let mut critics = match mode {
        TrainMode::Cibr => Some(init_critics::<T>(config, dv, dt)?),
        TrainMode::ClipOnly => None,
    };
    let cfg = config.loss();
    let mut records: Vec<StepRecord> = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        let started = Instant::now();
        let result = (|| -> Result<EncoderStep> {
            let batch = source.train_batch(config.seed, (step - 1) as u64, config.batch_size)?;
            let (xv, xt) = (batch.xv.cast::<T>(), batch.xt.cast::<T>());
            let frozen = match critics.as_mut() {
                Some(c) => {
                    let (zv, zt) = (unit_rows(&enc.v.forward_value(&xv)?)?, unit_rows(&enc.t.forward_value(&xt)?)?);
                    critic_round(c, &zv, &zt, &xv, &xt, config.critic_steps, &cfg, step)?;
                    Some(c.frozen())
                }
                None => None,
            };
            encoder_update(&mut enc, &mut optim, frozen.as_ref(), &xv, &xt, config.lambda, config.beta, &cfg, step)
        })();
        let out = result.map_err(|e| match e {
            Error::Divergence { step, detail } => Error::Divergence {
                step,
                detail: match records.last() {
                    Some(r) => format!("{detail}; last finite record {r:?}"),
                    None => format!("{detail}; no finite record yet"),
                },
            },
            other => other,
        })?;
        let rec = StepRecord {
            step,
            clip_loss: out.clip_loss,
            regularizer_v: out.reg_v,
            regularizer_t: out.reg_t,
            total_loss: out.total_loss,
            i_zv_zt: out.diagnostics.i_zv_zt,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        on_step(&rec);
        records.push(rec);
    }
    let eval = evaluate(&enc, &source, config)?;
    let manifest = RunManifest {
        library_version: LIBRARY_VERSION.to_string(),
        seed: config.seed,
        config_hash: config.hash(),
        config: config.clone(),
        mode,
        steps_completed: records.len(),
        final_metrics: final_metrics(&records, config.metrics_window, config.beta, eval),
    };
    Ok(RunOutput { encoders: enc, critics, records, manifest })
}
