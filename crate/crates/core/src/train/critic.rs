use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, MlpParams};
use crate::objectives::{critic_scores, LossConfig};
use crate::scalar::Scalar;

/// A critic together with its optimizer and partition-term average.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticState<T> {
    pub params: MlpParams<T>,
    pub adam: AdamState<T>,
    /// moving average of `mean(exp(T_marginal))`; `None` before the first update
    pub ema: Option<f64>,
    pub ema_decay: f64,
}

impl<T: Scalar> CriticState<T> {
    pub fn new(params: MlpParams<T>, adam: AdamConfig, ema_decay: f64) -> Result<Self> {
        if !(ema_decay > 0.0 && ema_decay < 1.0) {
            return Err(Error::Config(format!("ema_decay must lie in (0, 1), got {ema_decay}")));
        }
        Ok(CriticState { adam: AdamState::for_mlp(&params, adam)?, params, ema: None, ema_decay })
    }
}

/// One ascent step on the DV bound of `(a, b)` and returns the batch DV value
/// before the step.
///
/// The gradient of `log mean exp(T_m)` is taken as `∇ mean exp(T_m) / ema`,
/// with the moving average advanced by this batch first.
pub fn critic_update<T: Scalar>(
    state: &mut CriticState<T>,
    a: &Tensor<T>,
    b: &[&Tensor<T>],
    cfg: &LossConfig,
    step: usize,
) -> Result<f64> {
    let n = a.rows();
    if n < 2 {
        return Err(Error::InsufficientSamples { joint: n, marginal: n });
    }
    let mut tape = Tape::new();
    let vars = state.params.record(&mut tape, true);
    let av = tape.constant(a.clone());
    let bv: Vec<_> = b.iter().map(|t| tape.constant((*t).clone())).collect();
    let scores = critic_scores(&mut tape, &vars, av, &bv)?;
    let c = T::of(cfg.clamp_t);
    let tj = tape.clamp(scores.joint, -c, c);
    let tm = tape.clamp(scores.marginal, -c, c);
    let mean_j = tape.mean(tj)?;
    let lme = tape.log_mean_exp(tm)?;
    let e = tape.exp(tm);
    let mean_e = tape.mean(e)?;

    let scalar = |v| tape.value(v).data()[0].to_f64_lossy();
    let dv = scalar(mean_j) - scalar(lme);
    let batch_e = scalar(mean_e);
    if !dv.is_finite() || !(batch_e > 0.0 && batch_e.is_finite()) {
        return Err(Error::Divergence { step, detail: format!("critic DV value {dv}, partition mean {batch_e}") });
    }
    let ema = match state.ema {
        None => batch_e,
        Some(m) => state.ema_decay * m + (1.0 - state.ema_decay) * batch_e,
    };
    let scaled = tape.scale(mean_e, T::of(1.0 / ema));
    let loss = tape.sub(scaled, mean_j)?;
    let grads = tape.backward(loss)?;
    let g: Vec<&Tensor<T>> = vars.all().iter().map(|&v| grads.get(v).expect("critic params are trainable")).collect();
    adam_step(&mut state.params, &g, &mut state.adam).map_err(|e| Error::Divergence { step, detail: e.to_string() })?;
    state.ema = Some(ema);
    Ok(dv)
}
