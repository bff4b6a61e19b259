use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::data::{gaussian_mi, DataSource, DataSpec};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, MlpParams, MlpSpec};
use crate::objectives::{critic_scores, dv_mi_estimate, LossConfig};
use crate::rng::Stream;
use crate::scalar::Scalar;

use super::critic::{critic_update, CriticState};

/// Budget and architecture for fitting one DV critic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticFit {
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub ema_decay: f64,
    pub clamp_t: f64,
}

impl Default for CriticFit {
    fn default() -> Self {
        CriticFit { seed: 0, hidden: vec![64, 64], steps: 2000, batch_size: 256, lr: 1e-3, ema_decay: 0.99, clamp_t: 50.0 }
    }
}

impl CriticFit {
    pub fn loss(&self) -> LossConfig {
        LossConfig { clamp_t: self.clamp_t, ..LossConfig::default() }
    }
}

/// Trains a fresh critic over `input_dim` columns; `sample(step, n)` returns
/// the `(a, b parts)` of each batch.
pub fn fit_critic<T: Scalar>(
    fit: &CriticFit,
    input_dim: usize,
    label: &str,
    mut sample: impl FnMut(u64, usize) -> Result<(Tensor<T>, Vec<Tensor<T>>)>,
) -> Result<CriticState<T>> {
    if fit.batch_size < 2 || fit.steps == 0 {
        return Err(Error::Config("critic fit needs batch_size >= 2 and steps >= 1".into()));
    }
    let spec = MlpSpec::with_hidden(input_dim, &fit.hidden, 1)?;
    let params = MlpParams::init(&spec, fit.seed, &Stream::new(fit.seed, format!("init/{label}")))?;
    let mut state = CriticState::new(params, AdamConfig::with_lr(fit.lr), fit.ema_decay)?;
    let cfg = fit.loss();
    for step in 0..fit.steps {
        let (a, b) = sample(step as u64, fit.batch_size)?;
        let parts: Vec<&Tensor<T>> = b.iter().collect();
        critic_update(&mut state, &a, &parts, &cfg, step + 1)?;
    }
    Ok(state)
}

/// DV value of a frozen critic on `(a, b parts)`.
pub fn critic_value<T: Scalar>(critic: &MlpParams<T>, a: &Tensor<T>, b: &[&Tensor<T>], cfg: &LossConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = critic.record(&mut tape, false);
    let av = tape.constant(a.clone());
    let bv: Vec<_> = b.iter().map(|t| tape.constant((*t).clone())).collect();
    let s = critic_scores(&mut tape, &vars, av, &bv)?;
    let (j, m) = (tape.value(s.joint).clone(), tape.value(s.marginal).clone());
    Ok(dv_mi_estimate(&j, &m, cfg, "critic")?.value_nats)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSpec,
    #[serde(default = "defaults::hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "defaults::steps")]
    pub steps: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::ema_decay")]
    pub ema_decay: f64,
    #[serde(default = "defaults::clamp_t")]
    pub clamp_t: f64,
    /// held-out pairs the final estimate is computed on
    #[serde(default = "defaults::n_eval")]
    pub n_eval: usize,
}

mod defaults {
    pub fn hidden() -> Vec<usize> {
        vec![64, 64]
    }
    pub fn steps() -> usize {
        2000
    }
    pub fn batch_size() -> usize {
        256
    }
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn ema_decay() -> f64 {
        0.99
    }
    pub fn clamp_t() -> f64 {
        50.0
    }
    pub fn n_eval() -> usize {
        4096
    }
}

impl MiConfig {
    pub fn new(data: DataSpec, seed: u64) -> Self {
        MiConfig {
            seed,
            data,
            hidden: defaults::hidden(),
            steps: defaults::steps(),
            batch_size: defaults::batch_size(),
            lr: defaults::lr(),
            ema_decay: defaults::ema_decay(),
            clamp_t: defaults::clamp_t(),
            n_eval: defaults::n_eval(),
        }
    }

    pub fn fit(&self) -> CriticFit {
        CriticFit {
            seed: self.seed,
            hidden: self.hidden.clone(),
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            ema_decay: self.ema_decay,
            clamp_t: self.clamp_t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiReport {
    pub estimate_nats: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_nats: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_error: Option<f64>,
    pub n_eval: usize,
    pub steps: usize,
}

/// Fits a critic on `(xv, xt)` pairs and reports its DV estimate on held-out
/// pairs, next to the closed form for Gaussian data.
pub fn estimate_mi<T: Scalar>(cfg: &MiConfig) -> Result<MiReport> {
    if cfg.n_eval < 2 {
        return Err(Error::Config("n_eval must be >= 2".into()));
    }
    let mut source = cfg.data.open()?;
    if let DataSource::Fixed { data, .. } = &source {
        let n = cfg.n_eval.min(data.len() / 5);
        source.reserve_holdout(n)?;
    }
    let width = source.dim_v() + source.dim_t();
    let state = fit_critic::<T>(&cfg.fit(), width, "mi_critic", |step, n| {
        let b = source.train_batch(cfg.seed, step, n)?;
        Ok((b.xv.cast(), vec![b.xt.cast()]))
    })?;
    let held = source.held_out(cfg.seed, "eval", cfg.n_eval)?;
    let estimate = critic_value(&state.params, &held.xv.cast::<T>(), &[&held.xt.cast::<T>()], &cfg.fit().loss())?;
    let oracle = match &cfg.data {
        DataSpec::Gaussian(spec) => Some(gaussian_mi(spec)?),
        _ => None,
    };
    Ok(MiReport {
        estimate_nats: estimate,
        oracle_nats: oracle,
        abs_error: oracle.map(|o| (estimate - o).abs()),
        n_eval: held.xv.rows(),
        steps: cfg.steps,
    })
}
