use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ClusteredPairSpec, DataSpec, GaussianPairSpec};
use crate::error::{Error, Result};
use crate::eval::Direction;
use crate::nn::AdamConfig;
use crate::objectives::LossConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { hidden: vec![64], embed_dim: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticNetConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
}

impl CriticNetConfig {
    /// Small, slowly adapting critics for the conditional-MI penalty.
    pub fn regularizer() -> Self {
        CriticNetConfig { hidden: vec![16], lr: 1e-4 }
    }

    /// Larger critic for the reported `Î(Zv;Zt)`.
    pub fn diagnostic() -> Self {
        CriticNetConfig { hidden: vec![64, 64], lr: 1e-3 }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.lr)
    }
}

impl Default for CriticNetConfig {
    fn default() -> Self {
        Self::regularizer()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// held-out pairs scored for retrieval and classification
    pub n_eval: usize,
    /// held-out pairs whose text embeddings form the class prototypes
    pub n_proto: usize,
    pub ks: Vec<usize>,
    pub direction: Direction,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_eval: 1000, n_proto: 1000, ks: vec![1, 5, 10], direction: Direction::T2v }
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSpec,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    #[serde(default = "defaults::tau")]
    pub tau: f64,
    #[serde(default = "defaults::yes")]
    pub symmetric: bool,
    #[serde(default = "defaults::clamp_t")]
    pub clamp_t: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::steps")]
    pub steps: usize,
    /// critic updates per encoder update
    #[serde(default = "defaults::critic_steps")]
    pub critic_steps: usize,
    #[serde(default = "defaults::lr")]
    pub lr_encoder: f64,
    #[serde(default = "defaults::ema_decay")]
    pub ema_decay: f64,
    /// trailing step records averaged into the final metrics
    #[serde(default = "defaults::window")]
    pub metrics_window: usize,
    #[serde(default)]
    pub encoder: EncoderConfig,
    /// the four critics of the two conditional-MI penalties
    #[serde(default)]
    pub critic: CriticNetConfig,
    /// the `Î(Zv;Zt)` diagnostic critic
    #[serde(default = "CriticNetConfig::diagnostic")]
    pub diag_critic: CriticNetConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

mod defaults {
    pub fn lambda() -> f64 {
        0.5
    }
    pub fn beta() -> f64 {
        1.0
    }
    pub fn tau() -> f64 {
        0.1
    }
    pub fn yes() -> bool {
        true
    }
    pub fn clamp_t() -> f64 {
        50.0
    }
    pub fn batch_size() -> usize {
        128
    }
    pub fn steps() -> usize {
        2000
    }
    pub fn critic_steps() -> usize {
        5
    }
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn ema_decay() -> f64 {
        0.99
    }
    pub fn window() -> usize {
        200
    }
}

impl RunConfig {
    /// A run on `data` with every other field at its default.
    pub fn with_data(data: DataSpec) -> Self {
        RunConfig {
            seed: 0,
            data,
            lambda: defaults::lambda(),
            beta: defaults::beta(),
            tau: defaults::tau(),
            symmetric: true,
            clamp_t: defaults::clamp_t(),
            batch_size: defaults::batch_size(),
            steps: defaults::steps(),
            critic_steps: defaults::critic_steps(),
            lr_encoder: defaults::lr(),
            ema_decay: defaults::ema_decay(),
            metrics_window: defaults::window(),
            encoder: EncoderConfig::default(),
            critic: CriticNetConfig::regularizer(),
            diag_critic: CriticNetConfig::diagnostic(),
            eval: EvalConfig::default(),
        }
    }

    /// Two shared coordinates at correlation 0.9, each modality padded with
    /// four private nuisance coordinates.
    pub fn default_gaussian(seed: u64) -> Self {
        let spec = GaussianPairSpec { dim_v_noise: 4, dim_t_noise: 4, ..GaussianPairSpec::correlated(2, 0.9, 0, seed) };
        RunConfig { seed, ..Self::with_data(DataSpec::Gaussian(spec)) }
    }

    /// Eight classes seen through noisy projections with low-rank
    /// modality-private nuisance, trained on a finite pool of 160 pairs per
    /// class and scored on 4000 fresh held-out pairs. The cluster geometry is
    /// fixed (data seed 0); `seed` varies the pool, initialization and batches.
    pub fn default_clustered(seed: u64) -> Self {
        let spec = ClusteredPairSpec {
            n_classes: 8,
            dim_v: 16,
            dim_t: 16,
            class_separation: 3.0,
            noise_scale: 0.5,
            n_per_class: 160,
            seed: 0,
            latent_dim: None,
            nuisance_dim: 4,
            nuisance_scale: 2.0,
            style_dim: 0,
            style_scale: 0.0,
            style_noise: 0.0,
        };
        let eval = EvalConfig { n_eval: 4000, ..EvalConfig::default() };
        RunConfig { seed, eval, ..Self::with_data(DataSpec::Clustered(spec)) }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig { tau: self.tau, symmetric: self.symmetric, clamp_t: self.clamp_t }
    }

    pub fn encoder_adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.lr_encoder)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if self.steps == 0 || self.critic_steps == 0 {
            return Err(Error::Config("steps and critic_steps must be >= 1".into()));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::Config(format!("ema_decay must lie in (0, 1), got {}", self.ema_decay)));
        }
        if self.metrics_window == 0 {
            return Err(Error::Config("metrics_window must be >= 1".into()));
        }
        let widths = [&self.encoder.hidden, &self.critic.hidden, &self.diag_critic.hidden];
        if self.encoder.embed_dim == 0 || widths.iter().any(|h| h.contains(&0)) {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        if self.eval.n_eval == 0 || self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::Config("eval needs n_eval >= 1 and a non-empty list of k >= 1".into()));
        }
        self.loss().validate()?;
        self.encoder_adam().validate()?;
        self.critic.adam().validate()?;
        self.diag_critic.adam().validate()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 3
        [data]
        kind = "gaussian"
        dim_shared = 1
        rho = 0.5
        n_samples = 0
        seed = 3
    "#;

    #[test]
    fn defaults_fill_in() {
        let c: RunConfig = toml::from_str(MINIMAL).unwrap();
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.critic_steps, 5);
        assert_eq!(c.eval.ks, vec![1, 5, 10]);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_key_rejected() {
        let err = toml::from_str::<RunConfig>(&format!("lamda = 0.5\n{MINIMAL}")).unwrap_err();
        assert!(err.to_string().contains("lamda"), "{err}");
    }

    #[test]
    fn validation() {
        let base: RunConfig = toml::from_str(MINIMAL).unwrap();
        for bad in [
            RunConfig { lambda: -0.1, ..base.clone() },
            RunConfig { ema_decay: 1.0, ..base.clone() },
            RunConfig { batch_size: 1, ..base.clone() },
            RunConfig { steps: 0, ..base.clone() },
            RunConfig { tau: 0.0, ..base.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default_gaussian(1);
        assert_eq!(a.hash(), RunConfig::default_gaussian(1).hash());
        assert_ne!(a.hash(), RunConfig::default_gaussian(2).hash());
        assert_eq!(a.hash().len(), 64);
    }
}
