//! Contrastive, mutual-information and bottleneck objectives.

mod cib;
mod contrastive;
mod mine;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cib::{cib_objective, cibr_total_loss, ib_objective, CIBDiagnostics, CibrCritics, CibrInputs, CibrTerms};
pub use contrastive::{cosine_similarity_matrix, info_nce_loss};
pub use mine::{
    conditional_mi_bound, conditional_mi_estimate, critic_dv, critic_scores, dv_bound, dv_mi_estimate,
    shift_derangement, ConditionalCritics, CriticScores, MIEstimate,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// softmax temperature of the contrastive loss
    pub tau: f64,
    /// average the image→text and text→image directions
    pub symmetric: bool,
    /// critic outputs are clamped to `[-clamp_t, clamp_t]` inside the DV bound
    pub clamp_t: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { tau: 0.1, symmetric: true, clamp_t: 50.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.clamp_t > 0.0) {
            return Err(Error::Config(format!("clamp_t must be > 0, got {}", self.clamp_t)));
        }
        Ok(())
    }
}
