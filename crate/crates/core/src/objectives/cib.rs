use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::MlpParams;
use crate::scalar::Scalar;

use super::contrastive::{cosine_similarity_matrix, info_nce_loss};
use super::mine::{conditional_mi_bound, critic_dv, ConditionalCritics};
use super::LossConfig;

/// Reported information quantities of one batch, plus the CIB value they imply.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CIBDiagnostics {
    pub beta: f64,
    pub i_zv_zt: f64,
    pub i_zv_xv_given_xt: f64,
    pub i_zt_xt_given_xv: f64,
    pub cib_value: f64,
}

impl CIBDiagnostics {
    pub fn new(beta: f64, i_zv_zt: f64, i_zv_xv_given_xt: f64, i_zt_xt_given_xv: f64) -> Self {
        let mut d = CIBDiagnostics { beta, i_zv_zt, i_zv_xv_given_xt, i_zt_xt_given_xv, cib_value: 0.0 };
        d.cib_value = cib_objective(&d);
        d
    }
}

/// `I(X;Z) − β·I(Z;Y)`.
pub fn ib_objective(i_x_z: f64, i_z_y: f64, beta: f64) -> f64 {
    i_x_z - beta * i_z_y
}

/// `I(Xv,Xt;Zv,Zt) − β·I(Zv;Zt)`, with the joint term approximated as
/// `I(Zv;Xv|Xt) + I(Zt;Xt|Xv) + I(Zv;Zt)`. Reported only, never optimized.
pub fn cib_objective(d: &CIBDiagnostics) -> f64 {
    let joint = d.i_zv_xv_given_xt + d.i_zt_xt_given_xv + d.i_zv_zt;
    joint - d.beta * d.i_zv_zt
}

/// Every critic the regularized objective consults.
#[derive(Clone, Debug, PartialEq)]
pub struct CibrCritics<T> {
    /// `I(Zv;Xv|Xt)`: critics over `[zv, xv, xt]` and `[zv, xt]`
    pub v: ConditionalCritics<T>,
    /// `I(Zt;Xt|Xv)`: critics over `[zt, xt, xv]` and `[zt, xv]`
    pub t: ConditionalCritics<T>,
    /// diagnostic `I(Zv;Zt)` critic over `[zv, zt]`
    pub cross: MlpParams<T>,
}

/// Batch inputs of the regularized loss, all row-aligned.
#[derive(Clone, Copy, Debug)]
pub struct CibrInputs {
    pub zv: Var,
    pub zt: Var,
    pub xv: Var,
    pub xt: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct CibrTerms {
    pub total: Var,
    pub clip: Var,
    pub reg_v: Var,
    pub reg_t: Var,
}

/// `L_CLIP + λ·(Î(Zv;Xv|Xt) + Î(Zt;Xt|Xv))` with frozen critics, which are
/// scored on row-normalized embeddings.
///
/// With `λ = 0` the returned total is the contrastive loss node itself, so
/// gradients are exactly those of the unregularized loss.
pub fn cibr_total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    inputs: CibrInputs,
    critics: &CibrCritics<T>,
    lambda: f64,
    beta: f64,
    cfg: &LossConfig,
) -> Result<(CibrTerms, CIBDiagnostics)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let CibrInputs { zv, zt, xv, xt } = inputs;
    let s = cosine_similarity_matrix(tape, zv, zt)?;
    let clip = info_nce_loss(tape, s, cfg)?;
    // critics read the unit-norm embeddings the similarity is computed on
    let (uv, ut) = (tape.row_l2_normalize(zv)?, tape.row_l2_normalize(zt)?);
    let (reg_v, _, _) = conditional_mi_bound(tape, &critics.v, uv, xv, xt, cfg)?;
    let (reg_t, _, _) = conditional_mi_bound(tape, &critics.t, ut, xt, xv, cfg)?;
    let total = if lambda == 0.0 {
        clip
    } else {
        let reg = tape.add(reg_v, reg_t)?;
        let weighted = tape.scale(reg, T::of(lambda));
        tape.add(clip, weighted)?
    };
    let cross = critics.cross.record(tape, false);
    // the diagnostic critic only reads detached copies of the embeddings
    let (zv_d, zt_d) = (tape.constant(tape.value(uv).clone()), tape.constant(tape.value(ut).clone()));
    let i_cross = critic_dv(tape, &cross, zv_d, &[zt_d], cfg)?;
    let val = |v: Var| tape.value(v).data()[0].to_f64_lossy();
    let diag = CIBDiagnostics::new(beta, val(i_cross), val(reg_v), val(reg_t));
    Ok((CibrTerms { total, clip, reg_v, reg_t }, diag))
}
