use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::LossConfig;

/// `S[i][j] = ⟨ẑv_i, ẑt_j⟩` over row-normalized embeddings.
pub fn cosine_similarity_matrix<T: Scalar>(tape: &mut Tape<T>, zv: Var, zt: Var) -> Result<Var> {
    let (sv, st) = (tape.value(zv).shape(), tape.value(zt).shape());
    if sv.1 != st.1 {
        return Err(Error::dim("cosine_similarity_matrix", sv, st));
    }
    let nv = tape.row_l2_normalize(zv)?;
    let nt = tape.row_l2_normalize(zt)?;
    let ntt = tape.transpose(nt);
    let s = tape.matmul(nv, ntt)?;
    // rounding can leave |s| a few ulps above 1
    Ok(tape.clamp(s, -T::one(), T::one()))
}

/// Mean over rows of `logsumexp(row) − diagonal entry` for a logits matrix.
fn row_cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var) -> Result<Var> {
    let lse = tape.row_log_sum_exp(logits)?;
    let diag = tape.diagonal(logits)?;
    let per_row = tape.sub(lse, diag)?;
    tape.mean(per_row)
}

/// InfoNCE / CLIP contrastive loss over a square similarity matrix.
///
/// Rows are the image→text direction. With `cfg.symmetric` the loss is the
/// average of the row and column (text→image) directions.
pub fn info_nce_loss<T: Scalar>(tape: &mut Tape<T>, s: Var, cfg: &LossConfig) -> Result<Var> {
    let shape = tape.value(s).shape();
    if shape.0 != shape.1 {
        return Err(Error::dim("info_nce_loss", shape, (shape.1, shape.0)));
    }
    if shape.0 == 0 {
        return Err(Error::EmptyInput("info_nce_loss needs N >= 1"));
    }
    let logits = tape.scale(s, T::one() / T::of(cfg.tau));
    let v2t = row_cross_entropy(tape, logits)?;
    if !cfg.symmetric {
        return Ok(v2t);
    }
    let lt = tape.transpose(logits);
    let t2v = row_cross_entropy(tape, lt)?;
    let both = tape.add(v2t, t2v)?;
    Ok(tape.scale(both, T::of(0.5)))
}
