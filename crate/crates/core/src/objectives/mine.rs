//! Donsker–Varadhan mutual-information estimates from a critic network.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{mlp_forward, MlpParams, MlpVars};
use crate::scalar::Scalar;

use super::LossConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MIEstimate {
    pub value_nats: f64,
    pub n_joint: usize,
    pub n_marginal: usize,
    pub critic_id: String,
}

/// In-batch derangement used to draw product-of-marginals pairs: `i → i+1 mod n`.
pub fn shift_derangement(n: usize) -> Vec<usize> {
    (0..n).map(|i| (i + 1) % n).collect()
}

/// `mean(clamp(t_joint)) − log mean exp(clamp(t_marginal))`, differentiable in both inputs.
pub fn dv_bound<T: Scalar>(tape: &mut Tape<T>, t_joint: Var, t_marginal: Var, cfg: &LossConfig) -> Result<Var> {
    let (nj, nm) = (tape.value(t_joint).len(), tape.value(t_marginal).len());
    if nj < 2 || nm < 2 {
        return Err(Error::InsufficientSamples { joint: nj, marginal: nm });
    }
    let c = T::of(cfg.clamp_t);
    let tj = tape.clamp(t_joint, -c, c);
    let tm = tape.clamp(t_marginal, -c, c);
    let first = tape.mean(tj)?;
    let second = tape.log_mean_exp(tm)?;
    tape.sub(first, second)
}

/// Value-only DV estimate from precomputed critic outputs.
pub fn dv_mi_estimate<T: Scalar>(
    t_joint: &Tensor<T>,
    t_marginal: &Tensor<T>,
    cfg: &LossConfig,
    critic_id: &str,
) -> Result<MIEstimate> {
    let mut tape = Tape::new();
    let j = tape.constant(t_joint.clone());
    let m = tape.constant(t_marginal.clone());
    let b = dv_bound(&mut tape, j, m, cfg)?;
    Ok(MIEstimate {
        value_nats: tape.value(b).data()[0].to_f64_lossy(),
        n_joint: t_joint.len(),
        n_marginal: t_marginal.len(),
        critic_id: critic_id.to_string(),
    })
}

/// Critic outputs on joint rows `[a_i, b_i]` and deranged rows `[a_i, b_{i+1}]`.
#[derive(Clone, Copy, Debug)]
pub struct CriticScores {
    pub joint: Var,
    pub marginal: Var,
}

/// Scores a critic on paired samples; `b` parts are concatenated and permuted together.
pub fn critic_scores<T: Scalar>(tape: &mut Tape<T>, critic: &MlpVars, a: Var, b: &[Var]) -> Result<CriticScores> {
    let n = tape.value(a).rows();
    for &part in b {
        let m = tape.value(part).rows();
        if m != n {
            return Err(Error::Alignment { what: "critic argument rows".into(), left: n, right: m });
        }
    }
    let mut joint_parts = vec![a];
    joint_parts.extend_from_slice(b);
    let joint_in = tape.concat_cols(&joint_parts)?;
    let perm = shift_derangement(n);
    let mut marg_parts = vec![a];
    for &part in b {
        marg_parts.push(tape.permute_rows(part, &perm)?);
    }
    let marg_in = tape.concat_cols(&marg_parts)?;
    let joint = mlp_forward(tape, critic, joint_in)?;
    let marginal = mlp_forward(tape, critic, marg_in)?;
    Ok(CriticScores { joint, marginal })
}

/// DV bound of a critic on `(a, b)` samples, recorded on `tape`.
pub fn critic_dv<T: Scalar>(tape: &mut Tape<T>, critic: &MlpVars, a: Var, b: &[Var], cfg: &LossConfig) -> Result<Var> {
    let s = critic_scores(tape, critic, a, b)?;
    dv_bound(tape, s.joint, s.marginal, cfg)
}

/// The two critics of the chain-rule identity `I(Z;X|X') = I(Z;X,X') − I(Z;X')`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalCritics<T> {
    /// scores `[z, x, x']`
    pub with_x: MlpParams<T>,
    /// scores `[z, x']`
    pub cond_only: MlpParams<T>,
}

/// `Î(Z;X,X') − Î(Z;X')` with frozen critics, differentiable w.r.t. the samples.
pub fn conditional_mi_bound<T: Scalar>(
    tape: &mut Tape<T>,
    critics: &ConditionalCritics<T>,
    z: Var,
    x: Var,
    x_cond: Var,
    cfg: &LossConfig,
) -> Result<(Var, Var, Var)> {
    let (nz, nx, nc) = (tape.value(z).rows(), tape.value(x).rows(), tape.value(x_cond).rows());
    if nz != nx || nz != nc {
        return Err(Error::Alignment { what: "z / x / x_cond rows".into(), left: nz, right: if nz != nx { nx } else { nc } });
    }
    let with_x = critics.with_x.record(tape, false);
    let cond_only = critics.cond_only.record(tape, false);
    let full = critic_dv(tape, &with_x, z, &[x, x_cond], cfg)?;
    let partial = critic_dv(tape, &cond_only, z, &[x_cond], cfg)?;
    let diff = tape.sub(full, partial)?;
    Ok((diff, full, partial))
}

/// Value-only conditional MI estimate `Î(Z;X|X')`.
pub fn conditional_mi_estimate<T: Scalar>(
    z: &Tensor<T>,
    x: &Tensor<T>,
    x_cond: &Tensor<T>,
    critics: &ConditionalCritics<T>,
    cfg: &LossConfig,
) -> Result<MIEstimate> {
    let mut tape = Tape::new();
    let (zv, xv, cv) = (tape.constant(z.clone()), tape.constant(x.clone()), tape.constant(x_cond.clone()));
    let (diff, _, _) = conditional_mi_bound(&mut tape, critics, zv, xv, cv, cfg)?;
    Ok(MIEstimate {
        value_nats: tape.value(diff).data()[0].to_f64_lossy(),
        n_joint: z.rows(),
        n_marginal: z.rows(),
        critic_id: "chain_rule(z;x,x')-(z;x')".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::nn::{init_mlp, MlpSpec};

    #[test]
    fn constant_critic_gives_zero() {
        let c = Tensor::<f64>::filled(5, 1, 3.7);
        let e = dv_mi_estimate(&c, &Tensor::filled(4, 1, 3.7), &LossConfig::default(), "const").unwrap();
        assert_eq!(e.value_nats, 0.0);
        assert_eq!((e.n_joint, e.n_marginal), (5, 4));
    }

    #[test]
    fn hand_value() {
        let e = dv_mi_estimate(&Tensor::<f64>::column(&[1.0, 1.0]), &Tensor::column(&[0.0, 0.0]), &LossConfig::default(), "h").unwrap();
        assert_eq!(e.value_nats, 1.0);
    }

    #[test]
    fn too_few_samples() {
        let err = dv_mi_estimate(&Tensor::<f64>::column(&[1.0]), &Tensor::column(&[0.0, 0.0]), &LossConfig::default(), "x");
        assert!(matches!(err, Err(Error::InsufficientSamples { joint: 1, marginal: 2 })));
    }

    #[test]
    fn clamp_bounds_critic_outputs() {
        let cfg = LossConfig::default();
        let e = dv_mi_estimate(&Tensor::<f64>::column(&[1e6, 1e6]), &Tensor::column(&[1e6, -1e6]), &cfg, "c").unwrap();
        // 50 − log((e^50 + e^-50)/2)
        assert!((e.value_nats - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn derangement_has_no_fixed_points() {
        for n in 2..10 {
            let p = shift_derangement(n);
            assert!(p.iter().enumerate().all(|(i, &j)| i != j));
            let mut s = p.clone();
            s.sort();
            assert_eq!(s, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn dv_gradient_wrt_first_argument() {
        let spec = MlpSpec::new(vec![3, 6, 1]).unwrap();
        let critic: MlpParams<f64> = init_mlp(&spec, 2).unwrap();
        let z = Tensor::from_fn(5, 2, |i, j| ((i * 2 + j) as f64).sin());
        let x = Tensor::from_fn(5, 1, |i, _| (i as f64 * 0.9).cos());
        let f = |t: &mut Tape<f64>, zv| {
            let vars = critic.record(t, false);
            let xv = t.constant(x.clone());
            critic_dv(t, &vars, zv, &[xv], &LossConfig::default())
        };
        assert!(grad_check(f, &z, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn conditional_requires_alignment() {
        let spec = MlpSpec::new(vec![3, 1]).unwrap();
        let c = ConditionalCritics { with_x: init_mlp::<f64>(&spec, 1).unwrap(), cond_only: init_mlp(&MlpSpec::new(vec![2, 1]).unwrap(), 2).unwrap() };
        let err = conditional_mi_estimate(&Tensor::zeros(4, 1), &Tensor::zeros(3, 1), &Tensor::zeros(4, 1), &c, &LossConfig::default());
        assert!(matches!(err, Err(Error::Alignment { .. })));
    }
}
