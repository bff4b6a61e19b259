//! Finite-difference certification of every differentiable operation.
//!
//! Each registered case perturbs every input of one operation (or one
//! composite objective) and reports the worst relative gradient error.

use crate::autodiff::{grad_check, Tape, Tensor, Var};
use crate::error::Result;
use crate::nn::{init_mlp, mlp_forward, MlpParams, MlpSpec};
use crate::objectives::{
    cibr_total_loss, conditional_mi_bound, cosine_similarity_matrix, critic_dv, dv_bound, info_nce_loss, shift_derangement,
    CibrCritics, CibrInputs, ConditionalCritics, LossConfig,
};
use crate::rng::{standard_normal, Stream};

/// Largest relative error a certified gradient may show.
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Central-difference step.
pub const GRADCHECK_EPS: f64 = 1e-6;

/// A named check returning the worst relative error over its inputs.
pub struct GradCase {
    pub name: String,
    pub check: Box<dyn Fn() -> Result<f64>>,
}

impl GradCase {
    pub fn new(name: impl Into<String>, check: impl Fn() -> Result<f64> + 'static) -> Self {
        GradCase { name: name.into(), check: Box::new(check) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseOutcome {
    pub name: String,
    /// worst relative error, or the error message if the check itself failed
    pub result: std::result::Result<f64, String>,
}

impl CaseOutcome {
    pub fn passed(&self) -> bool {
        matches!(self.result, Ok(e) if e < GRADCHECK_TOL)
    }
}

pub fn run_cases(cases: &[GradCase]) -> Vec<CaseOutcome> {
    cases.iter().map(|c| CaseOutcome { name: c.name.clone(), result: (c.check)().map_err(|e| e.to_string()) }).collect()
}

fn normal(rows: usize, cols: usize, label: &str) -> Tensor<f64> {
    let mut rng = Stream::new(7, format!("certify/{label}")).rng();
    Tensor::from_fn(rows, cols, |_, _| standard_normal(&mut rng))
}

/// Values bounded away from zero, so kinks and domain edges stay out of reach
/// of the finite-difference step.
fn off_zero(rows: usize, cols: usize, label: &str) -> Tensor<f64> {
    normal(rows, cols, label).map(|x| if x >= 0.0 { x + 0.2 } else { x - 0.2 })
}

/// `sum(out ∘ W)` for a fixed random `W`, turning any output into a scalar
/// whose gradient exercises every output entry.
fn project(tape: &mut Tape<f64>, out: Var, label: &str) -> Result<Var> {
    let (r, c) = tape.value(out).shape();
    let w = tape.constant(normal(r, c, &format!("{label}/proj")));
    let m = tape.mul(out, w)?;
    Ok(tape.sum(m))
}

fn check(f: impl Fn(&mut Tape<f64>, Var) -> Result<Var>, x: &Tensor<f64>) -> Result<f64> {
    grad_check(f, x, GRADCHECK_EPS)
}

/// Checks a binary op against each operand in turn.
fn binary(
    name: &'static str,
    a: Tensor<f64>,
    b: Tensor<f64>,
    op: fn(&mut Tape<f64>, Var, Var) -> Result<Var>,
) -> GradCase {
    GradCase::new(name, move || {
        let (bc, ac) = (b.clone(), a.clone());
        let left = check(
            |t, x| {
                let y = t.constant(bc.clone());
                let o = op(t, x, y)?;
                project(t, o, name)
            },
            &a,
        )?;
        let right = check(
            |t, y| {
                let x = t.constant(ac.clone());
                let o = op(t, x, y)?;
                project(t, o, name)
            },
            &b,
        )?;
        Ok(left.max(right))
    })
}

fn unary(name: &'static str, x: Tensor<f64>, op: impl Fn(&mut Tape<f64>, Var) -> Result<Var> + 'static) -> GradCase {
    GradCase::new(name, move || {
        check(
            |t, v| {
                let o = op(t, v)?;
                project(t, o, name)
            },
            &x,
        )
    })
}

fn small_mlp(dims: Vec<usize>, seed: u64) -> MlpParams<f64> {
    init_mlp(&MlpSpec::new(dims).expect("static dims"), seed).expect("static dims")
}

/// Frozen critics for embeddings of width `dz` and inputs of widths `dv`, `dt`.
fn critics(dz: usize, dv: usize, dt: usize) -> CibrCritics<f64> {
    let mk = |d: usize, s: u64| small_mlp(vec![d, 6, 1], s);
    CibrCritics {
        v: ConditionalCritics { with_x: mk(dz + dv + dt, 11), cond_only: mk(dz + dt, 12) },
        t: ConditionalCritics { with_x: mk(dz + dt + dv, 13), cond_only: mk(dz + dv, 14) },
        cross: mk(2 * dz, 15),
    }
}

/// The full suite: one case per tape primitive, then the composite
/// objectives built from them.
pub fn registry() -> Vec<GradCase> {
    let cfg = LossConfig::default();
    let mut cases = vec![
        binary("matmul", normal(3, 4, "mm/a"), normal(4, 2, "mm/b"), |t, a, b| t.matmul(a, b)),
        binary("add", normal(3, 2, "add/a"), normal(3, 2, "add/b"), |t, a, b| t.add(a, b)),
        binary("sub", normal(3, 2, "sub/a"), normal(3, 2, "sub/b"), |t, a, b| t.sub(a, b)),
        binary("mul", normal(3, 2, "mul/a"), normal(3, 2, "mul/b"), |t, a, b| t.mul(a, b)),
        binary("add_row_bias", normal(4, 3, "bias/a"), normal(1, 3, "bias/b"), |t, a, b| t.add_row_bias(a, b)),
        binary("concat_cols", normal(3, 2, "cat/a"), normal(3, 3, "cat/b"), |t, a, b| t.concat_cols(&[a, b])),
        unary("exp", normal(3, 3, "exp"), |t, a| Ok(t.exp(a))),
        unary("log", normal(3, 3, "log").map(|x| x.abs() + 0.5), |t, a| t.log(a)),
        unary("relu", off_zero(4, 3, "relu"), |t, a| Ok(t.relu(a))),
        unary("scale", normal(2, 3, "scale"), |t, a| Ok(t.scale(a, -1.7))),
        unary("neg", normal(2, 3, "neg"), |t, a| Ok(t.neg(a))),
        unary("transpose", normal(2, 3, "transpose"), |t, a| Ok(t.transpose(a))),
        unary("row_l2_normalize", normal(4, 3, "rownorm"), |t, a| t.row_l2_normalize(a)),
        unary("log_mean_exp", normal(5, 1, "lme"), |t, a| t.log_mean_exp(a)),
        unary("row_log_sum_exp", normal(4, 3, "rlse"), |t, a| t.row_log_sum_exp(a)),
        unary("diagonal", normal(3, 3, "diag"), |t, a| t.diagonal(a)),
        unary("sum", normal(3, 2, "sum"), |t, a| Ok(t.sum(a))),
        unary("mean", normal(3, 2, "mean"), |t, a| t.mean(a)),
        unary("permute_rows", normal(4, 2, "perm"), |t, a| t.permute_rows(a, &[2, 0, 3, 1])),
        // interior entries move, entries beyond ±1 are clipped and must get zero gradient
        unary("clamp", off_zero(4, 3, "clamp").map(|x| if x.abs() > 0.9 && x.abs() < 1.1 { x * 2.0 } else { x }), |t, a| {
            Ok(t.clamp(a, -1.0, 1.0))
        }),
    ];

    let mlp = small_mlp(vec![3, 5, 4, 2], 21);
    let x_in = normal(4, 3, "mlp/x");
    {
        let (mlp, x_in) = (mlp.clone(), x_in.clone());
        cases.push(GradCase::new("mlp_forward", move || {
            let input = check(
                |t, x| {
                    let vars = mlp.record(t, false);
                    let o = mlp_forward(t, &vars, x)?;
                    project(t, o, "mlp")
                },
                &x_in,
            )?;
            // every weight matrix and bias in turn
            let mut worst = input;
            for k in 0..mlp.tensors().len() {
                let target = mlp.tensors()[k].clone();
                let e = check(
                    |t, p| {
                        let mut vars = mlp.record(t, false);
                        let slot = if k % 2 == 0 { &mut vars.weights[k / 2] } else { &mut vars.biases[k / 2] };
                        *slot = p;
                        let x = t.constant(x_in.clone());
                        let o = mlp_forward(t, &vars, x)?;
                        project(t, o, "mlp")
                    },
                    &target,
                )?;
                worst = worst.max(e);
            }
            Ok(worst)
        }));
    }

    cases.push(binary("cosine_similarity_matrix", normal(4, 3, "cos/a"), normal(4, 3, "cos/b"), |t, a, b| {
        cosine_similarity_matrix(t, a, b)
    }));
    for (name, symmetric) in [("info_nce_loss", false), ("info_nce_loss_symmetric", true)] {
        let c = LossConfig { symmetric, tau: 0.5, ..cfg };
        cases.push(unary(name, normal(5, 5, name), move |t, s| info_nce_loss(t, s, &c)));
    }
    {
        let c = LossConfig { clamp_t: 10.0, ..cfg };
        cases.push(binary("dv_bound", normal(6, 1, "dv/j"), normal(6, 1, "dv/m"), move |t, j, m| {
            dv_bound(t, j, m, &LossConfig { clamp_t: 10.0, ..LossConfig::default() })
        }));
        let critic = small_mlp(vec![4, 6, 1], 31);
        let b = normal(6, 2, "critic_dv/b");
        cases.push(GradCase::new("critic_dv", move || {
            let (critic, b) = (critic.clone(), b.clone());
            check(
                |t, a| {
                    let vars = critic.record(t, false);
                    let bv = t.constant(b.clone());
                    critic_dv(t, &vars, a, &[bv], &c)
                },
                &normal(6, 2, "critic_dv/a"),
            )
        }));
    }
    {
        let cc = critics(2, 2, 3).v;
        let (x, xc) = (normal(6, 2, "cmi/x"), normal(6, 3, "cmi/xc"));
        cases.push(GradCase::new("conditional_mi_bound", move || {
            check(
                |t, z| {
                    let (xv, cv) = (t.constant(x.clone()), t.constant(xc.clone()));
                    Ok(conditional_mi_bound(t, &cc, z, xv, cv, &cfg)?.0)
                },
                &normal(6, 2, "cmi/z"),
            )
        }));
    }
    cases.push(GradCase::new("permute_rows_derangement", || {
        let perm = shift_derangement(5);
        check(
            |t, a| {
                let p = t.permute_rows(a, &perm)?;
                project(t, p, "derange")
            },
            &normal(5, 2, "derange"),
        )
    }));
    cases.push(custom_square_case("custom", 2.0));
    cases.push(cibr_case());
    cases
}

/// Elementwise `x²` registered through [`Tape::custom`] with the backward rule
/// `factor · x · g`; only `factor = 2` is correct, other values make a broken
/// rule for exercising failure reporting.
pub fn custom_square_case(name: &str, factor: f64) -> GradCase {
    let label = name.to_string();
    GradCase::new(name, move || {
        check(
            |t, x| {
                let value = t.value(x).map(|v| v * v);
                let y = t.custom(
                    &label,
                    &[x],
                    value,
                    Box::new(move |ins, _, g| {
                        let d = ins[0].data().iter().zip(g.data()).map(|(a, b)| factor * a * b).collect();
                        vec![Tensor::new(g.rows(), g.cols(), d).expect("same shape as the output gradient")]
                    }),
                );
                project(t, y, "custom")
            },
            &normal(3, 2, "custom"),
        )
    })
}

/// The regularized objective with frozen critics, differentiated with respect
/// to both embeddings and to the encoder weights that produce them.
fn cibr_case() -> GradCase {
    GradCase::new("cibr_total_loss", || {
        let (n, dv, dt, dz) = (5, 3, 2, 3);
        let c = critics(dz, dv, dt);
        let cfg = LossConfig { tau: 0.5, ..LossConfig::default() };
        let (xv, xt) = (normal(n, dv, "cibr/xv"), normal(n, dt, "cibr/xt"));
        let (zv0, zt0) = (normal(n, dz, "cibr/zv"), normal(n, dz, "cibr/zt"));
        let total = |t: &mut Tape<f64>, zv: Var, zt: Var| -> Result<Var> {
            let (a, b) = (t.constant(xv.clone()), t.constant(xt.clone()));
            let (terms, _) = cibr_total_loss(t, CibrInputs { zv, zt, xv: a, xt: b }, &c, 0.7, 1.0, &cfg)?;
            Ok(terms.total)
        };
        let wrt_zv = check(
            |t, zv| {
                let zt = t.constant(zt0.clone());
                total(t, zv, zt)
            },
            &zv0,
        )?;
        let wrt_zt = check(
            |t, zt| {
                let zv = t.constant(zv0.clone());
                total(t, zv, zt)
            },
            &zt0,
        )?;
        let enc = small_mlp(vec![dv, 4, dz], 41);
        let wrt_encoder = check(
            |t, w0| {
                let mut vars = enc.record(t, false);
                vars.weights[0] = w0;
                let x = t.constant(xv.clone());
                let zv = mlp_forward(t, &vars, x)?;
                let zt = t.constant(zt0.clone());
                total(t, zv, zt)
            },
            &enc.weights[0],
        )?;
        Ok(wrt_zv.max(wrt_zt).max(wrt_encoder))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let names: Vec<String> = registry().into_iter().map(|c| c.name).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }

    #[test]
    fn broken_custom_rule_fails() {
        let out = run_cases(&[custom_square_case("bad", 2.5), custom_square_case("good", 2.0)]);
        assert!(!out[0].passed());
        assert!(out[1].passed());
    }

    #[test]
    fn failing_check_is_reported() {
        let out = run_cases(&[GradCase::new("boom", || Err(crate::Error::EmptyInput("x")))]);
        assert!(!out[0].passed());
        assert!(out[0].result.as_ref().unwrap_err().contains("empty"));
    }
}
