//! Random-shape gradient checks and tape invariants.

use cibr::autodiff::{grad_check, Tape, Tensor};
use cibr::Error;
use proptest::prelude::*;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |d| Tensor::new(rows, cols, d).unwrap())
}

fn shaped() -> impl Strategy<Value = Tensor<f64>> {
    (1usize..5, 1usize..5).prop_flat_map(|(r, c)| matrix(r, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_style_chain(x in shaped()) {
        let err = grad_check(|t: &mut Tape<f64>, x| {
            let e = t.exp(x);
            let l = t.row_log_sum_exp(e)?;
            let s = t.scale(l, 0.3);
            Ok(t.sum(s))
        }, &x, EPS).unwrap();
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn gram_of_normalized_rows(x in shaped()) {
        prop_assume!(x.iter_rows().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 0.05));
        let err = grad_check(|t: &mut Tape<f64>, x| {
            let u = t.row_l2_normalize(x)?;
            let ut = t.transpose(u);
            let g = t.matmul(u, ut)?;
            let m = t.mul(g, g)?;
            t.mean(m)
        }, &x, EPS).unwrap();
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn log_mean_exp_of_column(v in (1usize..8).prop_flat_map(|n| matrix(n, 1))) {
        let err = grad_check(|t: &mut Tape<f64>, x| t.log_mean_exp(x), &v, EPS).unwrap();
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn matmul_matches_naive(a in matrix(3, 4), b in matrix(4, 2)) {
        let c = a.matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let want: f64 = (0..4).map(|k| a.get(i, k) * b.get(k, j)).sum();
                prop_assert!((c.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_forms_have_constant_gradient(w in matrix(3, 2), x in matrix(3, 2)) {
        // d/dx sum(w ∘ x) = w exactly
        let mut tape = Tape::new();
        let xv = tape.param(x);
        let wv = tape.constant(w.clone());
        let p = tape.mul(xv, wv).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        prop_assert_eq!(g.get(xv).unwrap(), &w);
    }
}

#[test]
fn gradients_accumulate_over_reuse() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = tape.add(x, x).unwrap();
    let z = tape.mul(y, x).unwrap();
    let g = tape.backward(z).unwrap();
    // z = 2x², dz/dx = 4x
    assert_eq!(g.get(x).unwrap().item(), Some(12.0));
}

#[test]
fn constants_get_no_gradient_and_unused_params_get_zeros() {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::scalar(2.0));
    let p = tape.param(Tensor::scalar(5.0));
    let unused = tape.param(Tensor::ones(2, 2));
    let out = tape.mul(c, p).unwrap();
    let g = tape.backward(out).unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.get(p).unwrap().item(), Some(2.0));
    assert_eq!(g.get(unused).unwrap(), &Tensor::zeros(2, 2));
    assert!(!tape.requires_grad(c) && tape.requires_grad(out));
}

#[test]
fn backward_needs_a_scalar_and_shapes_are_checked() {
    let mut tape = Tape::<f64>::new();
    let a = tape.param(Tensor::ones(2, 3));
    let b = tape.param(Tensor::ones(2, 3));
    assert!(matches!(tape.backward(a), Err(Error::Rank(_))));
    assert!(tape.matmul(a, b).is_err());
    let c = tape.param(Tensor::ones(3, 2));
    assert!(tape.add(a, c).is_err());
}

#[test]
fn log_of_nonpositive_input_is_an_error() {
    let mut tape = Tape::<f64>::new();
    let a = tape.param(Tensor::new(1, 2, vec![1.0, 0.0]).unwrap());
    assert!(tape.log(a).is_err());
}

#[test]
fn custom_op_uses_the_supplied_rule() {
    let x = Tensor::new(2, 2, vec![0.5, -1.0, 2.0, 0.1]).unwrap();
    let cube = |t: &mut Tape<f64>, x| {
        let value = t.value(x).map(|v| v * v * v);
        let y = t.custom("cube", &[x], value, Box::new(|ins, _, g| {
            let d = Tensor::from_fn(ins[0].rows(), ins[0].cols(), |i, j| 3.0 * ins[0].get(i, j).powi(2) * g.get(i, j));
            vec![d]
        }));
        Ok(t.sum(y))
    };
    assert!(grad_check(cube, &x, EPS).unwrap() < TOL);
    let mut tape = Tape::new();
    let xv = tape.param(x);
    let s = cube(&mut tape, xv).unwrap();
    assert_eq!(tape.node(s).op, "sum");
    assert_eq!(tape.node(tape.node(s).inputs[0]).op, "cube");
}
