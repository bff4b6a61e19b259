//! Central-difference verification of reverse-mode gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Builds a scalar on `tape` from the input recorded as `x`.
pub trait ScalarFn<T: Scalar>: Fn(&mut Tape<T>, Var) -> Result<Var> {}
impl<T: Scalar, F: Fn(&mut Tape<T>, Var) -> Result<Var>> ScalarFn<T> for F {}

fn evaluate<T: Scalar>(f: &impl ScalarFn<T>, x: &Tensor<T>) -> Result<T> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = f(&mut tape, xv)?;
    let v = tape.value(out).item().ok_or(Error::Rank(tape.value(out).shape()))?;
    if !v.is_finite() {
        return Err(Error::Evaluation(format!("f = {v}")));
    }
    Ok(v)
}

/// Analytic gradient of `f` at `x` via the tape, plus the value `f(x)`.
pub fn analytic_gradient<T: Scalar>(f: &impl ScalarFn<T>, x: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = f(&mut tape, xv)?;
    let v = tape.value(out).item().ok_or(Error::Rank(tape.value(out).shape()))?;
    if !v.is_finite() {
        return Err(Error::Evaluation(format!("f = {v}")));
    }
    let mut grads = tape.backward(out)?;
    let g = grads.take(xv).expect("param leaf always has a gradient slot");
    Ok((v, g))
}

/// Central-difference gradient with step `eps`.
pub fn numeric_gradient<T: Scalar>(f: &impl ScalarFn<T>, x: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let two = T::one() + T::one();
    let mut g = Tensor::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let orig = probe.data()[idx];
        probe.data_mut()[idx] = orig + eps;
        let up = evaluate(f, &probe)?;
        probe.data_mut()[idx] = orig - eps;
        let down = evaluate(f, &probe)?;
        probe.data_mut()[idx] = orig;
        g.data_mut()[idx] = (up - down) / (two * eps);
    }
    Ok(g)
}

/// Max over entries of `|analytic − numeric| / max(1, |analytic|)`.
pub fn grad_check<T: Scalar>(f: impl ScalarFn<T>, x: &Tensor<T>, eps: T) -> Result<T> {
    let (_, analytic) = analytic_gradient(&f, x)?;
    let numeric = numeric_gradient(&f, x, eps)?;
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(T::one()))
        .fold(T::zero(), T::max))
}
