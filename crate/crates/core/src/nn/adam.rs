use serde::{Deserialize, Serialize};

use super::mlp::MlpParams;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("invalid Adam hyper-parameters {self:?}")));
        }
        Ok(())
    }
}

/// First/second moment accumulators mirroring a parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step_count: u64,
    pub hyper: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: &[&Tensor<T>], hyper: AdamConfig) -> Result<Self> {
        hyper.validate()?;
        let m: Vec<Tensor<T>> = shapes.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Ok(AdamState { v: m.clone(), m, step_count: 0, hyper })
    }

    pub fn for_mlp(params: &MlpParams<T>, hyper: AdamConfig) -> Result<Self> {
        Self::new(&params.tensors(), hyper)
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// `names` labels each parameter for the divergence error. Nothing is
/// modified if any gradient entry is non-finite.
pub fn adam_update<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
    names: impl Fn(usize) -> String,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Alignment { what: "adam parameter/gradient count".into(), left: params.len(), right: grads.len() });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::dim("adam_step", p.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NumericalDivergence { param: names(i) });
        }
    }
    let h = state.hyper;
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
    let one = T::one();
    let c1 = one - T::of(h.beta1.powi(t));
    let c2 = one - T::of(h.beta2.powi(t));
    let (lr, eps) = (T::of(h.lr), T::of(h.epsilon));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        for (mk, &gk) in m.iter_mut().zip(g.data()) {
            *mk = b1 * *mk + (one - b1) * gk;
        }
        let v = state.v[i].data_mut();
        for (vk, &gk) in v.iter_mut().zip(g.data()) {
            *vk = b2 * *vk + (one - b2) * gk * gk;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pk, &mk), &vk) in p.data_mut().iter_mut().zip(m).zip(v) {
            let mhat = mk / c1;
            let vhat = vk / c2;
            *pk -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Adam step over every tensor of an MLP; `grads` in [`MlpParams::tensors`] order.
pub fn adam_step<T: Scalar>(params: &mut MlpParams<T>, grads: &[&Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    let mut ps = params.tensors_mut();
    adam_update(&mut ps, grads, state, MlpParams::<T>::tensor_name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_mlp, MlpSpec};

    #[test]
    fn zero_gradient_is_fixed_point() {
        let spec = MlpSpec::new(vec![2, 3, 1]).unwrap();
        let mut p: MlpParams<f64> = init_mlp(&spec, 3).unwrap();
        let before = p.clone();
        let mut st = AdamState::for_mlp(&p, AdamConfig::default()).unwrap();
        let zeros: Vec<Tensor<f64>> = p.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        let refs: Vec<&Tensor<f64>> = zeros.iter().collect();
        adam_step(&mut p, &refs, &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn one_step_descends_on_square() {
        let mut w = Tensor::<f64>::scalar(1.0);
        let mut st = AdamState::new(&[&w], AdamConfig::with_lr(0.1)).unwrap();
        let g = Tensor::scalar(2.0 * w.data()[0]);
        adam_update(&mut [&mut w], &[&g], &mut st, |_| "w".into()).unwrap();
        assert!(w.data()[0].abs() < 1.0);
    }

    #[test]
    fn identical_calls_identical_results() {
        let w0 = Tensor::<f64>::from_rows(&[&[0.3, -0.2]]).unwrap();
        let g = Tensor::<f64>::from_rows(&[&[0.7, 0.1]]).unwrap();
        let run = || {
            let mut w = w0.clone();
            let mut st = AdamState::new(&[&w], AdamConfig::default()).unwrap();
            adam_update(&mut [&mut w], &[&g], &mut st, |_| "w".into()).unwrap();
            (w, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let spec = MlpSpec::new(vec![2, 2, 1]).unwrap();
        let mut p: MlpParams<f64> = init_mlp(&spec, 3).unwrap();
        let before = p.clone();
        let mut st = AdamState::for_mlp(&p, AdamConfig::default()).unwrap();
        let mut grads: Vec<Tensor<f64>> = p.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        grads[3].data_mut()[0] = f64::NAN;
        let refs: Vec<&Tensor<f64>> = grads.iter().collect();
        let err = adam_step(&mut p, &refs, &mut st).unwrap_err();
        assert!(matches!(&err, Error::NumericalDivergence { param } if param == "biases[1]"), "{err}");
        assert_eq!(p, before);
        assert_eq!(st.step_count, 0);
    }

    #[test]
    fn rejects_bad_learning_rate() {
        assert!(AdamState::<f64>::new(&[], AdamConfig::with_lr(0.0)).is_err());
    }
}
