use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{uniform, Stream};
use crate::scalar::Scalar;

/// Hidden-layer nonlinearity. The output layer is always affine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// input → hidden… → output
    pub layer_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        let spec = MlpSpec { layer_dims, activation: Activation::Relu };
        spec.validate()?;
        Ok(spec)
    }

    /// `input → hidden… → output` from its three parts.
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        Self::new(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Config(format!("MLP needs at least 2 layer dims, got {:?}", self.layer_dims)));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::Config(format!("MLP layer dims must be >= 1, got {:?}", self.layer_dims)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated spec has >= 2 dims")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }
}

/// Weights `W_l [d_l × d_{l+1}]` and row biases `b_l [1 × d_{l+1}]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    pub spec: MlpSpec,
    pub seed: u64,
    pub weights: Vec<Tensor<T>>,
    pub biases: Vec<Tensor<T>>,
}

/// Tape handles for one [`MlpParams`], in layer order.
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl MlpVars {
    /// Handles in the same order as [`MlpParams::tensors`].
    pub fn all(&self) -> Vec<Var> {
        self.weights.iter().zip(&self.biases).flat_map(|(&w, &b)| [w, b]).collect()
    }
}

impl<T: Scalar> MlpParams<T> {
    /// Glorot-uniform weights drawn from `stream` (sub-stream per layer), zero biases.
    pub fn init(spec: &MlpSpec, seed: u64, stream: &Stream) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::with_capacity(spec.n_layers());
        let mut biases = Vec::with_capacity(spec.n_layers());
        for (l, pair) in spec.layer_dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = stream.at(l as u64);
            weights.push(Tensor::from_fn(fan_in, fan_out, |_, _| T::of(uniform(&mut rng, -limit, limit))));
            biases.push(Tensor::zeros(1, fan_out));
        }
        Ok(MlpParams { spec: spec.clone(), seed, weights, biases })
    }

    /// All-zero parameters for `spec`.
    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let weights = spec.layer_dims.windows(2).map(|p| Tensor::zeros(p[0], p[1])).collect();
        let biases = spec.layer_dims[1..].iter().map(|&d| Tensor::zeros(1, d)).collect();
        Ok(MlpParams { spec: spec.clone(), seed: 0, weights, biases })
    }

    /// Parameter tensors interleaved `W0, b0, W1, b1, ...`.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| [w, b]).collect()
    }

    /// Human-readable name of the `i`-th entry of [`Self::tensors`].
    pub fn tensor_name(i: usize) -> String {
        if i.is_multiple_of(2) {
            format!("weights[{}]", i / 2)
        } else {
            format!("biases[{}]", i / 2)
        }
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Records the parameters on `tape`; `trainable = false` freezes them.
    pub fn record(&self, tape: &mut Tape<T>, trainable: bool) -> MlpVars {
        let mut leaf = |t: &Tensor<T>| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        let weights = self.weights.iter().map(&mut leaf).collect();
        let biases = self.biases.iter().map(&mut leaf).collect();
        MlpVars { weights, biases }
    }

    /// Forward pass without gradient bookkeeping.
    pub fn forward_value(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = mlp_forward(&mut tape, &vars, xv)?;
        Ok(tape.value(out).clone())
    }
}

/// Deterministic initialization from `(spec, seed)` on the `"init"` stream.
pub fn init_mlp<T: Scalar>(spec: &MlpSpec, seed: u64) -> Result<MlpParams<T>> {
    MlpParams::init(spec, seed, &Stream::new(seed, "init"))
}

/// Alternating affine/relu layers; the last layer is affine only.
pub fn mlp_forward<T: Scalar>(tape: &mut Tape<T>, params: &MlpVars, x: Var) -> Result<Var> {
    let n = params.weights.len();
    let mut h = x;
    for (l, (&w, &b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let (hc, wr) = (tape.value(h).cols(), tape.value(w).rows());
        if hc != wr {
            return Err(Error::dim("mlp_forward", tape.value(h).shape(), tape.value(w).shape()));
        }
        let z = tape.matmul(h, w)?;
        h = tape.add_row_bias(z, b)?;
        if l + 1 < n {
            h = tape.relu(h);
        }
    }
    Ok(h)
}
