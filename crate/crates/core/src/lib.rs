//! Contrastive alignment of two modalities with a critic-estimated
//! conditional mutual-information penalty.
//!
//! The numerical core is generic over [`Scalar`]; the aliases below fix it to
//! `f64`, which is what the command line and the training loop use.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod certify;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type MlpParams = nn::MlpParams<f64>;
pub type AdamState = nn::AdamState<f64>;
pub type Checkpoint = nn::Checkpoint<f64>;
pub type CibrCritics = objectives::CibrCritics<f64>;
pub type ConditionalCritics = objectives::ConditionalCritics<f64>;
pub type CriticState = train::CriticState<f64>;
pub type Encoders = train::Encoders<f64>;
pub type RunOutput = train::RunOutput<f64>;
