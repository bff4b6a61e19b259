//! Multilayer perceptrons (encoders and critics) and the Adam optimizer.

mod adam;
mod checkpoint;
mod mlp;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use mlp::{init_mlp, mlp_forward, Activation, MlpParams, MlpSpec, MlpVars};
