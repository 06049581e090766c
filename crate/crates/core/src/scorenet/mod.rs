//! Toy conditional score network with exact reverse-mode gradients.

mod checkpoint;
mod model;
mod params;
pub mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CKPT_MAGIC, CKPT_VERSION};
pub use model::{backward, backward_full, conditioning, forward, time_features, ForwardCache};
pub use params::{OutputParam, ScoreNetParams, ScoreNetShape, INPUT_CHANNELS};
