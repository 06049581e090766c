//! Conditional score-based speech enhancement with layer-aggregated
//! conditioning embeddings.

pub mod conditioner;
pub mod config;
pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod metrics;
pub mod scorenet;
pub mod sampler;
pub mod sde;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
pub use signal::{ComplexSpectrogram, StftConfig, Waveform};
