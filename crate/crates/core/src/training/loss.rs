use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::{NoiseLevel, SdeParams};
use crate::signal::ComplexSpectrogram;

/// Denoising score matching loss `mean |s + z / sigma|^2` and its gradient
/// with respect to the real and imaginary parts of `score`.
pub fn dsm_loss(
    score: &ComplexSpectrogram,
    z: &ComplexSpectrogram,
    sigma: f64,
) -> Result<(f64, ComplexSpectrogram)> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("noise level must be positive, got {sigma}")));
    }
    let residual = score.zip_map(z, |s, z| s + z / sigma)?;
    let count = residual.len() as f64;
    let loss = residual.norm_sqr() / count;
    Ok((loss, residual.scale(2.0 / count)))
}

/// Per-draw weight applied to [`dsm_loss`] when training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossWeighting {
    /// The plain objective, weight 1.
    #[default]
    Score,
    /// Weight `sigma^4 / decay^2`, which turns the objective into
    /// `mean |o - (x0 - y)|^2` for a mean-parameterised network.
    Mean,
}

impl LossWeighting {
    pub fn weight(self, level: NoiseLevel) -> f64 {
        match self {
            LossWeighting::Score => 1.0,
            LossWeighting::Mean => {
                let r = level.sigma * level.sigma / level.decay;
                r * r
            }
        }
    }
}

/// Process time uniform on `[t_eps, T]`.
pub fn sample_t(rng: &mut impl Rng, params: &SdeParams) -> f64 {
    rng.gen_range(params.t_eps..=params.t_max)
}
