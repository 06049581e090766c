use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LayerEmbeddings;
use crate::error::{Error, Result};
use crate::signal::{SegmentLabels, MAX_ALPHABET};

/// Settings of the mock embedding provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub layers: usize,
    pub dim: usize,
    pub codebook_seed: u64,
    pub noise_level: f64,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            layers: 12,
            dim: 32,
            codebook_seed: 0x5eed,
            noise_level: 0.3,
        }
    }
}

impl MockConfig {
    /// Relative noise of layer `l`: smallest around two thirds of the depth.
    fn layer_noise(&self, l: usize) -> f64 {
        let pos = if self.layers > 1 {
            l as f64 / (self.layers - 1) as f64
        } else {
            0.0
        };
        self.noise_level * (1.0 + 3.0 * (pos - 0.65).abs())
    }

    /// `codebook[l][s]`, a `D`-vector per layer and symbol.
    pub fn codebook(&self) -> Vec<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.codebook_seed);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..self.dim).map(|_| rng.sample(StandardNormal)).collect()
        };
        let shared: Vec<Vec<f64>> = (0..MAX_ALPHABET).map(|_| draw(&mut rng)).collect();
        (0..self.layers)
            .map(|l| {
                // layers share a symbol identity component to a varying degree
                let pos = if self.layers > 1 {
                    l as f64 / (self.layers - 1) as f64
                } else {
                    0.0
                };
                let a = 0.3 + 0.6 * pos;
                let b = (1.0 - a * a).sqrt();
                shared
                    .iter()
                    .map(|u| {
                        let v = draw(&mut rng);
                        u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Embeddings that depend only on the clean symbol track:
/// `e_l[t] = codeword(l, label[t]) + noise * eps`.
pub fn mock_embeddings(
    labels: &SegmentLabels,
    cfg: &MockConfig,
    noise_seed: u64,
) -> Result<LayerEmbeddings> {
    if labels.is_empty() {
        return Err(Error::invalid("empty label track"));
    }
    if let Some(&s) = labels
        .frames
        .iter()
        .find(|&&s| s as usize >= labels.alphabet_size.min(MAX_ALPHABET))
    {
        return Err(Error::invalid(format!("unknown symbol {s}")));
    }
    let codebook = cfg.codebook();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut data = Vec::with_capacity(cfg.layers * labels.len() * cfg.dim);
    for (l, words) in codebook.iter().enumerate() {
        let scale = cfg.layer_noise(l);
        for &s in &labels.frames {
            for &v in &words[s as usize] {
                let eps: f64 = rng.sample(StandardNormal);
                data.push((v + scale * eps) as f32);
            }
        }
    }
    LayerEmbeddings::new(cfg.layers, labels.len(), cfg.dim, data)
}
