//! Conditioning features from layer-wise embeddings.
//!
//! For every score-network level `k` the `L` layer embeddings are mixed with
//! simplex weights `w_k = softmax(logits_k)`, upsampled from 25 Hz to the
//! 100 Hz audio frame rate by linear interpolation, downsampled to the
//! level's rate by a strided depthwise convolution (kernel = stride = d_k),
//! and mapped from `D` to `C_k` channels by a pointwise linear adapter.

mod ave;
mod mock;

pub use ave::{read_embeddings, write_embeddings, AVE_MAGIC, AVE_VERSION};
pub use mock::{mock_embeddings, MockConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Audio frames per embedding frame (100 Hz / 25 Hz).
pub const RATE_RATIO: usize = 4;

/// Which embeddings feed the score network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    /// The clip's own embeddings.
    Av,
    /// Zero conditioning features.
    AudioOnly,
    /// Embeddings of a different clip (seeded derangement).
    ShuffledEmb,
}

impl ConditioningMode {
    pub const ALL: [ConditioningMode; 3] = [Self::Av, Self::AudioOnly, Self::ShuffledEmb];

    pub fn name(self) -> &'static str {
        match self {
            Self::Av => "av",
            Self::AudioOnly => "audio_only",
            Self::ShuffledEmb => "shuffled_emb",
        }
    }
}

impl std::str::FromStr for ConditioningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown conditioning mode `{s}`")))
    }
}

impl std::fmt::Display for ConditioningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `L x T_v x D` embedding tensor, layer-major then time then dim.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerEmbeddings {
    layers: usize,
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl LayerEmbeddings {
    pub fn new(layers: usize, frames: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if layers == 0 || frames == 0 || dim == 0 {
            return Err(Error::invalid("embedding dimensions must be >= 1"));
        }
        if data.len() != layers * frames * dim {
            return Err(Error::shape(format!(
                "expected {layers}x{frames}x{dim} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding entry".into()));
        }
        Ok(Self {
            layers,
            frames,
            dim,
            data,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_rate(&self) -> f64 {
        25.0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, layer: usize, frame: usize, d: usize) -> f32 {
        self.data[(layer * self.frames + frame) * self.dim + d]
    }

    /// Layer `l` as a `T_v x D` series.
    pub fn layer(&self, l: usize) -> Series {
        let n = self.frames * self.dim;
        Series {
            frames: self.frames,
            dim: self.dim,
            data: self.data[l * n..(l + 1) * n].iter().map(|&v| v as f64).collect(),
        }
    }
}

/// Time-major `T x D` real series.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Series {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * dim {
            return Err(Error::shape(format!(
                "series {frames}x{dim} needs {} values, got {}",
                frames * dim,
                data.len()
            )));
        }
        Ok(Self { frames, dim, data })
    }

    pub fn zeros(frames: usize, dim: usize) -> Self {
        Self {
            frames,
            dim,
            data: vec![0.0; frames * dim],
        }
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// Trainable `K x L` logits; the mixing weights are their row softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorWeights {
    pub levels: usize,
    pub layers: usize,
    pub logits: Vec<f64>,
}

impl AggregatorWeights {
    /// Uniform weights.
    pub fn uniform(levels: usize, layers: usize) -> Self {
        Self {
            levels,
            layers,
            logits: vec![0.0; levels * layers],
        }
    }

    pub fn row_weights(&self, k: usize) -> Vec<f64> {
        softmax(&self.logits[k * self.layers..(k + 1) * self.layers])
    }

    pub fn weights(&self) -> Vec<Vec<f64>> {
        (0..self.levels).map(|k| self.row_weights(k)).collect()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

/// Temporal aligner of one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignerLevel {
    /// Downsampling factor `d_k` relative to the audio frame rate.
    pub factor: usize,
    pub dim: usize,
    pub channels: usize,
    /// Depthwise taps, `D x factor`; empty when `factor == 1`.
    pub kernel: Vec<f64>,
    /// Pointwise `C x D` map.
    pub adapter: Vec<f64>,
}

impl AlignerLevel {
    /// Averaging kernel and the given adapter.
    pub fn averaging(factor: usize, dim: usize, channels: usize, adapter: Vec<f64>) -> Self {
        let kernel = if factor > 1 {
            vec![1.0 / factor as f64; dim * factor]
        } else {
            Vec::new()
        };
        Self {
            factor,
            dim,
            channels,
            kernel,
            adapter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignerParams {
    pub levels: Vec<AlignerLevel>,
}

/// Target of one level: channels, time extent and rate factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelTarget {
    pub channels: usize,
    pub frames: usize,
    pub factor: usize,
}

/// Channel-major `C x T` feature; broadcast over frequency by the consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub channels: usize,
    pub frames: usize,
    pub data: Vec<f64>,
}

impl Feature {
    pub fn zeros(channels: usize, frames: usize) -> Self {
        Self {
            channels,
            frames,
            data: vec![0.0; channels * frames],
        }
    }
}

/// The aligned features `f_1 .. f_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningSet {
    pub features: Vec<Feature>,
}

impl ConditioningSet {
    pub fn zeros(targets: &[LevelTarget]) -> Self {
        Self {
            features: targets
                .iter()
                .map(|t| Feature::zeros(t.channels, t.frames))
                .collect(),
        }
    }
}

/// `sum_l w_kl e_l`.
pub fn aggregate(e: &LayerEmbeddings, w: &AggregatorWeights, k: usize) -> Result<Series> {
    if k >= w.levels {
        return Err(Error::invalid(format!("level {k} out of range 0..{}", w.levels)));
    }
    if w.layers != e.layers() {
        return Err(Error::shape(format!(
            "weights cover {} layers, embeddings have {}",
            w.layers,
            e.layers()
        )));
    }
    Ok(aggregate_with(e, &w.row_weights(k)))
}

fn aggregate_with(e: &LayerEmbeddings, weights: &[f64]) -> Series {
    let n = e.frames() * e.dim();
    let mut out = vec![0.0; n];
    for (l, &wl) in weights.iter().enumerate() {
        let src = &e.data()[l * n..(l + 1) * n];
        for (o, &v) in out.iter_mut().zip(src) {
            *o += wl * v as f64;
        }
    }
    Series {
        frames: e.frames(),
        dim: e.dim(),
        data: out,
    }
}

/// Linear interpolation by an integer factor: input frame `v` lands on
/// output frame `factor * v`, and the last input value is held for the
/// final `factor - 1` outputs.
pub fn temp_align_up(x: &Series, factor: usize) -> Result<Series> {
    if x.frames == 0 {
        return Err(Error::invalid("cannot upsample an empty series"));
    }
    if factor == 0 {
        return Err(Error::invalid("upsampling factor must be >= 1"));
    }
    let mut out = Series::zeros(x.frames * factor, x.dim);
    for v in 0..x.frames {
        let a = x.row(v);
        let b = x.row((v + 1).min(x.frames - 1));
        for j in 0..factor {
            let frac = j as f64 / factor as f64;
            let row = &mut out.data[(v * factor + j) * x.dim..(v * factor + j + 1) * x.dim];
            for ((o, &av), &bv) in row.iter_mut().zip(a).zip(b) {
                *o = av + (bv - av) * frac;
            }
        }
    }
    Ok(out)
}

fn temp_align_up_backward(grad: &Series, factor: usize, frames: usize) -> Series {
    let dim = grad.dim;
    let mut out = Series::zeros(frames, dim);
    for v in 0..frames {
        let nb = (v + 1).min(frames - 1);
        for j in 0..factor {
            let frac = j as f64 / factor as f64;
            let g = grad.row(v * factor + j);
            for d in 0..dim {
                out.data[v * dim + d] += g[d] * (1.0 - frac);
                out.data[nb * dim + d] += g[d] * frac;
            }
        }
    }
    out
}

/// Non-overlapping depthwise convolution, kernel size = stride = `factor`;
/// `kernel` holds `factor` taps per dimension. Output length is
/// `floor(T / factor)`.
pub fn temp_align_down(x: &Series, factor: usize, kernel: &[f64]) -> Result<Series> {
    if factor < 2 {
        return Err(Error::invalid("downsampling factor must be >= 2"));
    }
    if kernel.len() != x.dim * factor {
        return Err(Error::shape(format!(
            "kernel needs {} taps, got {}",
            x.dim * factor,
            kernel.len()
        )));
    }
    if x.frames < factor {
        return Err(Error::invalid(format!(
            "series of {} frames is shorter than the factor {factor}",
            x.frames
        )));
    }
    let frames = x.frames / factor;
    let mut out = Series::zeros(frames, x.dim);
    for i in 0..frames {
        for j in 0..factor {
            let src = x.row(i * factor + j);
            for d in 0..x.dim {
                out.data[i * x.dim + d] += kernel[d * factor + j] * src[d];
            }
        }
    }
    Ok(out)
}

fn adapt(z: &Series, adapter: &[f64], channels: usize, target_frames: usize) -> Feature {
    let mut f = Feature::zeros(channels, target_frames);
    for t in 0..target_frames {
        // hold the last frame when the aligned series is shorter
        let src = z.row(t.min(z.frames - 1));
        for c in 0..channels {
            let a = &adapter[c * z.dim..(c + 1) * z.dim];
            f.data[c * target_frames + t] = a.iter().zip(src).map(|(w, v)| w * v).sum();
        }
    }
    f
}

fn check_level(e: &LayerEmbeddings, level: &AlignerLevel, target: &LevelTarget) -> Result<()> {
    if level.factor != target.factor || level.channels != target.channels || level.dim != e.dim()
    {
        return Err(Error::shape(format!(
            "aligner (factor {}, {}->{}) does not match target (factor {}, {} channels) \
             for {}-dim embeddings",
            level.factor, level.dim, level.channels, target.factor, target.channels, e.dim()
        )));
    }
    if level.adapter.len() != level.channels * level.dim {
        return Err(Error::shape("adapter size"));
    }
    if level.factor > 1 && level.kernel.len() != level.dim * level.factor {
        return Err(Error::shape("kernel size must equal the stride"));
    }
    if e.frames() * RATE_RATIO < level.factor {
        return Err(Error::invalid("clip too short for this level"));
    }
    Ok(())
}

/// Aggregation, alignment to every level's rate and channel adaptation.
/// Level `k` output is cropped, or right-padded by holding its last frame,
/// to exactly `targets[k].frames`.
pub fn align_full(
    e: &LayerEmbeddings,
    w: &AggregatorWeights,
    aligners: &AlignerParams,
    targets: &[LevelTarget],
) -> Result<ConditioningSet> {
    if w.levels != targets.len() || aligners.levels.len() != targets.len() {
        return Err(Error::shape("level counts of weights, aligners and targets differ"));
    }
    let mut features = Vec::with_capacity(targets.len());
    for (k, (level, target)) in aligners.levels.iter().zip(targets).enumerate() {
        check_level(e, level, target)?;
        let up = temp_align_up(&aggregate(e, w, k)?, RATE_RATIO)?;
        let z = if level.factor > 1 {
            temp_align_down(&up, level.factor, &level.kernel)?
        } else {
            up
        };
        features.push(adapt(&z, &level.adapter, level.channels, target.frames));
    }
    Ok(ConditioningSet { features })
}

/// Reverse-mode pass of [`align_full`]: accumulates into `dw` and
/// `daligners` the gradients implied by `grads` (one per level, shaped
/// like the features).
pub fn align_full_backward(
    e: &LayerEmbeddings,
    w: &AggregatorWeights,
    aligners: &AlignerParams,
    grads: &[Feature],
    dw: &mut AggregatorWeights,
    daligners: &mut AlignerParams,
) -> Result<()> {
    let dim = e.dim();
    for (k, (level, g)) in aligners.levels.iter().zip(grads).enumerate() {
        let weights = w.row_weights(k);
        let agg = aggregate_with(e, &weights);
        let up = temp_align_up(&agg, RATE_RATIO)?;
        let z = if level.factor > 1 {
            temp_align_down(&up, level.factor, &level.kernel)?
        } else {
            up.clone()
        };

        // adapter
        let dlevel = &mut daligners.levels[k];
        let mut dz = Series::zeros(z.frames, dim);
        for t in 0..g.frames {
            let zt = t.min(z.frames - 1);
            for c in 0..level.channels {
                let gv = g.data[c * g.frames + t];
                if gv == 0.0 {
                    continue;
                }
                for d in 0..dim {
                    dlevel.adapter[c * dim + d] += gv * z.data[zt * dim + d];
                    dz.data[zt * dim + d] += gv * level.adapter[c * dim + d];
                }
            }
        }

        // strided conv
        let dup = if level.factor > 1 {
            let f = level.factor;
            let mut dup = Series::zeros(up.frames, dim);
            for i in 0..z.frames {
                for j in 0..f {
                    for d in 0..dim {
                        let gz = dz.data[i * dim + d];
                        dlevel.kernel[d * f + j] += gz * up.data[(i * f + j) * dim + d];
                        dup.data[(i * f + j) * dim + d] += gz * level.kernel[d * f + j];
                    }
                }
            }
            dup
        } else {
            dz
        };

        let dagg = temp_align_up_backward(&dup, RATE_RATIO, agg.frames);

        // aggregation weights, then through the softmax
        let n = e.frames() * dim;
        let dweights: Vec<f64> = (0..e.layers())
            .map(|l| {
                e.data()[l * n..(l + 1) * n]
                    .iter()
                    .zip(&dagg.data)
                    .map(|(&v, g)| v as f64 * g)
                    .sum()
            })
            .collect();
        let inner: f64 = weights.iter().zip(&dweights).map(|(a, b)| a * b).sum();
        for l in 0..e.layers() {
            dw.logits[k * w.layers + l] += weights[l] * (dweights[l] - inner);
        }
    }
    Ok(())
}
