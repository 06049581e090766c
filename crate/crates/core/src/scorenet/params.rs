use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tensor::ConvGeom;
use crate::conditioner::{AggregatorWeights, AlignerLevel, AlignerParams, LevelTarget};
use crate::error::{Error, Result};
use crate::signal::N_BINS;

/// Stacked real input channels: Re x_t, Im x_t, Re y, Im y.
pub const INPUT_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreNetShape {
    /// Channels per level, `C_k`.
    pub channels: Vec<usize>,
    /// Time and frequency downsampling factor of each level, `d_k`.
    pub factors: Vec<usize>,
    pub time_embed_dim: usize,
    /// Embedding layers `L` fed to the aggregator.
    pub cond_layers: usize,
    /// Embedding width `D`.
    pub cond_dim: usize,
    /// 3x3 residual block at the coarsest level.
    pub mid_block: bool,
    pub output: OutputParam,
}

/// Meaning of the two output channels `o`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputParam {
    /// `o` estimates `-z`; score `o / sigma`.
    #[default]
    Noise,
    /// `o` estimates `x0 - y`; score `-(x_t - y - decay o) / sigma^2`.
    Mean,
}

impl Default for ScoreNetShape {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 64],
            factors: vec![1, 2, 4],
            time_embed_dim: 32,
            cond_layers: 12,
            cond_dim: 32,
            mid_block: true,
            output: OutputParam::Noise,
        }
    }
}

impl ScoreNetShape {
    /// Reduced network used by the default experiment budget.
    pub fn toy() -> Self {
        Self {
            channels: vec![8, 16, 32],
            mid_block: false,
            output: OutputParam::Mean,
            ..Self::default()
        }
    }

    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.channels.len();
        if k == 0 || self.factors.len() != k {
            return Err(Error::invalid("need one factor per level and at least one level"));
        }
        if self.factors[0] != 1 {
            return Err(Error::invalid("first level factor must be 1"));
        }
        for w in self.factors.windows(2) {
            if w[1] <= w[0] || w[1] % w[0] != 0 || !(w[1] / w[0]).is_power_of_two() {
                return Err(Error::invalid(
                    "level factors must be strictly increasing powers of two",
                ));
            }
        }
        if !self.factors.iter().all(|f| f.is_power_of_two() && N_BINS % f == 0) {
            return Err(Error::invalid("factors must be powers of two dividing 256"));
        }
        if self.channels.contains(&0)
            || self.time_embed_dim < 2
            || self.time_embed_dim % 2 != 0
            || self.cond_layers == 0
            || self.cond_dim == 0
        {
            return Err(Error::invalid("zero-sized network dimension"));
        }
        Ok(())
    }

    /// Frames must be a multiple of this.
    pub fn frame_multiple(&self) -> usize {
        *self.factors.last().unwrap()
    }

    /// Stride between level `k - 1` and level `k`.
    pub fn stride(&self, k: usize) -> usize {
        self.factors[k] / self.factors[k - 1]
    }

    pub fn level_targets(&self, frames: usize) -> Vec<LevelTarget> {
        self.channels
            .iter()
            .zip(&self.factors)
            .map(|(&channels, &factor)| LevelTarget {
                channels,
                frames: frames / factor,
                factor,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvSlot {
    pub geom: ConvGeom,
    pub w: Range<usize>,
    pub b: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EncSlot {
    pub conv: ConvSlot,
    /// `C_k x C_k` weights on the concatenated conditioning channels.
    pub cond: Range<usize>,
    /// `C_k x E` projection of the noise-level features.
    pub temb: Range<usize>,
    /// `C_k x F_k` frequency-position bias.
    pub fbias: Range<usize>,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DecSlot {
    /// `C_k x C_{k+1}` pointwise map of the coarser level.
    pub up: Range<usize>,
    /// `C_k x C_k` pointwise map of the skip connection.
    pub skip: Range<usize>,
    pub bias: Range<usize>,
    pub scale: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NetLayout {
    pub enc: Vec<EncSlot>,
    pub mid: Option<ConvSlot>,
    pub dec: Vec<DecSlot>,
    pub out_w: Range<usize>,
    pub out_b: Range<usize>,
    pub total: usize,
}

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.0..self.0 + n;
        self.0 += n;
        r
    }
}

impl NetLayout {
    pub fn new(shape: &ScoreNetShape) -> Self {
        let mut cur = Cursor(0);
        let e = shape.time_embed_dim;
        let mut enc = Vec::new();
        for k in 0..shape.levels() {
            let c = shape.channels[k];
            let geom = if k == 0 {
                ConvGeom {
                    cin: INPUT_CHANNELS,
                    cout: c,
                    k: 3,
                    stride: 1,
                    pad: 1,
                }
            } else {
                let s = shape.stride(k);
                ConvGeom {
                    cin: shape.channels[k - 1],
                    cout: c,
                    k: s,
                    stride: s,
                    pad: 0,
                }
            };
            let conv = ConvSlot {
                geom,
                w: cur.take(geom.weight_len()),
                b: cur.take(c),
            };
            let bins = N_BINS / shape.factors[k];
            enc.push(EncSlot {
                conv,
                cond: cur.take(c * c),
                temb: cur.take(c * e),
                fbias: cur.take(c * bins),
                bins,
            });
        }
        let mid = shape.mid_block.then(|| {
            let c = *shape.channels.last().unwrap();
            let geom = ConvGeom {
                cin: c,
                cout: c,
                k: 3,
                stride: 1,
                pad: 1,
            };
            ConvSlot {
                geom,
                w: cur.take(geom.weight_len()),
                b: cur.take(c),
            }
        });
        let mut dec = Vec::new();
        for k in 0..shape.levels() - 1 {
            let (c, cn) = (shape.channels[k], shape.channels[k + 1]);
            dec.push(DecSlot {
                up: cur.take(c * cn),
                skip: cur.take(c * c),
                bias: cur.take(c),
                scale: shape.stride(k + 1),
            });
        }
        let out_w = cur.take(2 * shape.channels[0]);
        let out_b = cur.take(2);
        Self {
            enc,
            mid,
            dec,
            out_w,
            out_b,
            total: cur.0,
        }
    }

    /// Named parameter groups, one per layer tensor.
    pub fn groups(&self) -> Vec<(String, Range<usize>)> {
        let mut g = Vec::new();
        for (k, s) in self.enc.iter().enumerate() {
            let kind = if k == 0 { "conv" } else { "strided_conv" };
            g.push((format!("enc{k}.{kind}.w"), s.conv.w.clone()));
            g.push((format!("enc{k}.{kind}.b"), s.conv.b.clone()));
            g.push((format!("enc{k}.cond_concat"), s.cond.clone()));
            g.push((format!("enc{k}.time_embed"), s.temb.clone()));
            g.push((format!("enc{k}.freq_bias"), s.fbias.clone()));
        }
        if let Some(m) = &self.mid {
            g.push(("mid.conv.w".into(), m.w.clone()));
            g.push(("mid.conv.b".into(), m.b.clone()));
        }
        for (k, s) in self.dec.iter().enumerate() {
            g.push((format!("dec{k}.upsample_conv"), s.up.clone()));
            g.push((format!("dec{k}.skip_concat"), s.skip.clone()));
            g.push((format!("dec{k}.bias"), s.bias.clone()));
        }
        g.push(("out.w".into(), self.out_w.clone()));
        g.push(("out.b".into(), self.out_b.clone()));
        g
    }
}

/// Every trainable parameter: the network proper, the aggregation logits
/// and the temporal aligners.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetParams {
    pub shape: ScoreNetShape,
    pub net: Vec<f64>,
    pub aggregator: AggregatorWeights,
    pub aligners: AlignerParams,
}

impl ScoreNetParams {
    /// All-zero parameters (also the gradient accumulator layout).
    pub fn zeros(shape: &ScoreNetShape) -> Result<Self> {
        shape.validate()?;
        let layout = NetLayout::new(shape);
        let d = shape.cond_dim;
        let aligners = AlignerParams {
            levels: shape
                .channels
                .iter()
                .zip(&shape.factors)
                .map(|(&c, &f)| AlignerLevel {
                    factor: f,
                    dim: d,
                    channels: c,
                    kernel: if f > 1 { vec![0.0; d * f] } else { Vec::new() },
                    adapter: vec![0.0; c * d],
                })
                .collect(),
        };
        Ok(Self {
            shape: shape.clone(),
            net: vec![0.0; layout.total],
            aggregator: AggregatorWeights::uniform(shape.levels(), shape.cond_layers),
            aligners,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape).expect("shape already validated")
    }

    /// Fan-in scaled Gaussian weights, zero biases, uniform aggregation,
    /// averaging aligner kernels and a zero output layer.
    pub fn init(shape: &ScoreNetShape, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        let layout = NetLayout::new(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fill = |net: &mut [f64], r: &Range<usize>, fan_in: usize, rng: &mut ChaCha8Rng| {
            let std = (1.0 / fan_in as f64).sqrt();
            for v in &mut net[r.clone()] {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
        };
        for (k, s) in layout.enc.iter().enumerate() {
            let g = s.conv.geom;
            fill(&mut p.net, &s.conv.w, g.cin * g.k * g.k, &mut rng);
            fill(&mut p.net, &s.cond, shape.channels[k], &mut rng);
            fill(&mut p.net, &s.temb, shape.time_embed_dim, &mut rng);
        }
        if let Some(m) = &layout.mid {
            let g = m.geom;
            // residual branch starts small
            fill(&mut p.net, &m.w, 4 * g.cin * g.k * g.k, &mut rng);
        }
        for (k, s) in layout.dec.iter().enumerate() {
            fill(&mut p.net, &s.up, shape.channels[k + 1], &mut rng);
            fill(&mut p.net, &s.skip, shape.channels[k], &mut rng);
        }
        for level in &mut p.aligners.levels {
            if level.factor > 1 {
                level.kernel.iter_mut().for_each(|v| *v = 1.0 / level.factor as f64);
            }
            let std = (1.0 / level.dim as f64).sqrt();
            for v in &mut level.adapter {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(p)
    }

    pub(crate) fn layout(&self) -> NetLayout {
        NetLayout::new(&self.shape)
    }

    pub fn param_count(&self) -> usize {
        self.net.len()
            + self.aggregator.logits.len()
            + self
                .aligners
                .levels
                .iter()
                .map(|l| l.kernel.len() + l.adapter.len())
                .sum::<usize>()
    }

    /// Flat view: network, logits, then per level kernel and adapter.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.net);
        out.extend_from_slice(&self.aggregator.logits);
        for l in &self.aligners.levels {
            out.extend_from_slice(&l.kernel);
            out.extend_from_slice(&l.adapter);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!(
                "flat vector has {} entries, model has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(&mut self.net);
        take(&mut self.aggregator.logits);
        for l in &mut self.aligners.levels {
            take(&mut l.kernel);
            take(&mut l.adapter);
        }
        Ok(())
    }

    /// Named flat-index ranges, one per parameter tensor.
    pub fn groups(&self) -> Vec<(String, Range<usize>)> {
        let mut g = self.layout().groups();
        let mut off = self.net.len();
        let n = self.aggregator.logits.len();
        g.push(("aggregator.logits".into(), off..off + n));
        off += n;
        for (k, l) in self.aligners.levels.iter().enumerate() {
            if !l.kernel.is_empty() {
                g.push((format!("aligner{k}.kernel"), off..off + l.kernel.len()));
            }
            off += l.kernel.len();
            g.push((format!("aligner{k}.adapter"), off..off + l.adapter.len()));
            off += l.adapter.len();
        }
        g
    }
}
