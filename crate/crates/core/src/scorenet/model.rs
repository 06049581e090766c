//! Forward and reverse-mode passes of the toy multi-resolution score network
//! `s(x_t, y, f, sigma)`.
//!
//! Encoder level `k` applies a convolution (3x3 at full resolution, then
//! non-overlapping stride-`d_k / d_{k-1}` convolutions), adds the
//! conditioning feature `f_k` broadcast over frequency through its own
//! pointwise weights (channel concatenation followed by a pointwise map),
//! the projected noise-level features and a frequency-position bias, then
//! applies SiLU. The decoder mirrors it with upsampled pointwise maps and
//! skip connections; the two output channels are turned into a complex
//! score according to [`OutputParam`].

use num_complex::Complex64;

use super::params::{NetLayout, OutputParam, ScoreNetParams, INPUT_CHANNELS};
use super::tensor::{
    conv_backward, conv_forward, silu, silu_backward, upsample, upsample_backward, ConvGeom,
    Tensor,
};
use crate::conditioner::{
    align_full, align_full_backward, ConditioningSet, Feature, LayerEmbeddings,
};
use crate::error::{Error, Result};
use crate::sde::NoiseLevel;
use crate::signal::{ComplexSpectrogram, N_BINS};

/// Sinusoidal features of `ln sigma`.
pub fn time_features(sigma: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let s = sigma.ln();
    let mut out = Vec::with_capacity(dim);
    for j in 0..half {
        let omega = 2f64.powf(6.0 * j as f64 / (half.max(2) - 1) as f64);
        out.push((omega * s).sin());
    }
    for j in 0..half {
        let omega = 2f64.powf(6.0 * j as f64 / (half.max(2) - 1) as f64);
        out.push((omega * s).cos());
    }
    out
}

/// Activations retained for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    level: NoiseLevel,
    frames: usize,
    temb: Vec<f64>,
    input: Tensor,
    cond: ConditioningSet,
    enc_pre: Vec<Tensor>,
    enc_post: Vec<Tensor>,
    mid_pre: Option<Tensor>,
    /// Output of the coarsest level after the optional residual block.
    top: Tensor,
    dec_pre: Vec<Tensor>,
    dec_post: Vec<Tensor>,
}

fn pointwise(cin: usize, cout: usize) -> ConvGeom {
    ConvGeom {
        cin,
        cout,
        k: 1,
        stride: 1,
        pad: 0,
    }
}

fn add_channel_bias(t: &mut Tensor, bias: impl Fn(usize) -> f64) {
    for c in 0..t.c {
        let b = bias(c);
        t.plane_mut(c).iter_mut().for_each(|v| *v += b);
    }
}

fn check_inputs(
    params: &ScoreNetParams,
    x_t: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    cond: &ConditioningSet,
    level: NoiseLevel,
) -> Result<()> {
    x_t.check_compatible(y)?;
    let sigma = level.sigma;
    if !x_t.is_compressed() {
        return Err(Error::CompressionState(
            "score network expects compressed spectrograms".into(),
        ));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise level must be positive, got {sigma}")));
    }
    if !(level.decay > 0.0 && level.decay <= 1.0) {
        return Err(Error::invalid(format!("mean decay must lie in (0, 1], got {}", level.decay)));
    }
    let m = params.shape.frame_multiple();
    if x_t.frames() % m != 0 {
        return Err(Error::shape(format!(
            "{} frames is not a multiple of {m}",
            x_t.frames()
        )));
    }
    let targets = params.shape.level_targets(x_t.frames());
    if cond.features.len() != targets.len() {
        return Err(Error::shape("conditioning level count"));
    }
    for (f, t) in cond.features.iter().zip(&targets) {
        if f.channels != t.channels || f.frames != t.frames {
            return Err(Error::shape(format!(
                "conditioning feature {}x{} does not match level {}x{}",
                f.channels, f.frames, t.channels, t.frames
            )));
        }
    }
    Ok(())
}

pub fn forward(
    params: &ScoreNetParams,
    x_t: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    cond: &ConditioningSet,
    level: NoiseLevel,
) -> Result<(ComplexSpectrogram, ForwardCache)> {
    let sigma = level.sigma;
    check_inputs(params, x_t, y, cond, level)?;
    let shape = &params.shape;
    let layout: NetLayout = params.layout();
    let p = &params.net;
    let frames = x_t.frames();
    let temb = time_features(sigma, shape.time_embed_dim);

    let mut input = Tensor::zeros(INPUT_CHANNELS, N_BINS, frames);
    let xp = std::env::var("XP").is_ok();
    for (i, (a, b)) in x_t.data().iter().zip(y.data()).enumerate() {
        let a = &if xp { (a - b) / sigma } else { *a };
        input.data[i] = a.re;
        input.data[N_BINS * frames + i] = a.im;
        input.data[2 * N_BINS * frames + i] = b.re;
        input.data[3 * N_BINS * frames + i] = b.im;
    }

    let mut enc_pre = Vec::with_capacity(shape.levels());
    let mut enc_post: Vec<Tensor> = Vec::with_capacity(shape.levels());
    for (k, slot) in layout.enc.iter().enumerate() {
        let prev = if k == 0 { &input } else { &enc_post[k - 1] };
        let c = shape.channels[k];
        let (h, w) = slot.conv.geom.out_dims(prev.h, prev.w);
        let mut pre = Tensor::zeros(c, h, w);
        conv_forward(&slot.conv.geom, prev, &p[slot.conv.w.clone()], &mut pre);

        let e = shape.time_embed_dim;
        let wt = &p[slot.temb.clone()];
        let b = &p[slot.conv.b.clone()];
        add_channel_bias(&mut pre, |ch| {
            b[ch] + (0..e).map(|j| wt[ch * e + j] * temb[j]).sum::<f64>()
        });

        let fb = &p[slot.fbias.clone()];
        let wc = &p[slot.cond.clone()];
        let feat = &cond.features[k];
        let mut row = vec![0.0; w];
        for ch in 0..c {
            row.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..feat.channels {
                let a = wc[ch * feat.channels + j];
                for (r, &f) in row.iter_mut().zip(&feat.data[j * w..(j + 1) * w]) {
                    *r += a * f;
                }
            }
            let plane = pre.plane_mut(ch);
            for fi in 0..h {
                let bias = fb[ch * slot.bins + fi];
                for (v, &r) in plane[fi * w..(fi + 1) * w].iter_mut().zip(&row) {
                    *v += bias + r;
                }
            }
        }
        enc_post.push(silu(&pre));
        enc_pre.push(pre);
    }

    let last = enc_post.last().unwrap();
    let (mid_pre, top) = match &layout.mid {
        Some(slot) => {
            let mut pre = last.same_shape();
            conv_forward(&slot.geom, last, &p[slot.w.clone()], &mut pre);
            let b = &p[slot.b.clone()];
            add_channel_bias(&mut pre, |ch| b[ch]);
            let mut top = silu(&pre);
            top.data.iter_mut().zip(&last.data).for_each(|(t, h)| *t += h);
            (Some(pre), top)
        }
        None => (None, last.clone()),
    };

    let levels = shape.levels();
    let mut dec_pre: Vec<Option<Tensor>> = vec![None; levels.saturating_sub(1)];
    let mut dec_post: Vec<Option<Tensor>> = vec![None; levels.saturating_sub(1)];
    for k in (0..levels.saturating_sub(1)).rev() {
        let slot = &layout.dec[k];
        let c = shape.channels[k];
        let coarse_in = if k + 1 == levels - 1 {
            &top
        } else {
            dec_post[k + 1].as_ref().unwrap()
        };
        let mut coarse = Tensor::zeros(c, coarse_in.h, coarse_in.w);
        conv_forward(&pointwise(coarse_in.c, c), coarse_in, &p[slot.up.clone()], &mut coarse);
        let mut pre = upsample(&coarse, slot.scale);
        conv_forward(&pointwise(c, c), &enc_post[k], &p[slot.skip.clone()], &mut pre);
        let b = &p[slot.bias.clone()];
        add_channel_bias(&mut pre, |ch| b[ch]);
        dec_post[k] = Some(silu(&pre));
        dec_pre[k] = Some(pre);
    }
    let dec_pre: Vec<Tensor> = dec_pre.into_iter().map(Option::unwrap).collect();
    let dec_post: Vec<Tensor> = dec_post.into_iter().map(Option::unwrap).collect();

    let head = dec_post.first().unwrap_or(&top);
    let mut out = Tensor::zeros(2, N_BINS, frames);
    conv_forward(&pointwise(shape.channels[0], 2), head, &p[layout.out_w.clone()], &mut out);
    let ob = &p[layout.out_b.clone()];
    add_channel_bias(&mut out, |ch| ob[ch]);

    let n = N_BINS * frames;
    let (xd, yd) = (x_t.data(), y.data());
    let data = (0..n)
        .map(|i| {
            let o = Complex64::new(out.data[i], out.data[n + i]);
            match shape.output {
                OutputParam::Noise => o / sigma,
                OutputParam::Mean => (o * level.decay - (xd[i] - yd[i])) / (sigma * sigma),
            }
        })
        .collect();
    let score = ComplexSpectrogram::new(data, frames, true)?;
    let cache = ForwardCache {
        level,
        frames,
        temb,
        input,
        cond: cond.clone(),
        enc_pre,
        enc_post,
        mid_pre,
        top,
        dec_pre,
        dec_post,
    };
    Ok((score, cache))
}

fn channel_sums(t: &Tensor) -> Vec<f64> {
    (0..t.c).map(|c| t.plane(c).iter().sum()).collect()
}

/// Reverse pass. `dscore` holds `dL/dRe` and `dL/dIm` of every score bin.
/// Returns the gradient of the network weights (laid out like
/// `params.net`) and of each conditioning feature.
pub fn backward(
    params: &ScoreNetParams,
    cache: &ForwardCache,
    dscore: &ComplexSpectrogram,
) -> Result<(Vec<f64>, Vec<Feature>)> {
    if dscore.frames() != cache.frames {
        return Err(Error::shape("gradient does not match the cached forward pass"));
    }
    let shape = &params.shape;
    let layout = params.layout();
    let p = &params.net;
    let mut grad = vec![0.0; p.len()];
    let levels = shape.levels();
    let frames = cache.frames;
    let n = N_BINS * frames;

    let sigma = cache.level.sigma;
    let sc = match shape.output {
        OutputParam::Noise => 1.0 / sigma,
        OutputParam::Mean => cache.level.decay / (sigma * sigma),
    };
    let mut dout = Tensor::zeros(2, N_BINS, frames);
    for (i, g) in dscore.data().iter().enumerate() {
        dout.data[i] = g.re * sc;
        dout.data[n + i] = g.im * sc;
    }
    for (ch, s) in channel_sums(&dout).into_iter().enumerate() {
        grad[layout.out_b.start + ch] += s;
    }
    let head = cache.dec_post.first().unwrap_or(&cache.top);
    let mut dcur = head.same_shape();
    conv_backward(
        &pointwise(shape.channels[0], 2),
        head,
        &p[layout.out_w.clone()],
        &dout,
        &mut grad[layout.out_w.clone()],
        Some(&mut dcur),
    );

    let mut dh: Vec<Tensor> = cache.enc_post.iter().map(Tensor::same_shape).collect();
    for k in 0..levels.saturating_sub(1) {
        let slot = &layout.dec[k];
        let c = shape.channels[k];
        let dpre = silu_backward(&cache.dec_pre[k], &dcur);
        for (ch, s) in channel_sums(&dpre).into_iter().enumerate() {
            grad[slot.bias.start + ch] += s;
        }
        conv_backward(
            &pointwise(c, c),
            &cache.enc_post[k],
            &p[slot.skip.clone()],
            &dpre,
            &mut grad[slot.skip.clone()],
            Some(&mut dh[k]),
        );
        let dcoarse = upsample_backward(&dpre, slot.scale);
        let coarse_in = if k + 1 == levels - 1 {
            &cache.top
        } else {
            &cache.dec_post[k + 1]
        };
        let mut dnext = coarse_in.same_shape();
        conv_backward(
            &pointwise(coarse_in.c, c),
            coarse_in,
            &p[slot.up.clone()],
            &dcoarse,
            &mut grad[slot.up.clone()],
            Some(&mut dnext),
        );
        dcur = dnext;
    }

    // dcur is now the gradient of `top`
    let last = levels - 1;
    match (&layout.mid, &cache.mid_pre) {
        (Some(slot), Some(pre)) => {
            let dpre = silu_backward(pre, &dcur);
            for (ch, s) in channel_sums(&dpre).into_iter().enumerate() {
                grad[slot.b.start + ch] += s;
            }
            let mut dlast = cache.enc_post[last].same_shape();
            conv_backward(
                &slot.geom,
                &cache.enc_post[last],
                &p[slot.w.clone()],
                &dpre,
                &mut grad[slot.w.clone()],
                Some(&mut dlast),
            );
            for ((d, a), b) in dh[last].data.iter_mut().zip(&dcur.data).zip(&dlast.data) {
                *d += a + b;
            }
        }
        _ => {
            for (d, a) in dh[last].data.iter_mut().zip(&dcur.data) {
                *d += a;
            }
        }
    }

    let mut dfeat: Vec<Feature> = cache
        .cond
        .features
        .iter()
        .map(|f| Feature::zeros(f.channels, f.frames))
        .collect();
    for k in (0..levels).rev() {
        let slot = &layout.enc[k];
        let c = shape.channels[k];
        let dpre = silu_backward(&cache.enc_pre[k], &dh[k]);
        let (h, w) = (dpre.h, dpre.w);
        let e = shape.time_embed_dim;
        let sums = channel_sums(&dpre);
        for ch in 0..c {
            grad[slot.conv.b.start + ch] += sums[ch];
            for j in 0..e {
                grad[slot.temb.start + ch * e + j] += sums[ch] * cache.temb[j];
            }
        }
        let feat = &cache.cond.features[k];
        let mut over_freq = vec![0.0; w];
        for ch in 0..c {
            over_freq.iter_mut().for_each(|v| *v = 0.0);
            let plane = dpre.plane(ch);
            for fi in 0..h {
                let row = &plane[fi * w..(fi + 1) * w];
                grad[slot.fbias.start + ch * slot.bins + fi] += row.iter().sum::<f64>();
                for (o, &v) in over_freq.iter_mut().zip(row) {
                    *o += v;
                }
            }
            for j in 0..feat.channels {
                let fr = &feat.data[j * w..(j + 1) * w];
                grad[slot.cond.start + ch * feat.channels + j] +=
                    over_freq.iter().zip(fr).map(|(a, b)| a * b).sum::<f64>();
                let wv = p[slot.cond.start + ch * feat.channels + j];
                for (d, &o) in dfeat[k].data[j * w..(j + 1) * w].iter_mut().zip(&over_freq) {
                    *d += wv * o;
                }
            }
        }
        let prev = if k == 0 { &cache.input } else { &cache.enc_post[k - 1] };
        let (before, _) = dh.split_at_mut(k);
        conv_backward(
            &slot.conv.geom,
            prev,
            &p[slot.conv.w.clone()],
            &dpre,
            &mut grad[slot.conv.w.clone()],
            before.last_mut(),
        );
    }
    Ok((grad, dfeat))
}

/// Conditioning features for a clip of `frames` audio frames, or zeros
/// when no embeddings are given.
pub fn conditioning(
    params: &ScoreNetParams,
    emb: Option<&LayerEmbeddings>,
    frames: usize,
) -> Result<ConditioningSet> {
    let targets = params.shape.level_targets(frames);
    match emb {
        Some(e) => {
            if e.layers() != params.shape.cond_layers || e.dim() != params.shape.cond_dim {
                return Err(Error::shape(format!(
                    "embeddings are {}x_x{}, network expects {}x_x{}",
                    e.layers(),
                    e.dim(),
                    params.shape.cond_layers,
                    params.shape.cond_dim
                )));
            }
            align_full(e, &params.aggregator, &params.aligners, &targets)
        }
        None => Ok(ConditioningSet::zeros(&targets)),
    }
}

/// Gradients of every parameter, including aggregation logits and aligner
/// weights, accumulated into `grads`.
pub fn backward_full(
    params: &ScoreNetParams,
    emb: Option<&LayerEmbeddings>,
    cache: &ForwardCache,
    dscore: &ComplexSpectrogram,
    grads: &mut ScoreNetParams,
) -> Result<()> {
    let (net, dfeat) = backward(params, cache, dscore)?;
    grads.net.iter_mut().zip(&net).for_each(|(g, d)| *g += d);
    if let Some(e) = emb {
        align_full_backward(
            e,
            &params.aggregator,
            &params.aligners,
            &dfeat,
            &mut grads.aggregator,
            &mut grads.aligners,
        )?;
    }
    Ok(())
}
