//! Denoising score matching with Adam over token-bucketed batches.

mod adam;
mod batching;
mod loss;

pub use adam::{AdamConfig, AdamState};
pub use batching::{bucket_batches, BatchPlan, BUCKET_TOKENS};
pub use loss::{dsm_loss, sample_t, LossWeighting};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditioner::{ConditioningMode, LayerEmbeddings};
use crate::error::{Error, Result};
use crate::scorenet::{backward_full, conditioning, forward, Checkpoint, ScoreNetParams};
use crate::sde::{sample_forward_with, SdeParams};
use crate::signal::{compress, stft, ComplexSpectrogram, StftConfig, Waveform};

/// Mixes seeds and counters into one well-spread seed (SplitMix64 finaliser).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Seeded permutation with no fixed points (Sattolo's algorithm).
pub fn derangement(n: usize, seed: u64) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::invalid("shuffled embeddings need at least two items"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rand::Rng::gen_range(&mut rng, 0..i);
        p.swap(i, j);
    }
    Ok(p)
}

/// Compressed clean/noisy spectrogram pair with its embeddings.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub x0: ComplexSpectrogram,
    pub y: ComplexSpectrogram,
    pub emb: LayerEmbeddings,
}

impl TrainItem {
    /// Frames are zero-padded up to a multiple of `frame_multiple`.
    pub fn from_waveforms(
        id: impl Into<String>,
        clean: &Waveform,
        noisy: &Waveform,
        emb: LayerEmbeddings,
        stft_cfg: &StftConfig,
        frame_multiple: usize,
    ) -> Result<Self> {
        let id = id.into();
        if clean.len() != noisy.len() {
            return Err(Error::shape(format!(
                "{id}: clean has {} samples, noisy {}",
                clean.len(),
                noisy.len()
            )));
        }
        let x0 = padded_spec(clean, stft_cfg, frame_multiple)?;
        let y = padded_spec(noisy, stft_cfg, frame_multiple)?;
        Ok(Self { id, x0, y, emb })
    }

    pub fn tokens(&self) -> usize {
        self.x0.frames()
    }
}

/// Compressed STFT with frames zero-padded up to a multiple of `m`.
pub fn padded_spec(w: &Waveform, cfg: &StftConfig, m: usize) -> Result<ComplexSpectrogram> {
    let s = compress(&stft(w, cfg)?)?;
    let frames = s.frames().div_ceil(m) * m;
    s.with_frames(frames)
}

/// Embeddings fed to item `i` under `mode`; `perm` is the derangement used
/// by the shuffled mode.
pub fn embedding_for<'a>(
    mode: ConditioningMode,
    embs: &[&'a LayerEmbeddings],
    perm: Option<&[usize]>,
    i: usize,
) -> Result<Option<&'a LayerEmbeddings>> {
    Ok(match mode {
        ConditioningMode::Av => Some(embs[i]),
        ConditioningMode::AudioOnly => None,
        ConditioningMode::ShuffledEmb => {
            let perm = perm.ok_or_else(|| Error::invalid("shuffled mode needs a permutation"))?;
            Some(embs[perm[i]])
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    /// Upper bound on STFT frames per batch.
    pub max_tokens: usize,
    pub steps: usize,
    pub seed: u64,
    pub mode: ConditioningMode,
    /// Process batch items on the rayon pool; results are identical.
    pub parallel: bool,
    pub weighting: LossWeighting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            max_tokens: 2000,
            steps: 2000,
            seed: 0,
            mode: ConditioningMode::Av,
            parallel: false,
            weighting: LossWeighting::Score,
        }
    }
}

impl TrainConfig {
    /// Budget of the default experiment, sized for a single laptop core.
    pub fn toy() -> Self {
        Self {
            adam: AdamConfig {
                learning_rate: 3e-3,
                ..AdamConfig::default()
            },
            max_tokens: 1000,
            steps: 1200,
            weighting: LossWeighting::Mean,
            ..Self::default()
        }
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub epoch: u64,
    /// Batch mean of the unweighted DSM loss.
    pub loss: f64,
    /// Batch mean of the weighted objective that was minimised.
    pub objective: f64,
    pub lr: f64,
    pub tokens: usize,
    pub wall_ms: u64,
}

/// Unweighted loss, weighted objective and the objective's gradient for
/// one item at the noise draw derived from `seed`.
pub fn item_gradient(
    params: &ScoreNetParams,
    sde: &SdeParams,
    item: &TrainItem,
    emb: Option<&LayerEmbeddings>,
    weighting: LossWeighting,
    seed: u64,
) -> Result<(f64, f64, ScoreNetParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = sample_t(&mut rng, sde);
    let fs = sample_forward_with(&item.x0, &item.y, t, sde, &mut rng)?;
    let level = sde.level(t);
    let cond = conditioning(params, emb, item.tokens())?;
    let (score, cache) = forward(params, &fs.x_t, &item.y, &cond, level)?;
    let (loss, dscore) = dsm_loss(&score, &fs.z, fs.sigma)?;
    let w = weighting.weight(level);
    let mut grads = params.zeros_like();
    backward_full(params, emb, &cache, &dscore.scale(w), &mut grads)?;
    Ok((loss, w * loss, grads))
}

fn round_to_f32(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

/// Training state: parameters, optimizer moments and the position in the
/// seeded epoch schedule.
pub struct Trainer<'a> {
    pub params: ScoreNetParams,
    pub adam: AdamState,
    pub sde: SdeParams,
    pub cfg: TrainConfig,
    items: &'a [TrainItem],
    perm: Option<Vec<usize>>,
    epoch: u64,
    plan: BatchPlan,
    cursor: usize,
}

impl<'a> Trainer<'a> {
    /// Parameters and moments are kept `f32`-representable so checkpoints
    /// reload bit-exactly.
    pub fn new(
        mut params: ScoreNetParams,
        sde: SdeParams,
        cfg: TrainConfig,
        items: &'a [TrainItem],
    ) -> Result<Self> {
        cfg.adam.validate()?;
        sde.validate()?;
        if items.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        let perm = match cfg.mode {
            ConditioningMode::ShuffledEmb => Some(derangement(items.len(), mix_seed(&[cfg.seed, 1]))?),
            _ => None,
        };
        let mut flat = params.to_flat();
        round_to_f32(&mut flat);
        params.set_flat(&flat)?;
        let n = flat.len();
        let mut t = Self {
            params,
            adam: AdamState::new(n),
            sde,
            cfg,
            items,
            perm,
            epoch: 0,
            plan: BatchPlan { batches: Vec::new() },
            cursor: 0,
        };
        t.plan = t.plan_for(0)?;
        Ok(t)
    }

    /// Continues from a checkpoint, replaying the batch schedule up to its
    /// step.
    pub fn resume(ckpt: Checkpoint, cfg: TrainConfig, items: &'a [TrainItem]) -> Result<Self> {
        if ckpt.mode != cfg.mode {
            return Err(Error::invalid(format!(
                "checkpoint was trained in {} mode, config asks for {}",
                ckpt.mode, cfg.mode
            )));
        }
        let mut t = Self::new(ckpt.params, ckpt.sde, cfg, items)?;
        if let Some((m, v)) = ckpt.moments {
            t.adam = AdamState {
                m,
                v,
                step: ckpt.step,
            };
        } else if ckpt.step > 0 {
            return Err(Error::invalid("checkpoint has steps but no optimizer moments"));
        }
        for _ in 0..ckpt.step {
            t.next_batch()?;
        }
        Ok(t)
    }

    pub fn checkpoint(&self, config_hash: &str) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            sde: self.sde,
            mode: self.cfg.mode,
            config_hash: config_hash.to_string(),
            step: self.adam.step,
            moments: Some((self.adam.m.clone(), self.adam.v.clone())),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    fn plan_for(&self, epoch: u64) -> Result<BatchPlan> {
        let lens: Vec<(usize, usize)> = self.items.iter().map(TrainItem::tokens).enumerate().collect();
        bucket_batches(&lens, self.cfg.max_tokens, mix_seed(&[self.cfg.seed, 2, epoch]))
    }

    fn next_batch(&mut self) -> Result<(u64, Vec<usize>)> {
        if self.cursor == self.plan.len() {
            self.epoch += 1;
            self.plan = self.plan_for(self.epoch)?;
            self.cursor = 0;
        }
        let b = self.plan.batches[self.cursor].clone();
        self.cursor += 1;
        Ok((self.epoch, b))
    }

    /// One optimizer step on the next batch.
    pub fn step(&mut self) -> Result<LogEntry> {
        let start = Instant::now();
        let (epoch, batch) = self.next_batch()?;
        let step = self.adam.step + 1;
        let embs: Vec<&LayerEmbeddings> = self.items.iter().map(|it| &it.emb).collect();
        let run = |&i: &usize| -> Result<(f64, f64, ScoreNetParams)> {
            let item = &self.items[i];
            let emb = embedding_for(self.cfg.mode, &embs, self.perm.as_deref(), i)?;
            let seed = mix_seed(&[self.cfg.seed, 3, step, i as u64]);
            item_gradient(&self.params, &self.sde, item, emb, self.cfg.weighting, seed)
                .map_err(|e| Error::Other(format!("item {}: {e}", item.id)))
        };
        let results: Vec<Result<(f64, f64, ScoreNetParams)>> = if self.cfg.parallel {
            batch.par_iter().map(run).collect()
        } else {
            batch.iter().map(run).collect()
        };
        // fixed-order reduction keeps parallel runs identical to serial ones
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.adam.m.len()];
        let (mut loss, mut objective) = (0.0, 0.0);
        for r in results {
            let (l, o, g) = r?;
            loss += l;
            objective += o;
            grad.iter_mut().zip(g.to_flat()).for_each(|(a, b)| *a += b);
        }
        grad.iter_mut().for_each(|g| *g /= n);
        let mut flat = self.params.to_flat();
        self.adam.step(&mut flat, &grad, &self.cfg.adam)?;
        round_to_f32(&mut flat);
        round_to_f32(&mut self.adam.m);
        round_to_f32(&mut self.adam.v);
        self.params.set_flat(&flat)?;
        Ok(LogEntry {
            step,
            epoch,
            loss: loss / n,
            objective: objective / n,
            lr: self.cfg.adam.learning_rate,
            tokens: batch.iter().map(|&i| self.items[i].tokens()).sum(),
            wall_ms: start.elapsed().as_millis() as u64,
        })
    }

    /// Runs until `cfg.steps` optimizer steps have been taken.
    pub fn run(&mut self, mut log: impl FnMut(&LogEntry) -> Result<()>) -> Result<()> {
        while (self.adam.step as usize) < self.cfg.steps {
            let entry = self.step()?;
            log(&entry)?;
        }
        Ok(())
    }

    /// Runs one full pass over the current epoch's remaining batches.
    pub fn train_epoch(&mut self) -> Result<EpochStats> {
        let start = Instant::now();
        let epoch = self.epoch;
        let mut losses = Vec::new();
        while self.epoch == epoch && self.cursor < self.plan.len() {
            losses.push(self.step()?.loss);
        }
        if self.cursor == self.plan.len() {
            self.epoch += 1;
            self.plan = self.plan_for(self.epoch)?;
            self.cursor = 0;
        }
        Ok(EpochStats {
            epoch,
            batches: losses.len(),
            mean_loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
            wall_ms: start.elapsed().as_millis() as u64,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: u64,
    pub batches: usize,
    pub mean_loss: f64,
    pub wall_ms: u64,
}

/// Mean DSM loss over `draws` fixed noise draws per item.
pub fn validate(
    items: &[TrainItem],
    params: &ScoreNetParams,
    sde: &SdeParams,
    mode: ConditioningMode,
    seed: u64,
    draws: usize,
) -> Result<f64> {
    if items.is_empty() || draws == 0 {
        return Err(Error::invalid("empty validation set"));
    }
    let perm = match mode {
        ConditioningMode::ShuffledEmb => Some(derangement(items.len(), mix_seed(&[seed, 1]))?),
        _ => None,
    };
    let embs: Vec<&LayerEmbeddings> = items.iter().map(|it| &it.emb).collect();
    let mut total = 0.0;
    for (i, item) in items.iter().enumerate() {
        let emb = embedding_for(mode, &embs, perm.as_deref(), i)?;
        let cond = conditioning(params, emb, item.tokens())?;
        for d in 0..draws {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 4, i as u64, d as u64]));
            let t = sample_t(&mut rng, sde);
            let fs = sample_forward_with(&item.x0, &item.y, t, sde, &mut rng)?;
            let (score, _) = forward(params, &fs.x_t, &item.y, &cond, sde.level(t))?;
            total += dsm_loss(&score, &fs.z, fs.sigma)?.0;
        }
    }
    Ok(total / (items.len() * draws) as f64)
}
