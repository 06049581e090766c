//! Synthetic paired corpus: clean pseudo-speech, noisy mixtures at
//! stratified SNRs, symbol labels and mock embeddings.
//!
//! On-disk layout: `clean/<id>.wav`, `noisy/<id>.wav`, `labels/<id>.json`,
//! `emb/<id>.ave` and `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioner::{mock_embeddings, read_embeddings, write_embeddings, LayerEmbeddings, MockConfig};
use crate::error::{Error, Result};
use crate::signal::wav::{read_wav, write_wav};
use crate::signal::{
    measure_snr_db, mix_at_snr, synth_clean, synth_noise, NoiseSpec, SegmentLabels, SpeechSpec,
    Waveform, SAMPLE_RATE, VIDEO_FRAME_SAMPLES,
};
use crate::training::mix_seed;

pub const META_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub seed: u64,
    /// `duration_s` is replaced per item.
    pub speech: SpeechSpec,
    /// `duration_s` is replaced per item.
    pub noise: NoiseSpec,
    pub mock: MockConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 64,
            n_test: 16,
            min_duration_s: 2.0,
            max_duration_s: 4.0,
            snr_min_db: -6.0,
            snr_max_db: 12.0,
            seed: 0,
            speech: SpeechSpec::default(),
            noise: NoiseSpec::default(),
            mock: MockConfig::default(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train + self.n_test == 0 {
            return Err(Error::invalid("corpus must contain at least one item"));
        }
        if !(2.0 <= self.min_duration_s && self.min_duration_s <= self.max_duration_s && self.max_duration_s <= 12.0) {
            return Err(Error::invalid("durations must satisfy 2 <= min <= max <= 12 s"));
        }
        if !(self.snr_min_db.is_finite() && self.snr_max_db.is_finite() && self.snr_min_db <= self.snr_max_db) {
            return Err(Error::invalid("bad SNR range"));
        }
        self.speech.validate()
    }

    pub fn len(&self) -> usize {
        self.n_train + self.n_test
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Everything needed to regenerate one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub id: String,
    pub split: Split,
    pub duration_s: f64,
    pub snr_db: f64,
    pub speech_seed: u64,
    pub noise_seed: u64,
    pub mix_seed: u64,
    pub emb_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub version: u32,
    pub config_hash: String,
    pub config: CorpusConfig,
    pub items: Vec<ItemMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub meta: ItemMeta,
    pub clean: Waveform,
    pub noisy: Waveform,
    pub labels: SegmentLabels,
    pub emb: LayerEmbeddings,
}

/// Label file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFile {
    pub frames: Vec<u32>,
    pub alphabet_size: usize,
    pub transcript: Vec<String>,
}

/// `n` SNRs, one uniform draw inside each of `n` equal strata, in shuffled
/// order.
pub fn stratified_snrs(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * (i as f64 + rng.gen::<f64>()) / n as f64)
        .collect();
    v.shuffle(&mut rng);
    v
}

/// Item plan: ids, splits, durations (whole 40 ms frames), SNRs and seeds.
pub fn plan_corpus(cfg: &CorpusConfig) -> Result<Vec<ItemMeta>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 10]));
    let frame_s = VIDEO_FRAME_SAMPLES as f64 / SAMPLE_RATE as f64;
    let (f_lo, f_hi) = (
        (cfg.min_duration_s / frame_s).ceil() as usize,
        (cfg.max_duration_s / frame_s).floor() as usize,
    );
    let mut items = Vec::with_capacity(cfg.len());
    for (split, n, tag) in [(Split::Train, cfg.n_train, 11u64), (Split::Test, cfg.n_test, 12)] {
        let snrs = stratified_snrs(n, cfg.snr_min_db, cfg.snr_max_db, mix_seed(&[cfg.seed, tag]));
        for (i, snr) in snrs.into_iter().enumerate() {
            let k = items.len() as u64;
            let frames = rng.gen_range(f_lo..=f_hi.max(f_lo));
            let name = match split {
                Split::Train => "train",
                Split::Test => "test",
            };
            items.push(ItemMeta {
                id: format!("{name}_{i:04}"),
                split,
                duration_s: frames as f64 * frame_s,
                snr_db: snr,
                speech_seed: mix_seed(&[cfg.seed, 20, k]),
                noise_seed: mix_seed(&[cfg.seed, 21, k]),
                mix_seed: mix_seed(&[cfg.seed, 22, k]),
                emb_seed: mix_seed(&[cfg.seed, 23, k]),
            });
        }
    }
    Ok(items)
}

/// Regenerates one item in double precision.
pub fn synth_item(cfg: &CorpusConfig, meta: &ItemMeta) -> Result<CorpusItem> {
    let speech = SpeechSpec {
        duration_s: meta.duration_s,
        ..cfg.speech.clone()
    };
    let (clean, labels) = synth_clean(&speech, meta.speech_seed)?;
    let noise = synth_noise(
        &NoiseSpec {
            duration_s: meta.duration_s + 1.0,
            ..cfg.noise.clone()
        },
        meta.noise_seed,
    )?;
    let (noisy, _) = mix_at_snr(&clean, &noise, meta.snr_db, meta.mix_seed)?;
    let emb = mock_embeddings(&labels, &cfg.mock, meta.emb_seed)?;
    Ok(CorpusItem {
        meta: meta.clone(),
        clean,
        noisy,
        labels,
        emb,
    })
}

pub fn synth_corpus(cfg: &CorpusConfig) -> Result<Vec<CorpusItem>> {
    plan_corpus(cfg)?.iter().map(|m| synth_item(cfg, m)).collect()
}

/// SNR of a regenerated item measured from its clean and noisy signals.
pub fn measured_snr_db(item: &CorpusItem) -> f64 {
    let noise: Vec<f64> = item
        .noisy
        .samples()
        .iter()
        .zip(item.clean.samples())
        .map(|(y, x)| y - x)
        .collect();
    measure_snr_db(item.clean.samples(), &noise)
}

fn file(dir: &Path, sub: &str, id: &str, ext: &str) -> PathBuf {
    dir.join(sub).join(format!("{id}.{ext}"))
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes the corpus; WAV files are 16-bit.
pub fn write_corpus(dir: &Path, cfg: &CorpusConfig, config_hash: &str, items: &[CorpusItem]) -> Result<()> {
    for sub in ["clean", "noisy", "labels", "emb"] {
        create_dir(&dir.join(sub))?;
    }
    for it in items {
        let id = &it.meta.id;
        write_wav(file(dir, "clean", id, "wav"), &it.clean)?;
        write_wav(file(dir, "noisy", id, "wav"), &it.noisy)?;
        let labels = LabelFile {
            frames: it.labels.frames.clone(),
            alphabet_size: it.labels.alphabet_size,
            transcript: it.labels.transcript(),
        };
        let p = file(dir, "labels", id, "json");
        fs::write(&p, serde_json::to_vec_pretty(&labels)?).map_err(|e| Error::io(&p, e))?;
        write_embeddings(file(dir, "emb", id, "ave"), &it.emb)?;
    }
    let meta = CorpusMeta {
        version: META_VERSION,
        config_hash: config_hash.to_string(),
        config: cfg.clone(),
        items: items.iter().map(|it| it.meta.clone()).collect(),
    };
    let p = dir.join("meta.json");
    fs::write(&p, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&p, e))
}

pub fn read_meta(dir: &Path) -> Result<CorpusMeta> {
    let p = dir.join("meta.json");
    let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    let meta: CorpusMeta =
        serde_json::from_slice(&bytes).map_err(|e| Error::format(&p, e.to_string()))?;
    if meta.version != META_VERSION {
        return Err(Error::format(&p, format!("unsupported corpus version {}", meta.version)));
    }
    Ok(meta)
}

pub fn read_labels(path: &Path) -> Result<SegmentLabels> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let l: LabelFile =
        serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(SegmentLabels {
        frames: l.frames,
        alphabet_size: l.alphabet_size,
    })
}

/// Loads the items of `split` (all items when `None`) from disk.
pub fn load_corpus(dir: &Path, split: Option<Split>) -> Result<(CorpusMeta, Vec<CorpusItem>)> {
    let meta = read_meta(dir)?;
    let mut items = Vec::new();
    for m in meta.items.iter().filter(|m| split.map_or(true, |s| s == m.split)) {
        let id = &m.id;
        let clean = read_wav(file(dir, "clean", id, "wav"))?;
        let noisy = read_wav(file(dir, "noisy", id, "wav"))?;
        if clean.len() != noisy.len() {
            return Err(Error::format(
                file(dir, "noisy", id, "wav"),
                "clean and noisy lengths differ",
            ));
        }
        items.push(CorpusItem {
            meta: m.clone(),
            clean,
            noisy,
            labels: read_labels(&file(dir, "labels", id, "json"))?,
            emb: read_embeddings(file(dir, "emb", id, "ave"))?,
        });
    }
    Ok((meta, items))
}
