//! Synthetic stand-ins for speech and noise recordings.
//!
//! Speech is a sequence of "pseudo-phones": segments of a harmonic tone
//! complex whose spectral envelope has two formant-like peaks. Each symbol of
//! the alphabet owns one (F0, F1, F2) triple, so the symbol sequence is both
//! recoverable from the audio and available as ground truth.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Samples per 25 Hz label frame.
pub const VIDEO_FRAME_SAMPLES: usize = 640;

/// Largest supported alphabet.
pub const MAX_ALPHABET: usize = 16;

const F1_GRID: [f64; 4] = [300.0, 480.0, 700.0, 950.0];
const F2_GRID: [f64; 4] = [1250.0, 1750.0, 2350.0, 3050.0];

/// Spectral identity of one symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolShape {
    pub f0: f64,
    pub formants: [f64; 2],
}

impl SymbolShape {
    pub fn of(symbol: u32) -> Self {
        let i = symbol as usize;
        Self {
            f0: 100.0 + 12.0 * i as f64,
            formants: [F1_GRID[i % 4], F2_GRID[(i / 4 + i) % 4]],
        }
    }

    /// Relative amplitude of a harmonic at `freq` Hz.
    pub fn envelope(&self, freq: f64) -> f64 {
        let [f1, f2] = self.formants;
        let p1 = (-0.5 * ((freq - f1) / 120.0).powi(2)).exp();
        let p2 = 0.7 * (-0.5 * ((freq - f2) / 200.0).powi(2)).exp();
        (p1 + p2 + 0.02) / (1.0 + freq / 2000.0)
    }
}

pub fn symbol_name(symbol: u32) -> String {
    format!("s{symbol}")
}

/// Clean-speech generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeechSpec {
    /// Rounded to a whole number of 40 ms label frames.
    pub duration_s: f64,
    pub alphabet_size: usize,
    pub min_segment_frames: usize,
    pub max_segment_frames: usize,
    pub rms: f64,
}

impl Default for SpeechSpec {
    fn default() -> Self {
        Self {
            duration_s: 4.0,
            alphabet_size: 12,
            min_segment_frames: 2,
            max_segment_frames: 8,
            rms: 0.05,
        }
    }
}

impl SpeechSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2.0..=12.0).contains(&self.duration_s) {
            return Err(Error::invalid(format!(
                "utterance duration {} s outside [2, 12] s",
                self.duration_s
            )));
        }
        if self.alphabet_size == 0 || self.alphabet_size > MAX_ALPHABET {
            return Err(Error::invalid(format!(
                "alphabet size must be in 1..={MAX_ALPHABET}"
            )));
        }
        if self.min_segment_frames == 0 || self.min_segment_frames > self.max_segment_frames {
            return Err(Error::invalid("bad segment length range"));
        }
        if !(self.rms > 0.0 && self.rms < 1.0) {
            return Err(Error::invalid("rms must be in (0, 1)"));
        }
        Ok(())
    }

    pub fn label_frames(&self) -> usize {
        (self.duration_s * 25.0).round() as usize
    }
}

/// Per-frame symbol track at 25 Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentLabels {
    pub frames: Vec<u32>,
    pub alphabet_size: usize,
}

impl SegmentLabels {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Symbol sequence with consecutive repeats merged.
    pub fn symbols(&self) -> Vec<u32> {
        let mut out: Vec<u32> = Vec::new();
        for &s in &self.frames {
            if out.last() != Some(&s) {
                out.push(s);
            }
        }
        out
    }

    /// Transcript as a sequence of symbol names.
    pub fn transcript(&self) -> Vec<String> {
        self.symbols().into_iter().map(symbol_name).collect()
    }
}

pub fn synth_clean(spec: &SpeechSpec, seed: u64) -> Result<(Waveform, SegmentLabels)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_frames = spec.label_frames();
    let mut frames = Vec::with_capacity(n_frames);
    let mut samples = vec![0.0; n_frames * VIDEO_FRAME_SAMPLES];
    let fade = (0.005 * SAMPLE_RATE as f64) as usize;
    let mut prev: Option<u32> = None;

    while frames.len() < n_frames {
        let symbol = loop {
            let s = rng.gen_range(0..spec.alphabet_size as u32);
            if spec.alphabet_size == 1 || Some(s) != prev {
                break s;
            }
        };
        prev = Some(symbol);
        let len = rng
            .gen_range(spec.min_segment_frames..=spec.max_segment_frames)
            .min(n_frames - frames.len());
        let start = frames.len() * VIDEO_FRAME_SAMPLES;
        frames.extend(std::iter::repeat(symbol).take(len));

        let shape = SymbolShape::of(symbol);
        let f0 = shape.f0 * (1.0 + rng.gen_range(-0.04..0.04));
        let gain = 10f64.powf(rng.gen_range(-3.0..3.0) / 20.0);
        let n = len * VIDEO_FRAME_SAMPLES;
        let harmonics = (7500.0 / f0) as usize;
        let partials: Vec<(f64, f64, f64)> = (1..=harmonics)
            .map(|h| {
                let f = h as f64 * f0;
                (f, shape.envelope(f), rng.gen_range(0.0..2.0 * PI))
            })
            .collect();
        for i in 0..n {
            let t = i as f64 / SAMPLE_RATE as f64;
            let ramp = if i < fade {
                0.5 - 0.5 * (PI * i as f64 / fade as f64).cos()
            } else if n - i <= fade {
                0.5 - 0.5 * (PI * (n - i) as f64 / fade as f64).cos()
            } else {
                1.0
            };
            let v: f64 = partials
                .iter()
                .map(|&(f, a, ph)| a * (2.0 * PI * f * t + ph).sin())
                .sum();
            samples[start + i] = gain * ramp * v;
        }
    }

    let rms = (super::energy(&samples) / samples.len() as f64).sqrt();
    let k = spec.rms / rms;
    samples.iter_mut().for_each(|s| *s *= k);
    Ok((
        Waveform::new(samples)?,
        SegmentLabels {
            frames,
            alphabet_size: spec.alphabet_size,
        },
    ))
}

/// Colored-noise generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub duration_s: f64,
    /// Power spectral slope in dB per octave; 0 is white.
    pub slope_db_per_octave: f64,
    /// Expected amplitude-modulated bursts per second; 0 disables them.
    pub burst_rate: f64,
    /// Peak gain added to the envelope by each burst.
    pub burst_gain: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            duration_s: 4.0,
            slope_db_per_octave: -3.0,
            burst_rate: 0.5,
            burst_gain: 2.0,
        }
    }
}

/// Unit-RMS colored noise with optional bursts.
pub fn synth_noise(spec: &NoiseSpec, seed: u64) -> Result<Waveform> {
    let len = (spec.duration_s * SAMPLE_RATE as f64).round();
    if !(len >= 1.0) {
        return Err(Error::invalid("noise duration must be positive"));
    }
    let len = len as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();

    if spec.slope_db_per_octave != 0.0 && len > 1 {
        let mut planner = RealFftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let mut spec_buf = fwd.make_output_vec();
        fwd.process(&mut x, &mut spec_buf)
            .map_err(|e| Error::Other(format!("fft failed: {e}")))?;
        let exponent = spec.slope_db_per_octave / (20.0 * 2f64.log10());
        for (k, c) in spec_buf.iter_mut().enumerate() {
            let f = (k as f64 * SAMPLE_RATE as f64 / len as f64).max(50.0);
            *c *= (f / 1000.0).powf(exponent);
        }
        spec_buf[0].im = 0.0;
        if len % 2 == 0 {
            let last = spec_buf.len() - 1;
            spec_buf[last].im = 0.0;
        }
        inv.process(&mut spec_buf, &mut x)
            .map_err(|e| Error::Other(format!("inverse fft failed: {e}")))?;
    }

    if spec.burst_rate > 0.0 {
        let count = (spec.burst_rate * spec.duration_s).round() as usize;
        let mut env = vec![1.0; len];
        for _ in 0..count {
            let width = (rng.gen_range(0.1..0.3) * SAMPLE_RATE as f64) as usize;
            let center = rng.gen_range(0..len);
            for i in 0..width {
                let j = (center + i).saturating_sub(width / 2);
                if j < len {
                    env[j] += spec.burst_gain * (PI * i as f64 / width as f64).sin().powi(2);
                }
            }
        }
        x.iter_mut().zip(&env).for_each(|(v, e)| *v *= e);
    }

    let rms = (super::energy(&x) / len as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    Waveform::new(x)
}
