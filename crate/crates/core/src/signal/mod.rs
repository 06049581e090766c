//! Waveforms, the STFT front-end, amplitude compression, SNR mixing and the
//! synthetic speech/noise generators.

mod mix;
mod spectrogram;
mod stft;
mod synth;
pub mod wav;

pub use mix::{energy, measure_snr_db, mix_at_snr};
pub use spectrogram::{ComplexSpectrogram, FRAME_RATE, N_BINS};
pub use stft::{compress, decompress, istft, stft, StftConfig, COMPRESS_BETA, COMPRESS_EXPONENT};
pub use synth::{
    symbol_name, synth_clean, synth_noise, NoiseSpec, SegmentLabels, SpeechSpec, SymbolShape,
    MAX_ALPHABET, VIDEO_FRAME_SAMPLES,
};

use crate::error::{Error, Result};

/// All audio in the pipeline is sampled at this rate.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio at [`SAMPLE_RATE`].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("waveform must contain at least one sample"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Self { samples })
    }

    pub fn zeros(len: usize) -> Result<Self> {
        Self::new(vec![0.0; len])
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }
}
