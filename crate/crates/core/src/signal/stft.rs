use num_complex::Complex64;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use super::spectrogram::{ComplexSpectrogram, N_BINS};
use super::Waveform;
use crate::error::{Error, Result};

/// Magnitude exponent of the amplitude compression.
pub const COMPRESS_EXPONENT: f64 = 0.5;
/// Scale of the amplitude compression.
pub const COMPRESS_BETA: f64 = 0.15;

/// Analysis/synthesis parameters of the front-end.
///
/// Frames are placed so that frame `m` is centered on the hop block
/// `[m * hop, (m + 1) * hop)`: the signal is padded by
/// `(window_len - hop) / 2` zeros on the left and as many zeros as needed on
/// the right, giving `ceil(len / hop)` frames. At 16 kHz this is exactly
/// 100 frames per second and 4 frames per 40 ms video frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub fft_len: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 510,
            hop: 160,
            fft_len: 510,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_len / 2 + 1 != N_BINS {
            return Err(Error::invalid(format!(
                "fft_len {} does not give {} one-sided bins",
                self.fft_len, N_BINS
            )));
        }
        if self.window_len > self.fft_len || self.hop == 0 || self.hop > self.window_len {
            return Err(Error::invalid("inconsistent window/hop/fft lengths"));
        }
        Ok(())
    }

    /// Periodic Hann window of `window_len` taps.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_len as f64;
        (0..self.window_len)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos())
            .collect()
    }

    pub fn left_pad(&self) -> usize {
        (self.window_len - self.hop) / 2
    }

    pub fn frames_for(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    /// Length of the padded signal that `frames` frames span.
    fn padded_len(&self, frames: usize) -> usize {
        (frames - 1) * self.hop + self.window_len
    }

    /// Center frequency in Hz of a one-sided bin.
    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * super::SAMPLE_RATE as f64 / self.fft_len as f64
    }
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    if w.len() < cfg.window_len {
        return Err(Error::invalid(format!(
            "waveform of {} samples is shorter than the {}-sample window",
            w.len(),
            cfg.window_len
        )));
    }
    let frames = cfg.frames_for(w.len());
    let pad = cfg.left_pad();
    let mut padded = vec![0.0; cfg.padded_len(frames)];
    padded[pad..pad + w.len()].copy_from_slice(w.samples());

    let window = cfg.window();
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.fft_len);
    let mut input = fft.make_input_vec();
    let mut spectrum = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();

    let mut data = vec![Complex64::new(0.0, 0.0); N_BINS * frames];
    for m in 0..frames {
        let start = m * cfg.hop;
        input.iter_mut().for_each(|x| *x = 0.0);
        for (i, (x, &wv)) in input.iter_mut().zip(&window).enumerate() {
            *x = padded[start + i] * wv;
        }
        fft.process_with_scratch(&mut input, &mut spectrum, &mut scratch)
            .map_err(|e| Error::Other(format!("fft failed: {e}")))?;
        for (f, &c) in spectrum.iter().enumerate() {
            data[f * frames + m] = c;
        }
    }
    ComplexSpectrogram::new(data, frames, false)
}

/// Weighted overlap-add inverse of [`stft`]; the result is trimmed or
/// zero-padded to `out_len` samples.
pub fn istft(s: &ComplexSpectrogram, cfg: &StftConfig, out_len: usize) -> Result<Waveform> {
    cfg.validate()?;
    if s.is_compressed() {
        return Err(Error::CompressionState(
            "istft needs an uncompressed spectrogram; decompress first".into(),
        ));
    }
    if out_len == 0 {
        return Err(Error::invalid("istft output length must be positive"));
    }
    let frames = s.frames();
    let window = cfg.window();
    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(cfg.fft_len);
    let mut spectrum = ifft.make_input_vec();
    let mut frame = ifft.make_output_vec();
    let mut scratch = ifft.make_scratch_vec();

    let total = cfg.padded_len(frames);
    let mut acc = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let scale = 1.0 / cfg.fft_len as f64;
    let last = spectrum.len() - 1;
    for m in 0..frames {
        for (f, c) in spectrum.iter_mut().enumerate() {
            *c = s.get(f, m);
        }
        // A real signal has real DC and Nyquist bins.
        spectrum[0].im = 0.0;
        if cfg.fft_len % 2 == 0 {
            spectrum[last].im = 0.0;
        }
        ifft.process_with_scratch(&mut spectrum, &mut frame, &mut scratch)
            .map_err(|e| Error::Other(format!("inverse fft failed: {e}")))?;
        let start = m * cfg.hop;
        for (i, &wv) in window.iter().enumerate() {
            acc[start + i] += frame[i] * scale * wv;
            norm[start + i] += wv * wv;
        }
    }
    let pad = cfg.left_pad();
    let samples = (0..out_len)
        .map(|i| {
            let j = pad + i;
            if j < total && norm[j] > 1e-10 {
                acc[j] / norm[j]
            } else {
                0.0
            }
        })
        .collect();
    Waveform::new(samples)
}

/// Magnitude compression `c -> beta * |c|^a * exp(i arg c)`.
pub fn compress(s: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if s.is_compressed() {
        return Err(Error::CompressionState("spectrogram is already compressed".into()));
    }
    let mut out = s.map(|c| {
        let mag = c.norm();
        if mag == 0.0 {
            c
        } else {
            c * (COMPRESS_BETA * mag.powf(COMPRESS_EXPONENT - 1.0))
        }
    });
    out.set_compressed(true);
    Ok(out)
}

/// Inverse of [`compress`].
pub fn decompress(s: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if !s.is_compressed() {
        return Err(Error::CompressionState("spectrogram is not compressed".into()));
    }
    let mut out = s.map(|c| {
        let mag = c.norm();
        if mag == 0.0 {
            c
        } else {
            let target = (mag / COMPRESS_BETA).powf(1.0 / COMPRESS_EXPONENT);
            c * (target / mag)
        }
    });
    out.set_compressed(false);
    Ok(out)
}
