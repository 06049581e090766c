use num_complex::Complex64;

use crate::error::{Error, Result};

/// Unique frequency bins of the front-end.
pub const N_BINS: usize = 256;

/// Audio frame rate in Hz.
pub const FRAME_RATE: f64 = 100.0;

/// `F x T` complex time-frequency matrix, stored frequency-major
/// (`data[f * frames + t]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    frames: usize,
    data: Vec<Complex64>,
    compressed: bool,
}

impl ComplexSpectrogram {
    pub fn new(data: Vec<Complex64>, frames: usize, compressed: bool) -> Result<Self> {
        if frames == 0 {
            return Err(Error::invalid("spectrogram needs at least one frame"));
        }
        if data.len() != N_BINS * frames {
            return Err(Error::shape(format!(
                "expected {} x {} = {} bins, got {}",
                N_BINS,
                frames,
                N_BINS * frames,
                data.len()
            )));
        }
        Ok(Self {
            frames,
            data,
            compressed,
        })
    }

    pub fn zeros(frames: usize, compressed: bool) -> Result<Self> {
        Self::new(vec![Complex64::new(0.0, 0.0); N_BINS * frames], frames, compressed)
    }

    /// Every bin set to `value`.
    pub fn filled(frames: usize, compressed: bool, value: Complex64) -> Result<Self> {
        Self::new(vec![value; N_BINS * frames], frames, compressed)
    }

    pub fn bins(&self) -> usize {
        N_BINS
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_compressed(&self) -> bool {
        self.compressed
    }

    pub fn frame_rate(&self) -> f64 {
        FRAME_RATE
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.frames + frame]
    }

    pub fn set(&mut self, bin: usize, frame: usize, value: Complex64) {
        self.data[bin * self.frames + frame] = value;
    }

    pub(crate) fn set_compressed(&mut self, compressed: bool) {
        self.compressed = compressed;
    }

    /// Errors unless `other` has the same frame count and compression flag.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.frames != other.frames {
            return Err(Error::shape(format!(
                "frame counts differ: {} vs {}",
                self.frames, other.frames
            )));
        }
        if self.compressed != other.compressed {
            return Err(Error::CompressionState(
                "cannot combine compressed and uncompressed spectrograms".into(),
            ));
        }
        Ok(())
    }

    /// Elementwise `f(a, b)` over two compatible spectrograms.
    pub fn zip_map(
        &self,
        other: &Self,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Self> {
        self.check_compatible(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            frames: self.frames,
            data,
            compressed: self.compressed,
        })
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            frames: self.frames,
            data: self.data.iter().map(|&c| f(c)).collect(),
            compressed: self.compressed,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|c| c * s)
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        for (x, &o) in self.data.iter_mut().zip(&other.data) {
            *x += o * a;
        }
        Ok(())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Copy with the frame axis cropped or zero-padded to `frames`.
    pub fn with_frames(&self, frames: usize) -> Result<Self> {
        let mut out = Self::zeros(frames, self.compressed)?;
        let keep = frames.min(self.frames);
        for f in 0..N_BINS {
            let src = &self.data[f * self.frames..f * self.frames + keep];
            out.data[f * frames..f * frames + keep].copy_from_slice(src);
        }
        Ok(out)
    }
}
