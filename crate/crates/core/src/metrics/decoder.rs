//! Template decoder from audio to the pseudo-phone symbol track.
//!
//! Each 40 ms frame is Hann-windowed, its power spectrum pooled by
//! triangular filters with log-spaced centres, log-compressed and
//! mean-removed (removing overall gain). Frames are labelled with the
//! nearest symbol template; runs shorter than `min_run` frames are absorbed
//! by the preceding run.

use std::f64::consts::PI;

use realfft::RealFftPlanner;

use super::{wer, WerResult};
use crate::error::{Error, Result};
use crate::signal::{SegmentLabels, SymbolShape, Waveform, SAMPLE_RATE, VIDEO_FRAME_SAMPLES};

const N_FILTERS: usize = 18;
const LOW_HZ: f64 = 220.0;
const HIGH_HZ: f64 = 3800.0;
/// Relative F0 offsets averaged into each template.
const JITTER: [f64; 5] = [-0.03, -0.015, 0.0, 0.015, 0.03];

#[derive(Debug, Clone)]
pub struct BandDecoder {
    alphabet_size: usize,
    /// `(centre, half width)` in Hz.
    filters: Vec<(f64, f64)>,
    templates: Vec<Vec<f64>>,
    pub min_run: usize,
}

impl BandDecoder {
    pub fn new(alphabet_size: usize) -> Result<Self> {
        if alphabet_size == 0 {
            return Err(Error::invalid("empty alphabet"));
        }
        let ratio = (HIGH_HZ / LOW_HZ).powf(1.0 / (N_FILTERS - 1) as f64);
        let filters: Vec<(f64, f64)> = (0..N_FILTERS)
            .map(|k| {
                let c = LOW_HZ * ratio.powi(k as i32);
                (c, (c * (ratio - 1.0) * 1.5).max(150.0))
            })
            .collect();
        let mut d = Self {
            alphabet_size,
            filters,
            templates: Vec::new(),
            min_run: 2,
        };
        d.templates = (0..alphabet_size as u32).map(|s| d.template(s)).collect();
        Ok(d)
    }

    fn weight(&self, k: usize, f: f64) -> f64 {
        let (c, hw) = self.filters[k];
        (1.0 - (f - c).abs() / hw).max(0.0)
    }

    fn normalise(bands: &mut [f64]) {
        let total: f64 = bands.iter().sum();
        let floor = 1e-6 * total / bands.len() as f64 + 1e-30;
        bands.iter_mut().for_each(|b| *b = (*b + floor).ln());
        let mean = bands.iter().sum::<f64>() / bands.len() as f64;
        bands.iter_mut().for_each(|b| *b -= mean);
    }

    /// Expected features of a symbol from its harmonic envelope.
    fn template(&self, symbol: u32) -> Vec<f64> {
        let shape = SymbolShape::of(symbol);
        let mut acc = vec![0.0; N_FILTERS];
        for j in JITTER {
            let f0 = shape.f0 * (1.0 + j);
            let mut bands = vec![0.0; N_FILTERS];
            let mut h = 1.0;
            while h * f0 < 7500.0 {
                let f = h * f0;
                let a = shape.envelope(f);
                for (k, b) in bands.iter_mut().enumerate() {
                    *b += self.weight(k, f) * a * a;
                }
                h += 1.0;
            }
            Self::normalise(&mut bands);
            acc.iter_mut().zip(&bands).for_each(|(a, b)| *a += b / JITTER.len() as f64);
        }
        acc
    }

    /// Band features of every whole 40 ms frame.
    pub fn features(&self, w: &Waveform) -> Vec<Vec<f64>> {
        let n = VIDEO_FRAME_SAMPLES;
        let fft = RealFftPlanner::<f64>::new().plan_fft_forward(n);
        let window: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
        let df = SAMPLE_RATE as f64 / n as f64;
        let mut input = fft.make_input_vec();
        let mut spec = fft.make_output_vec();
        w.samples()
            .chunks_exact(n)
            .map(|frame| {
                for ((d, s), h) in input.iter_mut().zip(frame).zip(&window) {
                    *d = s * h;
                }
                fft.process(&mut input, &mut spec).expect("buffer sizes match the plan");
                let mut bands = vec![0.0; N_FILTERS];
                for (bin, c) in spec.iter().enumerate() {
                    let p = c.norm_sqr();
                    let f = bin as f64 * df;
                    for (k, b) in bands.iter_mut().enumerate() {
                        *b += self.weight(k, f) * p;
                    }
                }
                Self::normalise(&mut bands);
                bands
            })
            .collect()
    }

    fn classify(&self, feat: &[f64]) -> u32 {
        let dist = |t: &[f64]| feat.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        (0..self.templates.len())
            .min_by(|&a, &b| dist(&self.templates[a]).total_cmp(&dist(&self.templates[b])))
            .unwrap() as u32
    }

    /// Decoded 25 Hz label track.
    pub fn decode(&self, w: &Waveform) -> Result<SegmentLabels> {
        let feats = self.features(w);
        if feats.is_empty() {
            return Err(Error::invalid("audio shorter than one label frame"));
        }
        if feats.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoder features".into()));
        }
        let raw: Vec<u32> = feats.iter().map(|f| self.classify(f)).collect();
        Ok(SegmentLabels {
            frames: absorb_short_runs(&raw, self.min_run),
            alphabet_size: self.alphabet_size,
        })
    }
}

/// Replaces runs shorter than `min_run` by the preceding symbol (the
/// following one for a leading run).
fn absorb_short_runs(track: &[u32], min_run: usize) -> Vec<u32> {
    let mut runs: Vec<(u32, usize)> = Vec::new();
    for &s in track {
        match runs.last_mut() {
            Some((v, n)) if *v == s => *n += 1,
            _ => runs.push((s, 1)),
        }
    }
    let mut kept: Vec<(u32, usize)> = Vec::new();
    let mut carry = 0;
    for (s, n) in runs {
        if n < min_run {
            match kept.last_mut() {
                Some(last) => last.1 += n,
                None => carry += n,
            }
        } else {
            match kept.last_mut() {
                Some(last) if last.0 == s => last.1 += n,
                _ => kept.push((s, n + std::mem::take(&mut carry))),
            }
        }
    }
    if kept.is_empty() {
        return track.to_vec();
    }
    kept.into_iter().flat_map(|(s, n)| std::iter::repeat(s).take(n)).collect()
}

/// WER between the merged symbol sequences of two label tracks.
pub fn label_track_wer(reference: &SegmentLabels, decoded: &SegmentLabels) -> Result<WerResult> {
    wer(&reference.symbols(), &decoded.symbols())
}
