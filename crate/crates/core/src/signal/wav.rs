//! 16-bit mono PCM WAV at 16 kHz.

use std::path::Path;

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(
            path,
            format!("expected mono audio, found {} channels", spec.channels),
        ));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::format(
            path,
            format!("expected {SAMPLE_RATE} Hz, found {} Hz", spec.sample_rate),
        ));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(
            path,
            format!(
                "expected 16-bit integer PCM, found {}-bit {:?}",
                spec.bits_per_sample, spec.sample_format
            ),
        ));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(path, e))?;
    if samples.is_empty() {
        return Err(Error::format(path, "no samples"));
    }
    Waveform::new(samples)
}

/// Quantizes to 16 bits with clipping to `[-1, 1)`.
pub fn quantize(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in w.samples() {
        writer.write_sample(quantize(s)).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = Waveform::new((0..1000).map(|i| (i as f64 * 0.01).sin() * 0.5).collect()).unwrap();
        write_wav(&p, &w).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.len(), w.len());
        for (a, b) in r.samples().iter().zip(w.samples()) {
            assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-12);
        }
        // a re-write of the decoded signal is byte-identical
        let p2 = dir.path().join("b.wav");
        write_wav(&p2, &r).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_other_formats() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&p).unwrap_err().to_string();
        assert!(err.contains("mono"), "{err}");

        let p = dir.path().join("44k.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 44100,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(read_wav(&p).unwrap_err().to_string().contains("16000"));

        let p = dir.path().join("garbage.wav");
        std::fs::write(&p, b"not a wav file").unwrap();
        assert!(read_wav(&p).unwrap_err().is_io());
    }
}
