use avgen_core::ComplexSpectrogram;

pub const FLOOR_DB: f64 = -60.0;

/// 8-bit grey levels of `|X|` in dB relative to the loudest bin, `[-60, 0]`
/// mapped to `[0, 255]`; row 0 is the highest frequency. Returns
/// `(width, height, pixels)`.
pub fn render(spec: &ComplexSpectrogram) -> (usize, usize, Vec<u8>) {
    let (bins, frames) = (spec.bins(), spec.frames());
    let peak = spec.data().iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut px = vec![0u8; bins * frames];
    if peak > 0.0 {
        for f in 0..bins {
            let row = bins - 1 - f;
            for t in 0..frames {
                let m = spec.get(f, t).norm();
                let db = if m > 0.0 { 20.0 * (m / peak).log10() } else { FLOOR_DB };
                let v = ((db.clamp(FLOOR_DB, 0.0) - FLOOR_DB) / -FLOOR_DB * 255.0).round();
                px[row * frames + t] = v as u8;
            }
        }
    }
    (frames, bins, px)
}

/// Binary P5 encoding with a comment line.
pub fn encode(width: usize, height: usize, pixels: &[u8], comment: &str) -> Vec<u8> {
    let mut out = format!("P5\n# {comment}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use avgen_core::signal::stft;
    use avgen_core::{StftConfig, Waveform};

    #[test]
    fn silence_is_black() {
        let w = Waveform::new(vec![0.0; 16000]).unwrap();
        let s = stft(&w, &StftConfig::default()).unwrap();
        let (wd, h, px) = render(&s);
        assert_eq!((wd, h), (s.frames(), 256));
        assert!(px.iter().all(|&p| p == 0));
    }

    #[test]
    fn sinusoid_lights_its_row() {
        // 1000 Hz sits exactly on bin 1000 * 510 / 16000 = 31.875, nearest 32
        let w = Waveform::new(
            (0..16000)
                .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 16000.0).sin())
                .collect(),
        )
        .unwrap();
        let s = stft(&w, &StftConfig::default()).unwrap();
        let (wd, h, px) = render(&s);
        let mid = wd / 2;
        let brightest = (0..h).max_by_key(|&r| px[r * wd + mid]).unwrap();
        assert_eq!(brightest, 255 - 32);
    }

    #[test]
    fn header_layout() {
        let b = encode(3, 2, &[0, 1, 2, 3, 4, 5], "x");
        assert!(b.starts_with(b"P5\n# x\n3 2\n255\n"));
        assert_eq!(b.len(), 15 + 6);
    }
}
