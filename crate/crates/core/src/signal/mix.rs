use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Waveform;
use crate::error::{Error, Result};

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `10 log10(E_signal / E_noise)`.
pub fn measure_snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (energy(signal) / energy(noise)).log10()
}

/// Adds a random crop of `noise`, scaled by `alpha`, to `clean` so that the
/// energy ratio of clean to scaled noise is exactly `snr_db`. The mixture is
/// not renormalized. Returns the mixture and `alpha`.
pub fn mix_at_snr(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    seed: u64,
) -> Result<(Waveform, f64)> {
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("SNR must be finite, got {snr_db}")));
    }
    if noise.len() < clean.len() {
        return Err(Error::invalid(format!(
            "noise ({} samples) shorter than clean ({} samples)",
            noise.len(),
            clean.len()
        )));
    }
    let e_clean = energy(clean.samples());
    if e_clean == 0.0 {
        return Err(Error::invalid("clean signal has zero energy"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.gen_range(0..=noise.len() - clean.len());
    let crop = &noise.samples()[offset..offset + clean.len()];
    let e_noise = energy(crop);
    if e_noise == 0.0 {
        return Err(Error::invalid("noise crop has zero energy"));
    }
    let alpha = (e_clean / (e_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mixed = clean
        .samples()
        .iter()
        .zip(crop)
        .map(|(c, n)| c + alpha * n)
        .collect();
    Ok((Waveform::new(mixed)?, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize, f: f64) -> Waveform {
        Waveform::new((0..len).map(|n| (f * n as f64).sin()).collect()).unwrap()
    }

    #[test]
    fn equal_rms_alpha() {
        let c = tone(1600, 0.1);
        let n = tone(1600, 0.1);
        let (_, a0) = mix_at_snr(&c, &n, 0.0, 1).unwrap();
        assert!((a0 - 1.0).abs() < 1e-12);
        let (_, a6) = mix_at_snr(&c, &n, 6.0, 1).unwrap();
        assert!((a6 - 10f64.powf(-6.0 / 20.0)).abs() < 1e-12);
        assert!((a6 - 0.5012).abs() < 1e-4);
    }

    #[test]
    fn achieved_snr_is_exact() {
        let c = tone(3000, 0.03);
        let n = tone(9000, 0.71);
        for snr in [-6.0, -1.3, 0.0, 4.2, 12.0] {
            let (mixed, _) = mix_at_snr(&c, &n, snr, 9).unwrap();
            let resid: Vec<f64> = mixed
                .samples()
                .iter()
                .zip(c.samples())
                .map(|(m, c)| m - c)
                .collect();
            assert!((measure_snr_db(c.samples(), &resid) - snr).abs() < 1e-9);
        }
    }

    #[test]
    fn contract_errors() {
        let c = tone(100, 0.1);
        assert!(mix_at_snr(&c, &tone(50, 0.1), 0.0, 0).is_err());
        assert!(mix_at_snr(&c, &tone(100, 0.1), f64::INFINITY, 0).is_err());
        assert!(mix_at_snr(&Waveform::zeros(100).unwrap(), &c, 0.0, 0).is_err());
        assert!(mix_at_snr(&c, &Waveform::zeros(100).unwrap(), 0.0, 0).is_err());
    }
}
