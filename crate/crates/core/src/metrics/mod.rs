//! Enhancement quality metrics: SI-SDR, log-spectral distance and the
//! symbol-track word error rate.

mod decoder;

pub use decoder::{label_track_wer, BandDecoder};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{stft, StftConfig, Waveform};

/// Upper bound reported for (numerically) perfect estimates.
pub const SI_SDR_CAP_DB: f64 = 100.0;

/// Scale-invariant signal-to-distortion ratio in dB.
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::shape(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let r = reference.samples();
    let e = estimate.samples();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(Error::invalid("SI-SDR needs a non-zero reference"));
    }
    let alpha = r.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target = alpha * alpha * rr;
    let residual: f64 = r.iter().zip(e).map(|(a, b)| (alpha * a - b).powi(2)).sum();
    if residual == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / residual).log10()).min(SI_SDR_CAP_DB))
}

/// Edit-distance decomposition into substitutions, deletions and
/// insertions against `n` reference words.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerResult {
    pub wer: f64,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "I")]
    pub i: usize,
    #[serde(rename = "N")]
    pub n: usize,
}

/// Unit-cost Levenshtein alignment. Among cost-equal alignments the
/// traceback prefers substitution (or match), then insertion, then deletion.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<WerResult> {
    let (n, m) = (reference.len(), hypothesis.len());
    if n == 0 {
        return Err(Error::invalid("WER needs a non-empty reference"));
    }
    let w = m + 1;
    let mut cost = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        cost[j] = j;
    }
    for i in 1..=n {
        cost[i * w] = i;
        for j in 1..=m {
            let sub = cost[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let ins = cost[i * w + j - 1] + 1;
            let del = cost[(i - 1) * w + j] + 1;
            cost[i * w + j] = sub.min(ins).min(del);
        }
    }
    let (mut s, mut d, mut ins) = (0, 0, 0);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let differ = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if cost[(i - 1) * w + j - 1] + differ == here {
                s += differ;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && cost[i * w + j - 1] + 1 == here {
            ins += 1;
            j -= 1;
        } else {
            d += 1;
            i -= 1;
        }
    }
    Ok(WerResult {
        wer: (s + d + ins) as f64 / n as f64,
        s,
        d,
        i: ins,
        n,
    })
}

/// Magnitude floor of the log-spectral distance.
pub const LSD_FLOOR: f64 = 1e-8;

/// RMS over all bins and frames of `20 (log10 |R| - log10 |E|)`.
pub fn log_spectral_distance(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::shape(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let cfg = StftConfig::default();
    let a = stft(reference, &cfg)?;
    let b = stft(estimate, &cfg)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (20.0 * (x.norm().max(LSD_FLOOR).log10() - y.norm().max(LSD_FLOOR).log10())).powi(2))
        .sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn wave(v: Vec<f64>) -> Waveform {
        Waveform::new(v).unwrap()
    }

    /// `reference + n` with `n` orthogonal to the reference and
    /// `|n|^2 = ratio |reference|^2`.
    fn orthogonal_mix(r: &[f64], ratio: f64, seed: u64) -> Vec<f64> {
        let mut n = noise(r.len(), seed);
        let rr: f64 = r.iter().map(|v| v * v).sum();
        let proj = n.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / rr;
        n.iter_mut().zip(r).for_each(|(a, b)| *a -= proj * b);
        let nn: f64 = n.iter().map(|v| v * v).sum();
        let k = (ratio * rr / nn).sqrt();
        r.iter().zip(&n).map(|(a, b)| a + k * b).collect()
    }

    #[test]
    fn si_sdr_special_cases() {
        let r = noise(4000, 1);
        assert_eq!(si_sdr(&wave(r.clone()), &wave(r.clone())).unwrap(), SI_SDR_CAP_DB);
        let tripled: Vec<f64> = r.iter().map(|v| 3.0 * v).collect();
        assert_eq!(si_sdr(&wave(r.clone()), &wave(tripled)).unwrap(), SI_SDR_CAP_DB);
        let e = orthogonal_mix(&r, 0.1, 2);
        assert!((si_sdr(&wave(r.clone()), &wave(e)).unwrap() - 10.0).abs() < 1e-9);
        assert!(si_sdr(&wave(vec![0.0; 4]), &wave(vec![1.0; 4])).is_err());
        assert!(si_sdr(&wave(vec![1.0; 4]), &wave(vec![1.0; 5])).is_err());
    }

    #[test]
    fn si_sdr_is_scale_invariant_and_monotone() {
        let r = noise(2000, 3);
        let e = orthogonal_mix(&r, 0.3, 4);
        let base = si_sdr(&wave(r.clone()), &wave(e.clone())).unwrap();
        for a in [0.01, 0.5, 7.0] {
            let scaled: Vec<f64> = e.iter().map(|v| a * v).collect();
            assert!((si_sdr(&wave(r.clone()), &wave(scaled)).unwrap() - base).abs() < 1e-9);
        }
        let mut last = f64::INFINITY;
        for k in 1..=20 {
            let v = si_sdr(&wave(r.clone()), &wave(orthogonal_mix(&r, 0.05 * k as f64, 5))).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn wer_examples() {
        let r = wer(&["a", "b", "c"], &["a", "b", "c"]).unwrap();
        assert_eq!((r.wer, r.s, r.d, r.i), (0.0, 0, 0, 0));
        let r = wer(&["a", "b", "c"], &[]).unwrap();
        assert_eq!((r.wer, r.d), (1.0, 3));
        let r = wer(&["a", "b", "c"], &["a", "x", "c", "d"]).unwrap();
        assert_eq!((r.s, r.i, r.d), (1, 1, 0));
        assert!((r.wer - 2.0 / 3.0).abs() < 1e-15);
        assert!(wer::<u8>(&[], &[1]).is_err());
    }

    #[test]
    fn wer_tie_break_prefers_substitution_then_insertion() {
        // "a b" vs "b c": two substitutions or one deletion plus one insertion
        let r = wer(&["a", "b"], &["b", "c"]).unwrap();
        assert_eq!((r.s, r.d, r.i), (2, 0, 0));
        let r = wer(&["a"], &["b", "c"]).unwrap();
        assert_eq!((r.s, r.d, r.i), (1, 0, 1));
    }

    /// Top-down minimal edit cost over all alignments.
    fn brute_cost(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() || b.is_empty() {
            return a.len() + b.len();
        }
        if let Some(&c) = memo.get(&(a.len(), b.len())) {
            return c;
        }
        let c = (brute_cost(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]))
            .min(brute_cost(&a[1..], b, memo) + 1)
            .min(brute_cost(a, &b[1..], memo) + 1);
        memo.insert((a.len(), b.len()), c);
        c
    }

    #[test]
    fn wer_matches_brute_force_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=12);
            let m = rng.gen_range(0..=12);
            let a: Vec<u8> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let b: Vec<u8> = (0..m).map(|_| rng.gen_range(0..4)).collect();
            let r = wer(&a, &b).unwrap();
            let c = brute_cost(&a, &b, &mut HashMap::new());
            assert_eq!(r.s + r.d + r.i, c);
            assert_eq!(r.wer, c as f64 / n as f64);
        }
    }

    proptest! {
        #[test]
        fn wer_counts_are_consistent(
            a in proptest::collection::vec(0u8..5, 1..12),
            b in proptest::collection::vec(0u8..5, 0..12),
        ) {
            let r = wer(&a, &b).unwrap();
            prop_assert!(r.s + r.d <= r.n);
            // matches + S + D = N and matches + S + I = M
            let matches = r.n - r.s - r.d;
            prop_assert_eq!(matches + r.s + r.i, b.len());
            prop_assert_eq!(r.wer, (r.s + r.d + r.i) as f64 / r.n as f64);
        }
    }

    #[test]
    fn lsd_examples() {
        let r = wave(noise(8000, 6));
        assert_eq!(log_spectral_distance(&r, &r).unwrap(), 0.0);
        let doubled = wave(r.samples().iter().map(|v| 2.0 * v).collect());
        assert!((log_spectral_distance(&r, &doubled).unwrap() - 20.0 * 2f64.log10()).abs() < 1e-9);
        let other = wave(noise(8000, 7));
        assert_eq!(
            log_spectral_distance(&r, &other).unwrap(),
            log_spectral_distance(&other, &r).unwrap()
        );
        assert!(log_spectral_distance(&r, &wave(vec![0.0; 10])).is_err());
    }

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
