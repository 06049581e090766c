use serde::{Deserialize, Serialize};

use avgen_core::metrics::{mean_std, WerResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Input-SNR bins `[-6,-2)`, `[-2,2)`, `[2,6)` and `[6,12]`.
pub const SNR_EDGES: [f64; 5] = [-6.0, -2.0, 2.0, 6.0, 12.0];

pub fn snr_bin(snr_db: f64) -> Option<usize> {
    if !(SNR_EDGES[0]..=SNR_EDGES[4]).contains(&snr_db) {
        return None;
    }
    Some((0..4).find(|&b| snr_db < SNR_EDGES[b + 1]).unwrap_or(3))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileScore {
    pub id: String,
    pub snr_db: f64,
    pub si_sdr: f64,
    pub lsd: f64,
    #[serde(flatten)]
    pub wer: WerResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub si_sdr: Option<f64>,
    pub lsd: Option<f64>,
    pub wer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub count: usize,
    pub mean: Stats,
    pub pooled_wer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BySnrBin {
    #[serde(rename = "[-6,-2)")]
    pub b0: BinSummary,
    #[serde(rename = "[-2,2)")]
    pub b1: BinSummary,
    #[serde(rename = "[2,6)")]
    pub b2: BinSummary,
    #[serde(rename = "[6,12]")]
    pub b3: BinSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub per_file: Vec<FileScore>,
    pub mean: Stats,
    pub std: Stats,
    /// `(sum S + D + I) / (sum N)` over all files.
    pub pooled_wer: Option<f64>,
    pub by_snr_bin: BySnrBin,
}

fn stats(files: &[&FileScore]) -> (Stats, Stats) {
    if files.is_empty() {
        let none = Stats {
            si_sdr: None,
            lsd: None,
            wer: None,
        };
        return (none, none);
    }
    let col = |f: fn(&FileScore) -> f64| mean_std(&files.iter().map(|s| f(s)).collect::<Vec<_>>());
    let (a, b, c) = (col(|s| s.si_sdr), col(|s| s.lsd), col(|s| s.wer.wer));
    (
        Stats {
            si_sdr: Some(a.0),
            lsd: Some(b.0),
            wer: Some(c.0),
        },
        Stats {
            si_sdr: Some(a.1),
            lsd: Some(b.1),
            wer: Some(c.1),
        },
    )
}

fn pooled(files: &[&FileScore]) -> Option<f64> {
    let n: usize = files.iter().map(|f| f.wer.n).sum();
    let e: usize = files.iter().map(|f| f.wer.s + f.wer.d + f.wer.i).sum();
    (n > 0).then(|| e as f64 / n as f64)
}

/// Aggregates per-file scores; `per_file` order is kept.
pub fn summarize(config_hash: &str, per_file: Vec<FileScore>) -> EvalReport {
    let all: Vec<&FileScore> = per_file.iter().collect();
    let (mean, std) = stats(&all);
    let bin = |b: usize| {
        let files: Vec<&FileScore> = per_file.iter().filter(|f| snr_bin(f.snr_db) == Some(b)).collect();
        BinSummary {
            count: files.len(),
            mean: stats(&files).0,
            pooled_wer: pooled(&files),
        }
    };
    EvalReport {
        schema_version: SCHEMA_VERSION,
        config_hash: config_hash.to_string(),
        pooled_wer: pooled(&all),
        mean,
        std,
        by_snr_bin: BySnrBin {
            b0: bin(0),
            b1: bin(1),
            b2: bin(2),
            b3: bin(3),
        },
        per_file,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(id: &str, snr: f64, si: f64, s: usize, n: usize) -> FileScore {
        FileScore {
            id: id.into(),
            snr_db: snr,
            si_sdr: si,
            lsd: 1.0,
            wer: WerResult {
                wer: s as f64 / n as f64,
                s,
                d: 0,
                i: 0,
                n,
            },
        }
    }

    #[test]
    fn bin_edges() {
        assert_eq!(snr_bin(-6.0), Some(0));
        assert_eq!(snr_bin(-2.0), Some(1));
        assert_eq!(snr_bin(1.999), Some(1));
        assert_eq!(snr_bin(6.0), Some(3));
        assert_eq!(snr_bin(12.0), Some(3));
        assert_eq!(snr_bin(12.5), None);
        assert_eq!(snr_bin(-6.1), None);
    }

    #[test]
    fn pooled_and_per_file_means_differ() {
        let r = summarize("h", vec![score("a", -5.0, 1.0, 1, 2), score("b", 7.0, 3.0, 0, 8)]);
        assert_eq!(r.mean.wer, Some(0.25));
        assert_eq!(r.pooled_wer, Some(0.1));
        assert_eq!(r.mean.si_sdr, Some(2.0));
        assert_eq!(r.by_snr_bin.b0.count, 1);
        assert_eq!(r.by_snr_bin.b1.count, 0);
        assert_eq!(r.by_snr_bin.b1.mean.wer, None);
        assert_eq!(r.by_snr_bin.b3.pooled_wer, Some(0.0));
    }

    #[test]
    fn json_keys() {
        let r = summarize("h", vec![score("a", 0.0, 1.0, 1, 4)]);
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["per_file"][0]["S"], 1);
        assert_eq!(v["per_file"][0]["N"], 4);
        assert!(v["by_snr_bin"]["[-2,2)"]["count"].is_number());
        let back: EvalReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
