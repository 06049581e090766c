//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails. Runs without the libtest harness so
//! the lines are always shown.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use avgen_core::metrics::wer;
use avgen_core::sde::{diffusion, SdeParams};
use avgen_core::signal::{compress, decompress, istft, stft};
use avgen_core::{StftConfig, Waveform};

struct Outcome {
    pass: bool,
    detail: String,
}

fn avgen(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_avgen")).args(args).output().expect("spawn avgen");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn avgen_ok(args: &[&str]) -> String {
    let (code, stdout, stderr) = avgen(args);
    assert_eq!(code, 0, "avgen {args:?} failed:\n{stderr}");
    stdout
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn diagnose(kind: &str, dir: &Path) -> (bool, Value) {
    let out = dir.join(format!("{kind}.json"));
    let (code, _, _) = avgen(&["diagnose", kind, "--out", p(&out), "--force"]);
    let report = json(&out);
    (code == 0 && report["pass"] == true, report)
}

fn worst(report: &Value, prefix: &str) -> f64 {
    report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["name"].as_str().unwrap().starts_with(prefix))
        .map(|c| c["value"].as_f64().unwrap())
        .fold(0.0, f64::max)
}

fn kernel(dir: &Path) -> Outcome {
    let (pass, r) = diagnose("kernel", dir);
    let mc_pass = r["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["name"].as_str().unwrap().starts_with("mc_"))
        .all(|c| c["pass"] == true);
    Outcome {
        pass: pass && mc_pass,
        detail: format!("worst MC rel err {:.4} (< 0.02)", worst(&r, "mc_")),
    }
}

fn variance_ode() -> Outcome {
    let sde = SdeParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    let mut err = 0.0f64;
    for _ in 0..20 {
        let t = rng.gen_range(0.01..sde.t_max - 0.01);
        let fd = (sde.variance(t + h) - sde.variance(t - h)) / (2.0 * h);
        let g = diffusion(t, &sde).unwrap();
        let ode = -2.0 * sde.gamma * sde.variance(t) + g * g;
        err = err.max((fd - ode).abs() / ode.abs());
    }
    Outcome {
        pass: err < 1e-4,
        detail: format!("worst rel err {err:.2e} (< 1e-4)"),
    }
}

fn gradients(dir: &Path) -> Outcome {
    let (pass, r) = diagnose("gradcheck", dir);
    let groups = r["checks"].as_array().unwrap().len();
    Outcome {
        pass,
        detail: format!("{groups} parameter groups, worst rel err {:.2e} (< 1e-5)", worst(&r, "")),
    }
}

fn sampler_oracle(dir: &Path) -> Outcome {
    let (pass, r) = diagnose("sampler-oracle", dir);
    Outcome {
        pass,
        detail: format!(
            "recovery rel err {:.4} (< 0.05), KS {:.4} (< 0.05)",
            worst(&r, "recovery"),
            worst(&r, "terminal_ks")
        ),
    }
}

fn stft_round_trip() -> Outcome {
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut rt, mut comp) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let len = rng.gen_range(2 * 16000..=12 * 16000);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = Waveform::new(x).unwrap();
        let s = stft(&w, &cfg).unwrap();
        let back = istft(&s, &cfg, len).unwrap();
        let num: f64 = w.samples().iter().zip(back.samples()).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = w.samples().iter().map(|a| a * a).sum();
        rt = rt.max((num / den).sqrt());
        let c = decompress(&compress(&s).unwrap()).unwrap();
        for (a, b) in s.data().iter().zip(c.data()) {
            comp = comp.max((a - b).norm() / a.norm().max(1e-300));
        }
    }
    Outcome {
        pass: rt < 1e-4 && comp < 1e-9,
        detail: format!("round trip {rt:.2e} (< 1e-4), compression {comp:.2e} (< 1e-9)"),
    }
}

/// Minimal edit cost by exhaustive recursion over the three moves.
fn edit_cost(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return a.len() + b.len();
    }
    if let Some(&c) = memo.get(&(a.len(), b.len())) {
        return c;
    }
    let sub = edit_cost(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
    let del = edit_cost(&a[1..], b, memo) + 1;
    let ins = edit_cost(a, &b[1..], memo) + 1;
    let c = sub.min(del).min(ins);
    memo.insert((a.len(), b.len()), c);
    c
}

fn wer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=12);
        let m = rng.gen_range(0..=12);
        let a: Vec<u8> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let b: Vec<u8> = (0..m).map(|_| rng.gen_range(0..4)).collect();
        let r = wer(&a, &b).unwrap();
        let cost = edit_cost(&a, &b, &mut HashMap::new());
        let identity = r.wer * r.n as f64 == (r.s + r.d + r.i) as f64;
        if r.s + r.d + r.i != cost || r.wer != cost as f64 / n as f64 || !identity {
            mismatches += 1;
        }
    }
    Outcome {
        pass: mismatches == 0,
        detail: format!("{mismatches} mismatches in 1000 pairs"),
    }
}

struct Experiment {
    noisy: Value,
    av: Value,
    shuffled: Value,
    av_summary: Value,
    shuffled_summary: Value,
}

fn run_experiment(dir: &Path) -> Experiment {
    let corpus = dir.join("corpus");
    avgen_ok(&["synth-corpus", "--out", p(&corpus)]);
    let eval = |est: &Path, name: &str| {
        let out = dir.join(format!("eval_{name}.json"));
        avgen_ok(&["evaluate", "--ref", p(&corpus), "--est", p(est), "--out", p(&out)]);
        json(&out)
    };
    let noisy = eval(&corpus.join("noisy"), "noisy");
    let run = |mode: &str| {
        let ckpt = dir.join(format!("{mode}.ckpt"));
        let est = dir.join(format!("enhanced_{mode}"));
        avgen_ok(&["train", "--corpus", p(&corpus), "--out", p(&ckpt), "--mode", mode]);
        avgen_ok(&["enhance", "--ckpt", p(&ckpt), "--corpus", p(&corpus), "--out-dir", p(&est)]);
        (eval(&est, mode), json(&ckpt.with_extension("json")))
    };
    let (av, av_summary) = run("av");
    let (shuffled, shuffled_summary) = run("shuffled_emb");
    Experiment {
        noisy,
        av,
        shuffled,
        av_summary,
        shuffled_summary,
    }
}

fn directional(e: &Experiment) -> Outcome {
    let f = |v: &Value, k: &str| v["mean"][k].as_f64().unwrap();
    let gain = f(&e.av, "si_sdr") - f(&e.noisy, "si_sdr");
    let (wa, ws) = (f(&e.av, "wer"), f(&e.shuffled, "wer"));
    let va = e.av_summary["validation_dsm"].as_f64().unwrap();
    let vs = e.shuffled_summary["validation_dsm"].as_f64().unwrap();
    Outcome {
        pass: gain >= 3.0 && wa < ws && va < vs,
        detail: format!(
            "SI-SDR gain {gain:.2} dB (>= 3); WER av {wa:.3} vs shuffled {ws:.3}; \
             validation DSM av {va:.2} vs shuffled {vs:.2}"
        ),
    }
}

fn stratified(e: &Experiment) -> Outcome {
    let bins = ["[-6,-2)", "[-2,2)", "[2,6)", "[6,12]"];
    let gaps: Vec<Option<f64>> = bins
        .iter()
        .map(|b| {
            let w = |v: &Value| v["by_snr_bin"][b]["mean"]["wer"].as_f64();
            Some(w(&e.shuffled)? - w(&e.av)?)
        })
        .collect();
    let complete = gaps.iter().all(Option::is_some);
    let g: Vec<f64> = gaps.iter().flatten().copied().collect();
    let monotone = complete && g.windows(2).all(|w| w[1] <= w[0]);
    Outcome {
        pass: monotone,
        detail: format!("WER gap (shuffled - av) per bin low to high SNR: {g:.3?}"),
    }
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    if a.is_dir() {
        let names = |d: &Path| -> Vec<PathBuf> {
            let mut v: Vec<PathBuf> = fs::read_dir(d).unwrap().map(|e| e.unwrap().path()).collect();
            v.sort();
            v
        };
        let (na, nb) = (names(a), names(b));
        na.len() == nb.len()
            && na
                .iter()
                .zip(&nb)
                .all(|(x, y)| x.file_name() == y.file_name() && same_bytes(x, y))
    } else {
        fs::read(a).unwrap() == fs::read(b).unwrap()
    }
}

fn determinism(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).unwrap();
    let cfg = dir.join("small.json");
    fs::write(
        &cfg,
        r#"{"corpus": {"n_train": 4, "n_test": 2, "max_duration_s": 2.5, "seed": 11},
            "train": {"steps": 4, "max_tokens": 300},
            "sampler": {"steps": 4}}"#,
    )
    .unwrap();
    let c = p(&cfg);
    let mut failures = Vec::new();
    let mut check = |name: &str, a: &Path, b: &Path| {
        if !same_bytes(a, b) {
            failures.push(name.to_string());
        }
    };
    let d = |s: &str| dir.join(s);

    for r in ["c1", "c2"] {
        avgen_ok(&["synth-corpus", "--config", c, "--out", p(&d(r))]);
    }
    check("synth-corpus", &d("c1"), &d("c2"));
    let corpus = d("c1");
    for (r, extra) in [("t1", None), ("t2", None), ("tp", Some("--parallel"))] {
        let ck = d(&format!("{r}.ckpt"));
        let mut args = vec!["train", "--config", c, "--corpus", p(&corpus), "--out", p(&ck)];
        args.extend(extra);
        avgen_ok(&args);
    }
    for ext in ["ckpt", "jsonl", "json"] {
        check(&format!("train .{ext}"), &d(&format!("t1.{ext}")), &d(&format!("t2.{ext}")));
        check(&format!("train --parallel .{ext}"), &d(&format!("t1.{ext}")), &d(&format!("tp.{ext}")));
    }
    for r in ["e1", "e2"] {
        avgen_ok(&["enhance", "--config", c, "--ckpt", p(&d("t1.ckpt")), "--corpus", p(&corpus), "--out-dir", p(&d(r))]);
    }
    check("enhance", &d("e1"), &d("e2"));
    let noisy = corpus.join("noisy").join("test_0000.wav");
    let emb = corpus.join("emb").join("test_0000.ave");
    for r in ["s1.wav", "s2.wav"] {
        avgen_ok(&[
            "enhance", "--config", c, "--ckpt", p(&d("t1.ckpt")), "--input", p(&noisy), "--emb", p(&emb),
            "--output", p(&d(r)),
        ]);
    }
    check("enhance single file", &d("s1.wav"), &d("s2.wav"));
    for r in ["v1.json", "v2.json"] {
        avgen_ok(&["evaluate", "--config", c, "--ref", p(&corpus), "--est", p(&d("e1")), "--out", p(&d(r))]);
    }
    check("evaluate", &d("v1.json"), &d("v2.json"));
    for r in ["g1.pgm", "g2.pgm"] {
        avgen_ok(&["plot-spec", "--config", c, "--input", p(&noisy), "--output", p(&d(r))]);
    }
    check("plot-spec", &d("g1.pgm"), &d("g2.pgm"));
    for r in ["k1.json", "k2.json"] {
        avgen_ok(&["diagnose", "sampler-oracle", "--config", c, "--out", p(&d(r))]);
    }
    check("diagnose", &d("k1.json"), &d("k2.json"));
    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            "all commands byte-identical; parallel training equals serial".into()
        } else {
            format!("differs: {}", failures.join(", "))
        },
    }
}

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let o = f();
    (o, start.elapsed())
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut lines = Vec::new();
    let mut record = |n: u32, title: &str, (o, dt): (Outcome, Duration), budget: Duration| {
        let pass = o.pass && dt < budget;
        let line = format!(
            "{} criterion {n} ({title}): {} [{:.1} s, budget {} s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            dt.as_secs_f64(),
            budget.as_secs()
        );
        println!("{line}");
        lines.push((pass, line));
    };
    let s = Duration::from_secs;
    record(1, "perturbation kernel", timed(|| kernel(dir)), s(30));
    record(2, "variance ODE", timed(variance_ode), s(1));
    record(3, "gradients", timed(|| gradients(dir)), s(120));
    record(4, "sampler oracle", timed(|| sampler_oracle(dir)), s(120));
    record(5, "STFT round trip", timed(stft_round_trip), s(30));
    record(6, "WER oracle", timed(wer_oracle), s(10));

    let start = Instant::now();
    let exp = run_experiment(&dir.join("experiment"));
    let exp_time = start.elapsed();
    record(7, "directional claim", (directional(&exp), exp_time), s(30 * 60));
    record(8, "SNR-stratified trend", (stratified(&exp), exp_time), s(30 * 60));

    record(9, "determinism", timed(|| determinism(&dir.join("det"))), s(600));

    let failed = lines.iter().filter(|(p, _)| !p).count();
    println!("acceptance: {} of {} criteria passed", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
