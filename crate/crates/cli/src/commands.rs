use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use avgen_core::conditioner::{read_embeddings, ConditioningMode, LayerEmbeddings};
use avgen_core::config::ExperimentConfig;
use avgen_core::corpus::{load_corpus, synth_corpus, write_corpus, CorpusItem, Split};
use avgen_core::diagnostics::{gradcheck_report, kernel_report, sampler_report};
use avgen_core::metrics::{label_track_wer, log_spectral_distance, si_sdr, BandDecoder};
use avgen_core::sampler::{enhance, enhance_unchecked, SamplerConfig};
use avgen_core::scorenet::{read_checkpoint, write_checkpoint, Checkpoint, ScoreNetParams};
use avgen_core::signal::stft;
use avgen_core::signal::wav::{read_wav, write_wav};
use avgen_core::training::{derangement, embedding_for, mix_seed, validate, TrainItem, Trainer};

use crate::args::{Common, DiagnoseKind, SplitArg};
use crate::error::{CliError, CliResult};
use crate::evaluate::{summarize, EvalReport, FileScore};
use crate::pgm;

/// Configuration file (or defaults) with no command-specific overrides.
pub fn base_config(common: &Common) -> CliResult<ExperimentConfig> {
    Ok(match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

fn ensure_free_file(p: &Path, force: bool) -> CliResult<()> {
    if p.exists() && !force {
        return Err(CliError::usage(format!("{} exists; pass --force to overwrite", p.display())));
    }
    Ok(())
}

fn ensure_free_dir(p: &Path, force: bool) -> CliResult<()> {
    if p.is_file() {
        return Err(CliError::usage(format!("{} is a file", p.display())));
    }
    let non_empty = p.is_dir() && fs::read_dir(p)?.next().is_some();
    if non_empty && !force {
        return Err(CliError::usage(format!("{} is not empty; pass --force to overwrite", p.display())));
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn sha256_file(path: &Path) -> CliResult<String> {
    use sha2::{Digest, Sha256};
    let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn print_config(common: &Common) -> CliResult<()> {
    let cfg = base_config(common)?;
    println!("{}", cfg.to_json());
    println!("hash {}", cfg.hash());
    Ok(())
}

pub fn synth_corpus_cmd(common: &Common, out: &Path) -> CliResult<()> {
    let mut cfg = base_config(common)?;
    if let Some(s) = common.seed {
        cfg.corpus.seed = s;
    }
    cfg.validate()?;
    ensure_free_dir(out, common.force)?;
    let items = synth_corpus(&cfg.corpus)?;
    write_corpus(out, &cfg.corpus, &cfg.hash(), &items)?;
    eprintln!("wrote {} items to {}", items.len(), out.display());
    Ok(())
}

fn train_items(cfg: &ExperimentConfig, items: &[CorpusItem]) -> CliResult<Vec<TrainItem>> {
    let m = cfg.shape.frame_multiple();
    items
        .iter()
        .map(|it| {
            TrainItem::from_waveforms(it.meta.id.clone(), &it.clean, &it.noisy, it.emb.clone(), &cfg.stft, m)
                .map_err(CliError::from)
        })
        .collect()
}

/// Summary written next to a trained checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub mode: ConditioningMode,
    pub steps: u64,
    /// Mean objective over the last 10% of steps run by this invocation.
    pub final_objective: Option<f64>,
    /// DSM loss on the test split, 8 fixed draws per item.
    pub validation_dsm: Option<f64>,
}

pub const VALIDATION_DRAWS: usize = 8;

pub fn train_cmd(common: &Common, corpus: &Path, out: &Path, resume: Option<&Path>, parallel: bool) -> CliResult<()> {
    let mut cfg = base_config(common)?;
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = common.steps {
        cfg.train.steps = n;
    }
    if let Some(m) = common.mode {
        cfg.train.mode = m;
    }
    // parallel and serial runs produce the same checkpoint, so the flag stays out of the hash
    cfg.train.parallel = false;
    cfg.validate()?;
    let hash = cfg.hash();
    cfg.train.parallel = parallel;

    let log_path = out.with_extension("jsonl");
    let summary_path = out.with_extension("json");
    for p in [out, &log_path, &summary_path] {
        ensure_free_file(p, common.force)?;
    }
    let (_, train) = load_corpus(corpus, Some(Split::Train))?;
    let (_, test) = load_corpus(corpus, Some(Split::Test))?;
    let train = train_items(&cfg, &train)?;
    let test = train_items(&cfg, &test)?;

    let mut trainer = match resume {
        Some(p) => {
            let ckpt = read_checkpoint(p)?;
            if ckpt.params.shape != cfg.shape || ckpt.sde != cfg.sde {
                return Err(CliError::usage("checkpoint shape or SDE differs from the configuration"));
            }
            Trainer::resume(ckpt, cfg.train, &train)?
        }
        None => Trainer::new(ScoreNetParams::init(&cfg.shape, cfg.init_seed)?, cfg.sde, cfg.train, &train)?,
    };

    let mut log = Vec::new();
    let mut objectives = Vec::new();
    let total = cfg.train.steps;
    trainer.run(|e| {
        let mut v = serde_json::to_value(e)?;
        if let Some(o) = v.as_object_mut() {
            o.remove("wall_ms");
        }
        serde_json::to_writer(&mut log, &v)?;
        log.push(b'\n');
        objectives.push(e.objective);
        if e.step % 50 == 0 || e.step as usize == total {
            eprintln!("step {}/{total} loss {:.4} objective {:.5} ({} ms)", e.step, e.loss, e.objective, e.wall_ms);
        }
        Ok(())
    })?;

    let ckpt = trainer.checkpoint(&hash);
    write_checkpoint(out, &ckpt)?;
    fs::write(&log_path, &log)?;
    let tail = objectives.len().div_ceil(10);
    let summary = TrainSummary {
        config_hash: hash,
        mode: cfg.train.mode,
        steps: ckpt.step,
        final_objective: (tail > 0)
            .then(|| objectives[objectives.len() - tail..].iter().sum::<f64>() / tail as f64),
        validation_dsm: if test.is_empty() {
            None
        } else {
            Some(validate(&test, &ckpt.params, &cfg.sde, cfg.train.mode, cfg.train.seed, VALIDATION_DRAWS)?)
        },
    };
    write_json(&summary_path, &summary)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancedFile {
    pub id: String,
    pub nfe: usize,
}

/// Record written beside corpus-mode enhancement outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceManifest {
    pub config_hash: String,
    pub checkpoint_sha256: String,
    pub mode: ConditioningMode,
    pub sampler: SamplerConfig,
    pub files: Vec<EnhancedFile>,
}

pub struct EnhanceArgs<'a> {
    pub ckpt: &'a Path,
    pub input: Option<&'a Path>,
    pub emb: Option<&'a Path>,
    pub output: Option<&'a Path>,
    pub corpus: Option<&'a Path>,
    pub out_dir: Option<&'a Path>,
}

/// Per-file sampler seed.
pub fn file_seed(base: u64, index: usize) -> u64 {
    mix_seed(&[base, 5, index as u64])
}

fn enhance_config(common: &Common, ckpt: &Checkpoint) -> CliResult<ExperimentConfig> {
    let mut cfg = base_config(common)?;
    if common.config.is_some() {
        if cfg.shape != ckpt.params.shape {
            return Err(CliError::usage("checkpoint network shape differs from the configuration"));
        }
        if cfg.sde != ckpt.sde {
            return Err(CliError::usage("checkpoint SDE parameters differ from the configuration"));
        }
    } else {
        cfg.shape = ckpt.params.shape.clone();
        cfg.sde = ckpt.sde;
    }
    if let Some(s) = common.seed {
        cfg.sampler.seed = s;
    }
    if let Some(n) = common.steps {
        cfg.sampler.steps = n;
    }
    if let Some(c) = common.corrector {
        cfg.sampler.corrector_steps = c;
    }
    cfg.train.mode = common.mode.unwrap_or(ckpt.mode);
    cfg.validate()?;
    Ok(cfg)
}

pub fn enhance_cmd(common: &Common, a: &EnhanceArgs) -> CliResult<()> {
    let ckpt = read_checkpoint(a.ckpt)?;
    let cfg = enhance_config(common, &ckpt)?;
    let mode = cfg.train.mode;
    match (a.input, a.corpus) {
        (Some(input), None) => {
            let output = a.output.ok_or_else(|| CliError::usage("--input needs --output"))?;
            ensure_free_file(output, common.force)?;
            let y = read_wav(input)?;
            let emb = match (mode, a.emb) {
                (ConditioningMode::AudioOnly, _) => None,
                (_, Some(p)) => Some(read_embeddings(p)?),
                (_, None) => return Err(CliError::usage(format!("--emb is required in {mode} mode"))),
            };
            let sampler = SamplerConfig {
                seed: file_seed(cfg.sampler.seed, 0),
                ..cfg.sampler
            };
            let start = Instant::now();
            let (w, stats) = enhance(&y, emb.as_ref(), &ckpt.params, &cfg.sde, &sampler, &cfg.stft)?;
            write_wav(output, &w)?;
            println!("{} nfe {} {:.0} ms", output.display(), stats.nfe, start.elapsed().as_secs_f64() * 1e3);
            Ok(())
        }
        (None, Some(corpus)) => {
            let out_dir = a.out_dir.ok_or_else(|| CliError::usage("--corpus needs --out-dir"))?;
            ensure_free_dir(out_dir, common.force)?;
            let (_, items) = load_corpus(corpus, Some(Split::Test))?;
            if items.is_empty() {
                return Err(CliError::usage("corpus has no test items"));
            }
            let perm = match mode {
                ConditioningMode::ShuffledEmb => Some(derangement(items.len(), mix_seed(&[cfg.sampler.seed, 1]))?),
                _ => None,
            };
            let embs: Vec<&LayerEmbeddings> = items.iter().map(|it| &it.emb).collect();
            fs::create_dir_all(out_dir)?;
            let start = Instant::now();
            let results: Vec<CliResult<(EnhancedFile, f64)>> = items
                .par_iter()
                .enumerate()
                .map(|(i, it)| {
                    let t0 = Instant::now();
                    let emb = embedding_for(mode, &embs, perm.as_deref(), i)?;
                    let sampler = SamplerConfig {
                        seed: file_seed(cfg.sampler.seed, i),
                        ..cfg.sampler
                    };
                    let run = match mode {
                        ConditioningMode::ShuffledEmb => enhance_unchecked,
                        _ => enhance,
                    };
                    let (w, stats) = run(&it.noisy, emb, &ckpt.params, &cfg.sde, &sampler, &cfg.stft)?;
                    write_wav(out_dir.join(format!("{}.wav", it.meta.id)), &w)?;
                    let file = EnhancedFile {
                        id: it.meta.id.clone(),
                        nfe: stats.nfe,
                    };
                    Ok((file, t0.elapsed().as_secs_f64() * 1e3))
                })
                .collect();
            let mut files = Vec::with_capacity(results.len());
            for r in results {
                let (f, ms) = r?;
                println!("{} nfe {} {ms:.0} ms", f.id, f.nfe);
                files.push(f);
            }
            println!("enhanced {} files in {:.1} s", files.len(), start.elapsed().as_secs_f64());
            let manifest = EnhanceManifest {
                config_hash: cfg.hash(),
                checkpoint_sha256: sha256_file(a.ckpt)?,
                mode,
                sampler: cfg.sampler,
                files,
            };
            write_json(&out_dir.join("enhance.json"), &manifest)
        }
        _ => Err(CliError::usage("pass either --input/--output or --corpus/--out-dir")),
    }
}

fn score_file(decoder: &BandDecoder, item: &CorpusItem, est_dir: &Path) -> CliResult<FileScore> {
    let id = &item.meta.id;
    let path: PathBuf = est_dir.join(format!("{id}.wav"));
    let est = read_wav(&path)?;
    if est.len() != item.clean.len() {
        return Err(CliError::Io(format!(
            "{}: {} samples, reference has {}",
            path.display(),
            est.len(),
            item.clean.len()
        )));
    }
    let reference = decoder.decode(&item.clean)?;
    let decoded = decoder.decode(&est)?;
    Ok(FileScore {
        id: id.clone(),
        snr_db: item.meta.snr_db,
        si_sdr: si_sdr(&item.clean, &est)?,
        lsd: log_spectral_distance(&item.clean, &est)?,
        wer: label_track_wer(&reference, &decoded)?,
    })
}

pub fn evaluate_cmd(common: &Common, reference: &Path, est: &Path, out: &Path, split: SplitArg) -> CliResult<EvalReport> {
    let cfg = base_config(common)?;
    ensure_free_file(out, common.force)?;
    let split = match split {
        SplitArg::Train => Some(Split::Train),
        SplitArg::Test => Some(Split::Test),
        SplitArg::All => None,
    };
    let (_, items) = load_corpus(reference, split)?;
    if items.is_empty() {
        return Err(CliError::usage("no reference items in the selected split"));
    }
    let alphabet = items[0].labels.alphabet_size;
    let decoder = BandDecoder::new(alphabet)?;
    let scores: Vec<CliResult<FileScore>> = items.par_iter().map(|it| score_file(&decoder, it, est)).collect();
    let per_file = scores.into_iter().collect::<CliResult<Vec<_>>>()?;
    let report = summarize(&cfg.hash(), per_file);
    write_json(out, &report)?;
    Ok(report)
}

/// Report of one diagnostic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseOutput {
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub report: avgen_core::diagnostics::Report,
}

pub fn diagnose_cmd(common: &Common, kind: DiagnoseKind, out: Option<&Path>) -> CliResult<()> {
    let cfg = base_config(common)?;
    cfg.validate()?;
    let seed = common.seed.unwrap_or(0);
    if let Some(p) = out {
        ensure_free_file(p, common.force)?;
    }
    let report = match kind {
        DiagnoseKind::Kernel => kernel_report(&cfg.sde, seed)?,
        DiagnoseKind::Gradcheck => gradcheck_report(seed)?,
        DiagnoseKind::SamplerOracle => sampler_report(&cfg.sde, seed)?,
    };
    let doc = DiagnoseOutput {
        config_hash: cfg.hash(),
        seed,
        report,
    };
    match out {
        Some(p) => write_json(p, &doc)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, &doc)?;
            writeln!(stdout)?;
        }
    }
    if doc.report.pass {
        Ok(())
    } else {
        let names: Vec<&str> = doc.report.failures().iter().map(|c| c.name.as_str()).collect();
        Err(CliError::Diagnostic(format!("{}: {}", doc.report.kind, names.join(", "))))
    }
}

pub fn plot_spec_cmd(common: &Common, input: &Path, output: &Path) -> CliResult<()> {
    let cfg = base_config(common)?;
    cfg.validate()?;
    ensure_free_file(output, common.force)?;
    let w = read_wav(input)?;
    let spec = stft(&w, &cfg.stft)?;
    let (width, height, px) = pgm::render(&spec);
    fs::write(output, pgm::encode(width, height, &px, &format!("config {}", cfg.hash())))?;
    Ok(())
}
