mod args;
mod commands;
mod error;
mod evaluate;
mod pgm;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use commands::EnhanceArgs;
use error::CliResult;

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SynthCorpus { out, common } => commands::synth_corpus_cmd(&common, &out),
        Command::Train {
            corpus,
            out,
            resume,
            parallel,
            common,
        } => commands::train_cmd(&common, &corpus, &out, resume.as_deref(), parallel),
        Command::Enhance {
            ckpt,
            input,
            emb,
            output,
            corpus,
            out_dir,
            common,
        } => commands::enhance_cmd(
            &common,
            &EnhanceArgs {
                ckpt: &ckpt,
                input: input.as_deref(),
                emb: emb.as_deref(),
                output: output.as_deref(),
                corpus: corpus.as_deref(),
                out_dir: out_dir.as_deref(),
            },
        ),
        Command::Evaluate {
            reference,
            est,
            out,
            split,
            common,
        } => {
            let r = commands::evaluate_cmd(&common, &reference, &est, &out, split)?;
            if let (Some(si), Some(wer)) = (r.mean.si_sdr, r.mean.wer) {
                println!("{} files: SI-SDR {si:.2} dB, WER {wer:.3}", r.per_file.len());
            }
            Ok(())
        }
        Command::Diagnose { kind, out, common } => commands::diagnose_cmd(&common, kind, out.as_deref()),
        Command::PlotSpec { input, output, common } => commands::plot_spec_cmd(&common, &input, &output),
        Command::Config { common } => commands::print_config(&common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("avgen: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
