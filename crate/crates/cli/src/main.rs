use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lmmix::config::PipelineConfig;
use lmmix::container::Container;
use lmmix::corpus::{encode, Vocabulary, EOS};
use lmmix::neural::{score_sentences, NeuralLm};
use lmmix::ngram::read_arpa;
use lmmix::pipeline::{Pipeline, Stage};
use lmmix::Error;

/// Train an n-gram and a neural language model, then learn a per-step
/// gate that mixes them.
#[derive(Parser, Debug)]
#[command(name = "lmmix", version, args_conflicts_with_subcommands = true)]
struct Cli {
    /// Pipeline config file (flat `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stage to run: vocab, train-ngram, train-nn, dump-features,
    /// tune-static, train-gate, evaluate, analyze or all.
    #[arg(long, default_value = "all")]
    stage: String,
    /// Root seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    tool: Option<Tool>,
}

#[derive(Subcommand, Debug)]
enum Tool {
    /// Score sentences from stdin with an ARPA model; prints
    /// `sentence, t, word, log10 p, matched order` per target.
    QueryNgram {
        #[arg(long)]
        arpa: PathBuf,
    },
    /// Score sentences from stdin with a saved neural model; prints
    /// `sentence, t, word, ln p` per target.
    ScoreNn {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
    },
}

/// Exit status 1: bad invocation or config.
fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.tool {
        Some(Tool::QueryNgram { arpa }) => query_ngram(&arpa),
        Some(Tool::ScoreNn { model, vocab }) => score_nn(&model, &vocab),
        None => return run_pipeline(cli.config, &cli.stage, cli.seed, cli.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run_pipeline(
    config: Option<PathBuf>,
    stage: &str,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> ExitCode {
    let Some(config) = config else {
        return usage("--config is required");
    };
    let Some(out) = out else {
        return usage("--out is required");
    };
    let stage: Stage = match stage.parse() {
        Ok(s) => s,
        Err(e) => return usage(e),
    };
    let mut cfg = match PipelineConfig::load(&config) {
        Ok(c) => c,
        Err(e @ Error::Config { .. }) => return usage(e),
        Err(e) => return usage(format!("cannot read config: {e}")),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    match Pipeline::new(cfg, out).run(stage) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config { .. }) => usage(e),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn stdin_lines() -> lmmix::Result<Vec<String>> {
    Ok(io::stdin().lock().lines().collect::<io::Result<Vec<_>>>()?)
}

fn query_ngram(arpa: &Path) -> lmmix::Result<()> {
    let f = File::open(arpa).map_err(|e| Error::Io {
        path: arpa.to_path_buf(),
        source: e,
    })?;
    let (vocab, model) = read_arpa(BufReader::new(f))?;
    let mut out = BufWriter::new(io::stdout().lock());
    writeln!(out, "#sentence\tt\tword\tlog10_prob\tmatched_order")?;
    for (si, line) in stdin_lines()?.iter().enumerate() {
        let s = encode(line, &vocab);
        let ids = s.ids();
        let words: Vec<&str> = line.split_whitespace().chain([EOS]).collect();
        for t in 1..ids.len() {
            let (lp, trace) = model.score_word(&ids[..t], ids[t])?;
            writeln!(
                out,
                "{si}\t{t}\t{}\t{lp}\t{}",
                words[t - 1],
                trace.matched_order
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn score_nn(model: &Path, vocab: &Path) -> lmmix::Result<()> {
    let vocab = Vocabulary::load(vocab)?;
    let nn = NeuralLm::<f32>::from_container(&Container::load(model)?)?;
    let lines = stdin_lines()?;
    let sents: Vec<_> = lines.iter().map(|l| encode(l, &vocab)).collect();
    let scores = score_sentences(&nn, &sents, 64, false)?;
    let mut out = BufWriter::new(io::stdout().lock());
    writeln!(out, "#sentence\tt\tword\tln_prob")?;
    for (si, (line, sc)) in lines.iter().zip(&scores).enumerate() {
        let words: Vec<&str> = line.split_whitespace().chain([EOS]).collect();
        for (t, lp) in sc.ln_probs.iter().enumerate() {
            writeln!(out, "{si}\t{}\t{}\t{lp}", t + 1, words[t])?;
        }
    }
    out.flush()?;
    Ok(())
}
