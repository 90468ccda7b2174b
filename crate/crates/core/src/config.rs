//! Pipeline configuration: a flat `key = value` text file.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional except `corpus`; unknown or repeated keys are errors. Relative
//! paths resolve against the config file's directory.
//!
//! Split sizes (`split_valid`, `split_gate_train`, `split_gate_stop`,
//! `split_test`) are sentence counts when written as integers and corpus
//! fractions when written with a decimal point; the expert-training split
//! takes the rest.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gating::{FeatureMode, GateArch, GateTrainConfig};
use crate::neural::NnTrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitSize {
    Sentences(usize),
    Fraction(f64),
}

impl SplitSize {
    pub fn resolve(self, corpus_size: usize) -> usize {
        match self {
            SplitSize::Sentences(n) => n,
            SplitSize::Fraction(f) => (f * corpus_size as f64).round() as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub seed: u64,
    pub vocab_min_count: u64,
    /// Vocabulary cap including the special tokens; None keeps every word
    /// that reaches the minimum count.
    pub vocab_max_size: Option<usize>,
    pub split_valid: SplitSize,
    pub split_gate_train: SplitSize,
    pub split_gate_stop: SplitSize,
    pub split_test: SplitSize,
    pub ngram_order: usize,
    pub ngram_prune_min_count: u64,
    pub nn: NnTrainConfig,
    pub gate_arch: GateArch,
    pub gate_modes: Vec<FeatureMode>,
    pub gate: GateTrainConfig,
    pub runs: usize,
    pub bins: usize,
    pub capitalization_gap: f64,
    pub score_batch_size: usize,
}

impl PipelineConfig {
    /// Defaults around a given corpus path.
    pub fn with_corpus(corpus: PathBuf) -> Self {
        PipelineConfig {
            corpus,
            seed: 1,
            vocab_min_count: 1,
            vocab_max_size: None,
            split_valid: SplitSize::Fraction(0.05),
            split_gate_train: SplitSize::Fraction(0.05),
            split_gate_stop: SplitSize::Fraction(0.01),
            split_test: SplitSize::Fraction(0.05),
            ngram_order: 5,
            ngram_prune_min_count: 0,
            nn: NnTrainConfig::default(),
            gate_arch: GateArch::Lstm,
            gate_modes: vec![FeatureMode::Simple, FeatureMode::Full, FeatureMode::Hidden],
            gate: GateTrainConfig::default(),
            runs: 10,
            bins: crate::analysis::DEFAULT_BINS,
            capitalization_gap: crate::analysis::DEFAULT_CAPITALIZATION_GAP,
            score_batch_size: 64,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut seen: Vec<String> = Vec::new();
        let mut corpus = None;
        let mut cfg = PipelineConfig::with_corpus(PathBuf::new());
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.to_string(),
                message: format!("line {} is not `key = value`", lineno + 1),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(config_err(key, "given more than once"));
            }
            seen.push(key.to_string());
            match key {
                "corpus" => corpus = Some(base.join(value)),
                "seed" => cfg.seed = num(key, value)?,
                "vocab_min_count" => cfg.vocab_min_count = num(key, value)?,
                "vocab_max_size" => {
                    let n: usize = num(key, value)?;
                    cfg.vocab_max_size = (n > 0).then_some(n);
                }
                "split_valid" => cfg.split_valid = split_size(key, value)?,
                "split_gate_train" => cfg.split_gate_train = split_size(key, value)?,
                "split_gate_stop" => cfg.split_gate_stop = split_size(key, value)?,
                "split_test" => cfg.split_test = split_size(key, value)?,
                "ngram_order" => cfg.ngram_order = num(key, value)?,
                "ngram_prune_min_count" => cfg.ngram_prune_min_count = num(key, value)?,
                "nn_layers" => cfg.nn.layers = num(key, value)?,
                "nn_d_emb" => cfg.nn.d_emb = num(key, value)?,
                "nn_d_hid" => cfg.nn.d_hid = num(key, value)?,
                "nn_dropout" => cfg.nn.dropout = num(key, value)?,
                "nn_lr" => cfg.nn.lr = num(key, value)?,
                "nn_lr_decay" => cfg.nn.lr_decay = num(key, value)?,
                "nn_batch_size" => cfg.nn.batch_size = num(key, value)?,
                "nn_bptt" => cfg.nn.bptt = num(key, value)?,
                "nn_max_epochs" => cfg.nn.max_epochs = num(key, value)?,
                "nn_patience" => cfg.nn.patience = num(key, value)?,
                "nn_clip_norm" => cfg.nn.clip_norm = num(key, value)?,
                "gate_arch" => cfg.gate_arch = parse_with(key, value)?,
                "gate_modes" => {
                    let mut modes = Vec::new();
                    for m in value.split(',').map(str::trim).filter(|m| !m.is_empty()) {
                        let mode: FeatureMode = parse_with(key, m)?;
                        if !modes.contains(&mode) {
                            modes.push(mode);
                        }
                    }
                    cfg.gate_modes = modes;
                }
                "gate_lr" => cfg.gate.lr = num(key, value)?,
                "gate_halve_every" => cfg.gate.halve_every = num(key, value)?,
                "gate_batch_size" => cfg.gate.batch_size = num(key, value)?,
                "gate_max_steps" => cfg.gate.max_steps = num(key, value)?,
                "gate_eval_every" => cfg.gate.eval_every = num(key, value)?,
                "gate_patience" => cfg.gate.patience = num(key, value)?,
                "runs" => cfg.runs = num(key, value)?,
                "bins" => cfg.bins = num(key, value)?,
                "capitalization_gap" => cfg.capitalization_gap = num(key, value)?,
                "score_batch_size" => cfg.score_batch_size = num(key, value)?,
                _ => return Err(config_err(key, "unknown key")),
            }
        }
        cfg.corpus = corpus.ok_or_else(|| config_err("corpus", "required"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.corpus.is_file() {
            return Err(config_err(
                "corpus",
                &format!("{} does not exist", self.corpus.display()),
            ));
        }
        if self.vocab_min_count == 0 {
            return Err(config_err("vocab_min_count", "must be >= 1"));
        }
        if matches!(self.vocab_max_size, Some(n) if n < 3) {
            return Err(config_err(
                "vocab_max_size",
                "must leave room for <s>, </s> and <unk>",
            ));
        }
        for (key, s) in [
            ("split_valid", self.split_valid),
            ("split_gate_train", self.split_gate_train),
            ("split_gate_stop", self.split_gate_stop),
            ("split_test", self.split_test),
        ] {
            match s {
                SplitSize::Sentences(0) => return Err(config_err(key, "must be positive")),
                SplitSize::Fraction(f) if !(f > 0.0 && f < 1.0) => {
                    return Err(config_err(key, "fractions must lie in (0, 1)"))
                }
                _ => {}
            }
        }
        if !(1..=crate::ngram::MAX_ORDER).contains(&self.ngram_order) {
            return Err(config_err(
                "ngram_order",
                &format!("must be between 1 and {}", crate::ngram::MAX_ORDER),
            ));
        }
        self.nn.validate().map_err(|e| match e {
            Error::Config { key, message } => Error::Config {
                key: format!("nn_{key}"),
                message,
            },
            other => other,
        })?;
        if self.nn.max_epochs == 0 {
            return Err(config_err("nn_max_epochs", "must be >= 1"));
        }
        self.gate.validate()?;
        if self.gate_modes.is_empty() {
            return Err(config_err(
                "gate_modes",
                "name at least one of full, simple, hidden",
            ));
        }
        if self.runs == 0 {
            return Err(config_err("runs", "must be >= 1"));
        }
        if self.bins == 0 {
            return Err(config_err("bins", "must be >= 1"));
        }
        if !self.capitalization_gap.is_finite() {
            return Err(config_err("capitalization_gap", "must be finite"));
        }
        if self.score_batch_size == 0 {
            return Err(config_err("score_batch_size", "must be >= 1"));
        }
        Ok(())
    }
}

fn config_err(key: &str, message: &str) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.to_string(),
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_err(key, &format!("cannot parse `{value}`")))
}

fn parse_with<T: FromStr<Err = Error>>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|e: Error| config_err(key, &e.to_string()))
}

fn split_size(key: &str, value: &str) -> Result<SplitSize> {
    if value.contains('.') {
        Ok(SplitSize::Fraction(num(key, value)?))
    } else {
        Ok(SplitSize::Sentences(num(key, value)?))
    }
}
