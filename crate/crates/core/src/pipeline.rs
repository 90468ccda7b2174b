//! Staged end-to-end runs. Every stage reads its inputs from, and writes its
//! artifacts to, one output directory; a stage whose inputs are missing
//! names the stage that produces them.
//!
//! | stage           | writes                                                  |
//! |-----------------|---------------------------------------------------------|
//! | `vocab`         | `vocab.tsv`, `splits/*.idx`                             |
//! | `train-ngram`   | `ngram.arpa`                                            |
//! | `train-nn`      | `neural.lmc`, `neural_log.json`                         |
//! | `dump-features` | `features/{gate_train,gate_stop}_{full,hidden}.tsv`     |
//! | `tune-static`   | `static.json`                                           |
//! | `train-gate`    | `gates/{mode}_{run}.lmc`, `gates/{mode}_{run}.json`     |
//! | `evaluate`      | `report.json`, `report.txt`, `test_scores.tsv`          |
//! | `analyze`       | `analysis/{bins,capitalization,significance}.{csv,json}`|
//!
//! Only `evaluate` and `analyze` read the test partition.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{capitalization_stats, frequency_bins, per_bin_report, significance_test};
use crate::config::PipelineConfig;
use crate::container::Container;
use crate::corpus::{
    build_vocab, encode, read_lines, split_corpus, EncodedSentence, PartSize, SplitSpec, Splits,
    Vocabulary, BOS_ID, EOS,
};
use crate::ensemble::{
    evaluate_all, static_cross_entropy, tune_static_lambda, EvalInputs, EvalReport,
};
use crate::gating::{
    fit_normalizer, init_gate, sentence_features, train_gate, FeatureMode, FeatureNormalizer,
    GateData, GateNet, SIMPLE_DIM,
};
use crate::neural::{init_params, score_sentences, train_nn, NeuralLm, SentenceScores};
use crate::ngram::{count_ngrams, estimate_kn, read_arpa, write_arpa, KnModel, KnOptions};
use crate::rng::derive_seed;
use crate::{Error, Result};

pub const PARTS: [&str; 5] = ["train", "valid", "gate_train", "gate_stop", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Vocab,
    TrainNgram,
    TrainNn,
    DumpFeatures,
    TuneStatic,
    TrainGate,
    Evaluate,
    Analyze,
    All,
}

impl Stage {
    /// Execution order of `all`.
    pub const SEQUENCE: [Stage; 8] = [
        Stage::Vocab,
        Stage::TrainNgram,
        Stage::TrainNn,
        Stage::DumpFeatures,
        Stage::TuneStatic,
        Stage::TrainGate,
        Stage::Evaluate,
        Stage::Analyze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Vocab => "vocab",
            Stage::TrainNgram => "train-ngram",
            Stage::TrainNn => "train-nn",
            Stage::DumpFeatures => "dump-features",
            Stage::TuneStatic => "tune-static",
            Stage::TrainGate => "train-gate",
            Stage::Evaluate => "evaluate",
            Stage::Analyze => "analyze",
            Stage::All => "all",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::SEQUENCE
            .iter()
            .chain([&Stage::All])
            .find(|st| st.name() == s)
            .copied()
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown stage `{s}` (expected vocab, train-ngram, train-nn, dump-features, tune-static, train-gate, evaluate, analyze or all)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticChoice {
    pub lambda: f64,
    pub gate_train_cross_entropy: f64,
}

/// Metadata stored with each trained gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateMeta {
    pub mode: FeatureMode,
    pub run: usize,
    pub seed: u64,
    pub normalizer: FeatureNormalizer,
    pub static_lambda: f64,
    pub best_step: usize,
    pub best_stop_loss: f64,
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, out: impl Into<PathBuf>) -> Self {
        Pipeline {
            cfg,
            out: out.into(),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn require(&self, rel: &str, stage: Stage) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact {
                artifact: p.display().to_string(),
                stage: stage.name().to_string(),
            })
        }
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        match stage {
            Stage::All => {
                for s in Stage::SEQUENCE {
                    self.run(s)?;
                }
                Ok(())
            }
            Stage::Vocab => self.stage_vocab(),
            Stage::TrainNgram => self.stage_train_ngram(),
            Stage::TrainNn => self.stage_train_nn(),
            Stage::DumpFeatures => self.stage_dump_features(),
            Stage::TuneStatic => self.stage_tune_static(),
            Stage::TrainGate => self.stage_train_gate(),
            Stage::Evaluate => self.stage_evaluate(),
            Stage::Analyze => self.stage_analyze(),
        }
    }

    fn corpus_lines(&self) -> Result<Vec<String>> {
        let mut lines = read_lines(&self.cfg.corpus)?;
        lines.retain(|l| !l.trim().is_empty());
        if lines.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(lines)
    }

    fn stage_vocab(&self) -> Result<()> {
        let lines = self.corpus_lines()?;
        let n = lines.len();
        let c = &self.cfg;
        let mut parts = vec![("train".to_string(), PartSize::Ratio(1.0))];
        for (name, size) in [
            ("valid", c.split_valid),
            ("gate_train", c.split_gate_train),
            ("gate_stop", c.split_gate_stop),
            ("test", c.split_test),
        ] {
            let k = size.resolve(n);
            if k == 0 {
                return Err(Error::Config {
                    key: format!("split_{name}"),
                    message: format!("gives an empty partition of {n} sentences"),
                });
            }
            parts.push((name.to_string(), PartSize::Count(k)));
        }
        let splits = split_corpus(
            n,
            &SplitSpec {
                parts,
                seed: derive_seed(c.seed, "split"),
            },
        )?;
        if splits.get("train").is_none_or(|t| t.is_empty()) {
            return Err(Error::invalid(
                "the split leaves no sentences for expert training",
            ));
        }
        let train = splits.get("train").unwrap();
        let vocab = build_vocab(
            train.iter().map(|&i| lines[i].as_str()),
            c.vocab_min_count,
            c.vocab_max_size,
        )?;
        vocab.save(&self.path("vocab.tsv"))?;
        splits.save(&self.path("splits"))?;
        log::info!(
            "vocab: {} sentences, {} word types; split sizes {:?}",
            n,
            vocab.len(),
            splits
                .parts
                .iter()
                .map(|(p, v)| (p.as_str(), v.len()))
                .collect::<Vec<_>>()
        );
        Ok(())
    }

    fn vocab(&self) -> Result<Vocabulary> {
        Vocabulary::load(&self.require("vocab.tsv", Stage::Vocab)?)
    }

    fn part_indices(&self, part: &str) -> Result<Vec<usize>> {
        self.require(&format!("splits/{part}.idx"), Stage::Vocab)?;
        Splits::load_part(&self.path("splits"), part)
    }

    /// Raw lines and encoded sentences of one partition.
    fn part(&self, part: &str, vocab: &Vocabulary) -> Result<(Vec<String>, Vec<EncodedSentence>)> {
        let idx = self.part_indices(part)?;
        let lines = self.corpus_lines()?;
        let raw: Vec<String> = idx
            .iter()
            .map(|&i| {
                lines.get(i).cloned().ok_or_else(|| {
                    Error::invalid(format!(
                        "split index {i} is past the corpus end; rerun stage `vocab`"
                    ))
                })
            })
            .collect::<Result<_>>()?;
        let enc = raw.iter().map(|l| encode(l, vocab)).collect();
        Ok((raw, enc))
    }

    fn stage_train_ngram(&self) -> Result<()> {
        let vocab = self.vocab()?;
        let (_, train) = self.part("train", &vocab)?;
        let counts = count_ngrams(&train, self.cfg.ngram_order)?;
        let opts = KnOptions {
            prune_min_count: self.cfg.ngram_prune_min_count,
            ..KnOptions::default()
        };
        let model = estimate_kn(&counts, vocab.len(), opts)?;
        for w in model.warnings() {
            log::warn!("train-ngram: {w}");
        }
        let path = self.path("ngram.arpa");
        let mut out = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        write_arpa(&model, &vocab, &mut out)?;
        out.flush().map_err(|e| Error::io(&path, e))?;
        log::info!(
            "train-ngram: order {} over {} sentences",
            model.order(),
            train.len()
        );
        Ok(())
    }

    fn ngram(&self, vocab: &Vocabulary) -> Result<KnModel> {
        let path = self.require("ngram.arpa", Stage::TrainNgram)?;
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let (arpa_vocab, model) = read_arpa(BufReader::new(f))?;
        if !arpa_vocab.words().eq(vocab.words()) {
            return Err(Error::Format {
                path: path.display().to_string(),
                message: "ARPA vocabulary differs from vocab.tsv; rerun stage `train-ngram`".into(),
            });
        }
        Ok(model)
    }

    fn stage_train_nn(&self) -> Result<()> {
        let vocab = self.vocab()?;
        let (_, train) = self.part("train", &vocab)?;
        let (_, valid) = self.part("valid", &vocab)?;
        let mut cfg = self.cfg.nn.clone();
        cfg.seed = derive_seed(self.cfg.seed, "nn-train");
        let init = init_params::<f32>(
            &cfg.arch(vocab.len()),
            derive_seed(self.cfg.seed, "nn-init"),
        )?;
        let (best, log) = train_nn(init, &train, &valid, &cfg)?;
        best.to_container()?.save(&self.path("neural.lmc"))?;
        write_json(&self.path("neural_log.json"), &log)?;
        Ok(())
    }

    fn neural(&self, vocab: &Vocabulary) -> Result<NeuralLm<f32>> {
        let path = self.require("neural.lmc", Stage::TrainNn)?;
        let nn = NeuralLm::<f32>::from_container(&Container::load(&path)?)?;
        if nn.arch.vocab_size != vocab.len() {
            return Err(Error::Format {
                path: path.display().to_string(),
                message: "neural model vocabulary differs from vocab.tsv; rerun stage `train-nn`"
                    .into(),
            });
        }
        Ok(nn)
    }

    fn wants(&self, mode: FeatureMode) -> bool {
        self.cfg.gate_modes.contains(&mode)
    }

    fn wants_full_file(&self) -> bool {
        self.wants(FeatureMode::Full) || self.wants(FeatureMode::Simple)
    }

    /// FULL-feature and HIDDEN-feature data for `sentences`, as configured.
    fn gate_inputs(
        &self,
        ng: &KnModel,
        nn: &NeuralLm<f32>,
        sentences: &[EncodedSentence],
    ) -> Result<(Option<GateData>, Option<GateData>)> {
        let hidden = self.wants(FeatureMode::Hidden);
        let scores: Vec<SentenceScores> =
            score_sentences(nn, sentences, self.cfg.score_batch_size, hidden)?;
        let build = |mode: FeatureMode| -> Result<GateData> {
            let seqs = sentences
                .iter()
                .zip(&scores)
                .map(|(s, sc)| sentence_features(ng, sc, s, mode))
                .collect::<Result<Vec<_>>>()?;
            GateData::new(mode.dim(nn.arch.d_hid), seqs)
        };
        let full = if self.wants_full_file() {
            Some(build(FeatureMode::Full)?)
        } else {
            None
        };
        let hid = if hidden {
            Some(build(FeatureMode::Hidden)?)
        } else {
            None
        };
        Ok((full, hid))
    }

    fn stage_dump_features(&self) -> Result<()> {
        let vocab = self.vocab()?;
        let ng = self.ngram(&vocab)?;
        let nn = self.neural(&vocab)?;
        std::fs::create_dir_all(self.path("features"))
            .map_err(|e| Error::io(self.path("features"), e))?;
        for part in ["gate_train", "gate_stop"] {
            let (_, sents) = self.part(part, &vocab)?;
            let (full, hidden) = self.gate_inputs(&ng, &nn, &sents)?;
            for (kind, data) in [("full", full), ("hidden", hidden)] {
                if let Some(d) = data {
                    let path = self.path(&format!("features/{part}_{kind}.tsv"));
                    let mut out =
                        BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
                    d.write_tsv(&mut out)?;
                    out.flush().map_err(|e| Error::io(&path, e))?;
                    log::info!(
                        "dump-features: {} steps to {}",
                        d.num_steps(),
                        path.display()
                    );
                }
            }
        }
        Ok(())
    }

    fn feature_file(&self, part: &str, mode: FeatureMode) -> String {
        let kind = if mode == FeatureMode::Hidden {
            "hidden"
        } else {
            "full"
        };
        format!("features/{part}_{kind}.tsv")
    }

    /// Gate data of a partition for `mode`, from the feature dump.
    fn load_features(&self, part: &str, mode: FeatureMode) -> Result<GateData> {
        let path = self.require(&self.feature_file(part, mode), Stage::DumpFeatures)?;
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let data = GateData::read_tsv(BufReader::new(f))?;
        if mode == FeatureMode::Simple {
            data.leading_columns(SIMPLE_DIM)
        } else {
            Ok(data)
        }
    }

    fn stage_tune_static(&self) -> Result<()> {
        let data = self.load_features("gate_train", self.cfg.gate_modes[0])?;
        let (p_nn, p_ng) = (data.p_nn(), data.p_ng());
        let lambda = tune_static_lambda(&p_nn, &p_ng)?;
        let choice = StaticChoice {
            lambda,
            gate_train_cross_entropy: static_cross_entropy(&p_nn, &p_ng, lambda)?,
        };
        log::info!("tune-static: λ* = {lambda:.2}");
        write_json(&self.path("static.json"), &choice)
    }

    fn static_choice(&self) -> Result<StaticChoice> {
        read_json(&self.require("static.json", Stage::TuneStatic)?)
    }

    fn gate_file(mode: FeatureMode, run: usize) -> String {
        format!("gates/{mode}_{run}.lmc")
    }

    fn stage_train_gate(&self) -> Result<()> {
        let choice = self.static_choice()?;
        std::fs::create_dir_all(self.path("gates"))
            .map_err(|e| Error::io(self.path("gates"), e))?;
        for &mode in &self.cfg.gate_modes {
            let raw_train = self.load_features("gate_train", mode)?;
            let raw_stop = self.load_features("gate_stop", mode)?;
            let norm = fit_normalizer(raw_train.stacked_features().view())?;
            let train = raw_train.normalized(&norm)?;
            let stop = raw_stop.normalized(&norm)?;
            for run in 0..self.cfg.runs {
                let seed = derive_seed(self.cfg.seed, &format!("gate-{mode}-{run}"));
                let net = init_gate(self.cfg.gate_arch, train.dim, seed, Some(choice.lambda))?;
                let mut cfg = self.cfg.gate.clone();
                cfg.seed = seed;
                let outcome = train_gate(net, &train, &stop, &cfg)?;
                log::info!(
                    "train-gate: {mode} run {run}: best held-out loss {:.5} at step {} of {}",
                    outcome.best_stop_loss,
                    outcome.best_step,
                    outcome.steps_run
                );
                let meta = GateMeta {
                    mode,
                    run,
                    seed,
                    normalizer: norm.clone(),
                    static_lambda: choice.lambda,
                    best_step: outcome.best_step,
                    best_stop_loss: outcome.best_stop_loss,
                };
                outcome
                    .net
                    .to_container(serde_json::to_value(&meta)?)?
                    .save(&self.path(&Self::gate_file(mode, run)))?;
                write_json(
                    &self.path(&format!("gates/{mode}_{run}.json")),
                    &serde_json::json!({
                        "steps_run": outcome.steps_run,
                        "best_step": outcome.best_step,
                        "evals": outcome.evals,
                    }),
                )?;
            }
        }
        Ok(())
    }

    fn gate(&self, mode: FeatureMode, run: usize) -> Result<(GateNet, GateMeta)> {
        let path = self.require(&Self::gate_file(mode, run), Stage::TrainGate)?;
        let (net, extra) = GateNet::from_container(&Container::load(&path)?)?;
        Ok((net, serde_json::from_value(extra)?))
    }

    fn stage_evaluate(&self) -> Result<()> {
        let vocab = self.vocab()?;
        let ng = self.ngram(&vocab)?;
        let nn = self.neural(&vocab)?;
        let choice = self.static_choice()?;
        let mut gates = Vec::new();
        for &mode in &self.cfg.gate_modes {
            for run in 0..self.cfg.runs {
                gates.push(self.gate(mode, run)?);
            }
        }
        let (raw, test) = self.part("test", &vocab)?;
        let (full, hidden) = self.gate_inputs(&ng, &nn, &test)?;
        let any = full
            .as_ref()
            .or(hidden.as_ref())
            .expect("at least one gate mode");
        let (p_nn, p_ng) = (any.p_nn(), any.p_ng());
        let mut moe: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
        for &mode in &self.cfg.gate_modes {
            let data = match mode {
                FeatureMode::Hidden => hidden.clone().expect("built for hidden mode"),
                FeatureMode::Full => full.clone().expect("built for full mode"),
                FeatureMode::Simple => full
                    .as_ref()
                    .expect("built for simple mode")
                    .leading_columns(SIMPLE_DIM)?,
            };
            let mut runs = Vec::new();
            for (net, meta) in gates.iter().filter(|(_, m)| m.mode == mode) {
                runs.push(net.lambdas(&data.normalized(&meta.normalizer)?)?.concat());
            }
            moe.push((format!("moe-{mode}"), runs));
        }
        let report = evaluate_all(&EvalInputs {
            p_nn: &p_nn,
            p_ng: &p_ng,
            static_lambda: choice.lambda,
            moe: moe.clone(),
        })?;
        std::fs::write(self.path("report.txt"), report.to_text())
            .map_err(|e| Error::io(self.path("report.txt"), e))?;
        write_json(&self.path("report.json"), &report.to_json())?;
        log::info!("evaluate:\n{}", report.to_text());

        let path = self.path("test_scores.tsv");
        let mut out = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        let io = |e| Error::io(&path, e);
        write!(out, "#sentence\tt\tword_id\tword\tp_nn\tp_ng").map_err(io)?;
        for (name, runs) in &moe {
            for r in 0..runs.len() {
                write!(out, "\tlambda_{}_{r}", name.trim_start_matches("moe-")).map_err(io)?;
            }
        }
        writeln!(out).map_err(io)?;
        let mut row = 0;
        for (si, (line, sent)) in raw.iter().zip(&test).enumerate() {
            let surface: Vec<&str> = line.split_whitespace().chain([EOS]).collect();
            for (t, (&id, word)) in sent.targets().iter().zip(&surface).enumerate() {
                write!(
                    out,
                    "{si}\t{}\t{id}\t{word}\t{}\t{}",
                    t + 1,
                    p_nn[row],
                    p_ng[row]
                )
                .map_err(io)?;
                for (_, runs) in &moe {
                    for r in runs {
                        write!(out, "\t{}", r[row]).map_err(io)?;
                    }
                }
                writeln!(out).map_err(io)?;
                row += 1;
            }
        }
        out.flush().map_err(io)?;
        Ok(())
    }

    /// The evaluation report written by `evaluate`.
    pub fn report(&self) -> Result<serde_json::Value> {
        read_json(&self.require("report.json", Stage::Evaluate)?)
    }

    fn stage_analyze(&self) -> Result<()> {
        let vocab = self.vocab()?;
        let choice = self.static_choice()?;
        let scores = TestScores::load(&self.require("test_scores.tsv", Stage::Evaluate)?)?;
        let report: EvalReport = {
            let v = self.report()?;
            report_from_json(&v)?
        };
        let dir = self.path("analysis");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

        let mut counts = vocab.counts().to_vec();
        counts[BOS_ID as usize] = 0;
        let bins = frequency_bins(&counts, self.cfg.bins)?;
        let p_static: Vec<f64> = scores
            .p_nn
            .iter()
            .zip(&scores.p_ng)
            .map(|(a, b)| choice.lambda * a + (1.0 - choice.lambda) * b)
            .collect();
        let mut models = vec![
            ("neural".to_string(), scores.p_nn.clone()),
            ("n-gram".to_string(), scores.p_ng.clone()),
            ("static".to_string(), p_static),
        ];
        for (name, runs) in &scores.lambdas {
            if let Some(l) = runs.first() {
                let p = l
                    .iter()
                    .zip(scores.p_nn.iter().zip(&scores.p_ng))
                    .map(|(l, (a, b))| l * a + (1.0 - l) * b)
                    .collect();
                models.push((format!("moe-{name}"), p));
            }
        }
        let bin_report = per_bin_report(&scores.word_ids, &models, &bins, "neural")?;
        write_text(&dir.join("bins.csv"), &bin_report.to_csv())?;
        write_json(&dir.join("bins.json"), &bin_report)?;

        let cap = capitalization_stats(
            &scores.words,
            &scores.p_nn,
            &scores.p_ng,
            self.cfg.capitalization_gap,
        )?;
        write_text(&dir.join("capitalization.csv"), &cap.to_csv())?;
        write_json(&dir.join("capitalization.json"), &cap)?;

        let moe_rows: Vec<_> = report
            .rows
            .iter()
            .filter(|r| r.model.starts_with("moe-"))
            .collect();
        let mut csv = String::from(
            "# Welch two-tailed p-values between per-run test perplexities of gated mixtures (needs >= 2 runs per side)\nmodel_a,model_b,mean_a,mean_b,p_value\n",
        );
        let mut tests = Vec::new();
        for (i, a) in moe_rows.iter().enumerate() {
            for b in &moe_rows[i + 1..] {
                if a.runs >= 2 && b.runs >= 2 {
                    let p = significance_test(&a.per_run, &b.per_run)?;
                    csv.push_str(&format!(
                        "{},{},{},{},{p}\n",
                        a.model, b.model, a.mean, b.mean
                    ));
                    tests.push(serde_json::json!({"model_a": a.model, "model_b": b.model, "mean_a": a.mean, "mean_b": b.mean, "p_value": p}));
                }
            }
        }
        write_text(&dir.join("significance.csv"), &csv)?;
        write_json(&dir.join("significance.json"), &tests)?;
        log::info!("analyze: wrote {}", dir.display());
        Ok(())
    }
}

/// Per-target rows of `test_scores.tsv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestScores {
    pub word_ids: Vec<u32>,
    pub words: Vec<String>,
    pub p_nn: Vec<f64>,
    pub p_ng: Vec<f64>,
    /// Per gate mode, one λ column per run.
    pub lambdas: Vec<(String, Vec<Vec<f64>>)>,
}

impl TestScores {
    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let bad = |m: String| Error::Format {
            path: path.display().to_string(),
            message: m,
        };
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path, e))?
            .ok_or_else(|| bad("empty file".into()))?;
        let cols: Vec<&str> = header.split('\t').collect();
        let mut lambdas: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
        let mut col_of: Vec<(usize, usize)> = Vec::new();
        for c in cols.iter().skip(6) {
            let rest = c
                .strip_prefix("lambda_")
                .ok_or_else(|| bad(format!("unexpected column `{c}`")))?;
            let (mode, _) = rest
                .rsplit_once('_')
                .ok_or_else(|| bad(format!("unexpected column `{c}`")))?;
            let mi = match lambdas.iter().position(|(m, _)| m == mode) {
                Some(i) => i,
                None => {
                    lambdas.push((mode.to_string(), Vec::new()));
                    lambdas.len() - 1
                }
            };
            lambdas[mi].1.push(Vec::new());
            col_of.push((mi, lambdas[mi].1.len() - 1));
        }
        let mut s = TestScores {
            word_ids: Vec::new(),
            words: Vec::new(),
            p_nn: Vec::new(),
            p_ng: Vec::new(),
            lambdas,
        };
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != cols.len() {
                return Err(bad(format!(
                    "row has {} fields, header has {}",
                    f.len(),
                    cols.len()
                )));
            }
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| bad(format!("bad number `{v}`")))
            };
            s.word_ids.push(
                f[2].parse()
                    .map_err(|_| bad(format!("bad word id `{}`", f[2])))?,
            );
            s.words.push(f[3].to_string());
            s.p_nn.push(num(f[4])?);
            s.p_ng.push(num(f[5])?);
            for (j, &(mi, ri)) in col_of.iter().enumerate() {
                s.lambdas[mi].1[ri].push(num(f[6 + j])?);
            }
        }
        Ok(s)
    }
}

fn report_from_json(v: &serde_json::Value) -> Result<EvalReport> {
    let models = v["models"]
        .as_object()
        .ok_or_else(|| Error::invalid("report.json lacks `models`"))?;
    let mut rows = Vec::new();
    for (name, m) in models {
        let per_run: Vec<f64> = serde_json::from_value(m["per_run"].clone())?;
        rows.push(crate::ensemble::ModelRow::from_runs(name.clone(), per_run)?);
    }
    Ok(EvalReport {
        static_lambda: v["static_lambda"].as_f64().unwrap_or(f64::NAN),
        num_targets: v["num_targets"].as_u64().unwrap_or(0) as usize,
        rows,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::SEQUENCE.iter().chain([&Stage::All]) {
            assert_eq!(s.name().parse::<Stage>().unwrap(), *s);
        }
        assert!("train".parse::<Stage>().is_err());
    }
}
