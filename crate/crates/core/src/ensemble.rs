//! Linear mixtures of the two experts, static λ tuning, perplexity and the
//! evaluation report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Grid resolution for the static λ: {0.00, 0.01, …, 1.00}.
pub const LAMBDA_GRID_STEPS: usize = 100;
/// Losses this close count as tied; ties go to the λ nearest 0.5.
pub const LAMBDA_TIE_TOLERANCE: f64 = 1e-12;

/// λ·p_nn + (1−λ)·p_ng
pub fn mixture_prob(p_nn: f64, p_ng: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "mixture weight {lambda} is outside [0, 1]"
        )));
    }
    Ok(lambda * p_nn + (1.0 - lambda) * p_ng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepScore {
    pub p_nn: f64,
    pub p_ng: f64,
    pub lambda: f64,
    pub p_ens: f64,
}

impl StepScore {
    pub fn new(p_nn: f64, p_ng: f64, lambda: f64) -> Result<Self> {
        for p in [p_nn, p_ng] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::invalid(format!(
                    "expert probability {p} is outside (0, 1]"
                )));
            }
        }
        Ok(StepScore {
            p_nn,
            p_ng,
            lambda,
            p_ens: mixture_prob(p_nn, p_ng, lambda)?,
        })
    }
}

/// Mean −ln p in nats.
pub fn cross_entropy(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::invalid("no probabilities to score"));
    }
    let mut total = 0.0;
    for &p in probs {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid(format!("probability {p} is outside (0, 1]")));
        }
        total -= p.ln();
    }
    Ok(total / probs.len() as f64)
}

/// exp of the mean negative natural log probability.
pub fn perplexity(probs: &[f64]) -> Result<f64> {
    Ok(cross_entropy(probs)?.exp())
}

fn check_pair(p_nn: &[f64], p_ng: &[f64]) -> Result<()> {
    if p_nn.len() != p_ng.len() {
        return Err(Error::DimensionMismatch {
            expected: p_nn.len(),
            got: p_ng.len(),
        });
    }
    if p_nn.is_empty() {
        return Err(Error::invalid("no steps to score"));
    }
    Ok(())
}

/// Mean mixture cross-entropy at a fixed λ.
pub fn static_cross_entropy(p_nn: &[f64], p_ng: &[f64], lambda: f64) -> Result<f64> {
    check_pair(p_nn, p_ng)?;
    let probs = p_nn
        .iter()
        .zip(p_ng)
        .map(|(&a, &b)| mixture_prob(a, b, lambda))
        .collect::<Result<Vec<_>>>()?;
    cross_entropy(&probs)
}

/// The grid λ minimizing mean mixture cross-entropy.
pub fn tune_static_lambda(p_nn: &[f64], p_ng: &[f64]) -> Result<f64> {
    check_pair(p_nn, p_ng)?;
    let mut best: (f64, f64) = (f64::INFINITY, 0.5);
    for i in 0..=LAMBDA_GRID_STEPS {
        let lambda = i as f64 / LAMBDA_GRID_STEPS as f64;
        let loss = static_cross_entropy(p_nn, p_ng, lambda)?;
        let tied = (loss - best.0).abs() <= LAMBDA_TIE_TOLERANCE;
        if (loss < best.0 && !tied) || (tied && (lambda - 0.5).abs() < (best.1 - 0.5).abs()) {
            best = (loss, lambda);
        }
    }
    Ok(best.1)
}

/// One report row: a model's test perplexity over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: String,
    pub mean: f64,
    /// Sample standard deviation / √runs; 0 for a single run.
    pub stderr: f64,
    pub runs: usize,
    pub per_run: Vec<f64>,
}

impl ModelRow {
    pub fn from_runs(model: impl Into<String>, per_run: Vec<f64>) -> Result<Self> {
        let n = per_run.len();
        if n == 0 {
            return Err(Error::invalid("a report row needs at least one run"));
        }
        let mean = per_run.iter().sum::<f64>() / n as f64;
        let stderr = if n == 1 {
            0.0
        } else {
            let var = per_run.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Ok(ModelRow {
            model: model.into(),
            mean,
            stderr,
            runs: n,
            per_run,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub static_lambda: f64,
    pub num_targets: usize,
    pub rows: Vec<ModelRow>,
}

impl EvalReport {
    pub fn row(&self, model: &str) -> Option<&ModelRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// Aligned table: model, mean, ± stderr, runs.
    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.model.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut s = format!(
            "test targets: {}  static lambda: {:.2}\n{:<width$}  {:>10}  {:>8}  {:>4}\n",
            self.num_targets, self.static_lambda, "model", "perplexity", "stderr", "runs"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>10.3}  {:>8.3}  {:>4}",
                r.model, r.mean, r.stderr, r.runs
            );
        }
        s
    }

    /// `{"static_lambda", "num_targets", "models": {model: {mean, stderr, runs, per_run}}}`
    pub fn to_json(&self) -> serde_json::Value {
        let mut models = serde_json::Map::new();
        for r in &self.rows {
            models.insert(
                r.model.clone(),
                serde_json::json!({
                    "mean": r.mean,
                    "stderr": r.stderr,
                    "runs": r.runs,
                    "per_run": r.per_run,
                }),
            );
        }
        serde_json::json!({
            "static_lambda": self.static_lambda,
            "num_targets": self.num_targets,
            "models": models,
        })
    }
}

/// Expert probabilities of every test target plus, per MoE variant, one λ
/// sequence per gate run (aligned with the targets).
#[derive(Debug, Clone)]
pub struct EvalInputs<'a> {
    pub p_nn: &'a [f64],
    pub p_ng: &'a [f64],
    pub static_lambda: f64,
    pub moe: Vec<(String, Vec<Vec<f64>>)>,
}

pub const ROW_NGRAM: &str = "n-gram";
pub const ROW_NEURAL: &str = "neural";
pub const ROW_STATIC: &str = "static";

/// Rows for both experts, the static ensemble and each MoE variant.
pub fn evaluate_all(inputs: &EvalInputs<'_>) -> Result<EvalReport> {
    check_pair(inputs.p_nn, inputs.p_ng)?;
    let mut rows = vec![
        ModelRow::from_runs(ROW_NGRAM, vec![perplexity(inputs.p_ng)?])?,
        ModelRow::from_runs(ROW_NEURAL, vec![perplexity(inputs.p_nn)?])?,
        ModelRow::from_runs(
            ROW_STATIC,
            vec![static_cross_entropy(inputs.p_nn, inputs.p_ng, inputs.static_lambda)?.exp()],
        )?,
    ];
    for (name, runs) in &inputs.moe {
        let mut per_run = Vec::with_capacity(runs.len());
        for lambdas in runs {
            if lambdas.len() != inputs.p_nn.len() {
                return Err(Error::DimensionMismatch {
                    expected: inputs.p_nn.len(),
                    got: lambdas.len(),
                });
            }
            let probs = lambdas
                .iter()
                .zip(inputs.p_nn.iter().zip(inputs.p_ng))
                .map(|(&l, (&a, &b))| mixture_prob(a, b, l))
                .collect::<Result<Vec<_>>>()?;
            per_run.push(perplexity(&probs)?);
        }
        rows.push(ModelRow::from_runs(name.clone(), per_run)?);
    }
    Ok(EvalReport {
        static_lambda: inputs.static_lambda,
        num_targets: inputs.p_nn.len(),
        rows,
    })
}
