use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::data::GateSequence;
use crate::corpus::EncodedSentence;
use crate::neural::SentenceScores;
use crate::ngram::{DistStats, KnModel, QueryTrace};
use crate::{Error, Result};

/// Back-off weight and probability slots, one per n-gram order up to 5.
pub const NG_SLOTS: usize = 5;
pub const FULL_DIM: usize = 2 * NG_SLOTS + 5;
pub const SIMPLE_DIM: usize = 2 * NG_SLOTS + 1;
/// log10 α of an absent context suffix (α = 1).
pub const ALPHA_PAD: f64 = 0.0;
/// log10 p of an absent order; below any probability a model assigns.
pub const PROB_PAD: f64 = -7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// `[α_1..α_5, p_1..p_5, ln t, max_ng, H_ng, max_nn, H_nn]`
    Full,
    /// The first 11 FULL features (n-gram and position only).
    Simple,
    /// The neural model's top hidden state.
    Hidden,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 3] = [FeatureMode::Full, FeatureMode::Simple, FeatureMode::Hidden];

    pub fn dim(self, d_hid: usize) -> usize {
        match self {
            FeatureMode::Full => FULL_DIM,
            FeatureMode::Simple => SIMPLE_DIM,
            FeatureMode::Hidden => d_hid,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::Full => "full",
            FeatureMode::Simple => "simple",
            FeatureMode::Hidden => "hidden",
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(FeatureMode::Full),
            "simple" => Ok(FeatureMode::Simple),
            "hidden" => Ok(FeatureMode::Hidden),
            _ => Err(Error::invalid(format!(
                "unknown feature mode `{s}` (expected full, simple or hidden)"
            ))),
        }
    }
}

/// Gate input for predicting the word at position `t` (1-based).
///
/// `trace` comes from scoring the previous word w_{t-1} (absent at t = 1,
/// where the context is empty). The `ng` and `nn` statistics describe the two
/// experts' distributions over the upcoming word. Nothing here depends on w_t.
pub fn extract_features(
    trace: Option<&QueryTrace>,
    ng: DistStats,
    nn: DistStats,
    t: usize,
    mode: FeatureMode,
    hidden: Option<&[f32]>,
) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::invalid("positions start at t = 1"));
    }
    if mode == FeatureMode::Hidden {
        let h = hidden.ok_or_else(|| Error::invalid("HIDDEN features need the hidden state"))?;
        return Ok(h.iter().map(|&x| f64::from(x)).collect());
    }
    let mut f = Vec::with_capacity(FULL_DIM);
    let slot = |values: Option<&Vec<Option<f64>>>, i: usize, pad: f64| {
        values
            .and_then(|v| v.get(i).copied().flatten())
            .unwrap_or(pad)
    };
    for i in 0..NG_SLOTS {
        f.push(slot(trace.map(|tr| &tr.gram_backoffs), i, ALPHA_PAD));
    }
    for i in 0..NG_SLOTS {
        f.push(slot(trace.map(|tr| &tr.log_probs), i, PROB_PAD));
    }
    f.push((t as f64).ln());
    if mode == FeatureMode::Full {
        f.extend([ng.max, ng.entropy, nn.max, nn.entropy]);
    }
    Ok(f)
}

/// Gate-training rows for one sentence: features of `mode`, plus both
/// experts' probabilities of each target.
pub fn sentence_features(
    ng: &KnModel,
    nn: &SentenceScores,
    sentence: &EncodedSentence,
    mode: FeatureMode,
) -> Result<GateSequence> {
    let ids = sentence.ids();
    let steps = sentence.num_targets();
    if nn.ln_probs.len() != steps {
        return Err(Error::DimensionMismatch {
            expected: steps,
            got: nn.ln_probs.len(),
        });
    }
    let dim = match mode {
        FeatureMode::Hidden => nn
            .hidden
            .as_ref()
            .ok_or_else(|| Error::invalid("HIDDEN features need hidden states"))?
            .ncols(),
        m => m.dim(0),
    };
    let mut features = Array2::zeros((steps, dim));
    let mut p_nn = Vec::with_capacity(steps);
    let mut p_ng = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = i + 1;
        let context = &ids[..t];
        let (log10_p, _) = ng.score_word(context, ids[t])?;
        p_ng.push(10f64.powf(log10_p));
        p_nn.push(nn.ln_probs[i].exp());
        let row = match mode {
            FeatureMode::Hidden => {
                let h = nn.hidden.as_ref().unwrap().row(i);
                extract_features(None, zero_stats(), zero_stats(), t, mode, h.as_slice())?
            }
            _ => {
                let trace = if t >= 2 {
                    Some(ng.score_word(&ids[..t - 1], ids[t - 1])?.1)
                } else {
                    None
                };
                let nn_stats = DistStats {
                    max: nn.max_probs[i],
                    entropy: nn.entropies[i],
                };
                extract_features(
                    trace.as_ref(),
                    ng.context_stats(context)?,
                    nn_stats,
                    t,
                    mode,
                    None,
                )?
            }
        };
        features.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
    }
    Ok(GateSequence {
        features,
        p_nn,
        p_ng,
    })
}

fn zero_stats() -> DistStats {
    DistStats {
        max: 0.0,
        entropy: 0.0,
    }
}
