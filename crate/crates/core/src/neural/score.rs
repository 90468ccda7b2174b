use ndarray::{s, Array1, Array2};

use super::lstm::{forward, logits, Segment, State};
use super::model::NeuralLm;
use super::Real;
use crate::corpus::EncodedSentence;
use crate::rng::rng_from_seed;
use crate::Result;

/// Rows of logits materialized at once while scoring.
const LOGIT_BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DropoutMode {
    Off,
    On { rate: f64, seed: u64 },
}

/// One prediction step: the top-layer hidden state and P(· | context).
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<T> {
    pub hidden: Array1<T>,
    pub dist: Array1<T>,
}

/// Runs one sentence and returns one output per prediction target.
pub fn nn_forward<T: Real>(
    m: &NeuralLm<T>,
    sentence: &EncodedSentence,
    mode: DropoutMode,
) -> Result<Vec<StepOutput<T>>> {
    m.check_ids(sentence.ids())?;
    let seg = Segment::whole(&[sentence]);
    let mut state = State::zeros(m.arch.layers, 1, m.arch.d_hid);
    let fwd = match mode {
        DropoutMode::Off => forward(m, &seg, &mut state, None),
        DropoutMode::On { rate, seed } => {
            let mut rng = rng_from_seed(seed);
            forward(m, &seg, &mut state, Some((rate, &mut rng)))
        }
    };
    let z = logits(m, &fwd.top);
    Ok((0..seg.steps)
        .map(|t| {
            let row = z.row(t);
            let max = row.fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut dist = row.mapv(|v| (v - max).exp());
            let sum = dist.sum();
            dist.mapv_inplace(|v| v / sum);
            StepOutput {
                hidden: fwd.top.row(t).to_owned(),
                dist,
            }
        })
        .collect())
}

/// Per-target scores of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceScores {
    /// ln P(w_t | c)
    pub ln_probs: Vec<f64>,
    /// max_w P(w | c)
    pub max_probs: Vec<f64>,
    /// entropy of P(· | c) in nats
    pub entropies: Vec<f64>,
    /// top-layer hidden state per step (steps × d_hid), when requested
    pub hidden: Option<Array2<f32>>,
}

/// Scores sentences in length-sorted batches without dropout. Output order
/// matches the input.
pub fn score_sentences<T: Real>(
    m: &NeuralLm<T>,
    sentences: &[EncodedSentence],
    batch_size: usize,
    want_hidden: bool,
) -> Result<Vec<SentenceScores>> {
    for s in sentences {
        m.check_ids(s.ids())?;
    }
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.sort_by_key(|&i| sentences[i].len());
    let mut out: Vec<Option<SentenceScores>> = vec![None; sentences.len()];
    let hs = m.arch.d_hid;
    for chunk in order.chunks(batch_size.max(1)) {
        let batch: Vec<&EncodedSentence> = chunk.iter().map(|&i| &sentences[i]).collect();
        let seg = Segment::whole(&batch);
        let bsz = seg.batch;
        let mut state = State::zeros(m.arch.layers, bsz, hs);
        let fwd = forward(m, &seg, &mut state, None);
        let mut scores: Vec<SentenceScores> = batch
            .iter()
            .map(|s| {
                let n = s.num_targets();
                SentenceScores {
                    ln_probs: Vec::with_capacity(n),
                    max_probs: Vec::with_capacity(n),
                    entropies: Vec::with_capacity(n),
                    hidden: want_hidden.then(|| Array2::zeros((n, hs))),
                }
            })
            .collect();
        let rows = seg.steps * bsz;
        let mut start = 0;
        while start < rows {
            let end = (start + LOGIT_BLOCK).min(rows);
            let mut z = fwd.top.slice(s![start..end, ..]).dot(&m.out_w);
            z += &m.out_b;
            for (k, row) in z.outer_iter().enumerate() {
                let r = start + k;
                if !seg.mask[r] {
                    continue;
                }
                let (t, b) = (r / bsz, r % bsz);
                let max = row.fold(T::neg_infinity(), |a, &v| a.max(v));
                let (mut sum, mut acc) = (0.0f64, 0.0f64);
                for &v in row.iter() {
                    let d = v - max;
                    let e = d.exp().to_f64().unwrap();
                    sum += e;
                    acc += e * d.to_f64().unwrap();
                }
                let zt = (row[seg.targets[r] as usize] - max).to_f64().unwrap();
                let sc = &mut scores[b];
                sc.ln_probs.push(zt - sum.ln());
                sc.max_probs.push(1.0 / sum);
                sc.entropies.push(sum.ln() - acc / sum);
                if let Some(h) = sc.hidden.as_mut() {
                    for (dst, src) in h.row_mut(t).iter_mut().zip(fwd.top.row(r)) {
                        *dst = src.to_f32().unwrap();
                    }
                }
            }
            start = end;
        }
        for (&i, sc) in chunk.iter().zip(scores) {
            out[i] = Some(sc);
        }
    }
    Ok(out
        .into_iter()
        .map(|s| s.expect("every sentence scored"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{init_params, NnArch};

    fn arch() -> NnArch {
        NnArch {
            vocab_size: 9,
            d_emb: 4,
            d_hid: 6,
            layers: 2,
        }
    }

    fn sents() -> Vec<EncodedSentence> {
        vec![
            EncodedSentence::from_words(&[3, 4, 5, 6]).unwrap(),
            EncodedSentence::from_words(&[8]).unwrap(),
            EncodedSentence::from_words(&[]).unwrap(),
            EncodedSentence::from_words(&[7, 7, 2, 3, 4, 5, 6, 8]).unwrap(),
        ]
    }

    #[test]
    fn distributions_normalize_and_have_one_row_per_target() {
        let m = init_params::<f32>(&arch(), 4).unwrap();
        for s in sents() {
            let out = nn_forward(&m, &s, DropoutMode::Off).unwrap();
            assert_eq!(out.len(), s.num_targets());
            for step in &out {
                assert_eq!(step.hidden.len(), 6);
                assert!((step.dist.sum() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_parameters_give_uniform() {
        let m = init_params::<f64>(&arch(), 4).unwrap().zeros_like();
        let out = nn_forward(&m, &sents()[0], DropoutMode::Off).unwrap();
        for step in out {
            assert!(step.dist.iter().all(|&p| p == 1.0 / 9.0));
        }
    }

    #[test]
    fn dropout_is_seeded() {
        let m = init_params::<f32>(&arch(), 4).unwrap();
        let s = &sents()[3];
        let on = |seed| nn_forward(&m, s, DropoutMode::On { rate: 0.5, seed }).unwrap();
        assert_eq!(on(1), on(1));
        assert_ne!(on(1), on(2));
        assert_eq!(
            nn_forward(&m, s, DropoutMode::Off).unwrap(),
            nn_forward(&m, s, DropoutMode::Off).unwrap()
        );
    }

    #[test]
    fn batched_scores_match_single_sentence_pass() {
        let m = init_params::<f64>(&arch(), 9).unwrap();
        let ss = sents();
        let scores = score_sentences(&m, &ss, 3, true).unwrap();
        for (s, sc) in ss.iter().zip(&scores) {
            let single = nn_forward(&m, s, DropoutMode::Off).unwrap();
            for (t, step) in single.iter().enumerate() {
                let target = s.targets()[t] as usize;
                assert!((sc.ln_probs[t] - step.dist[target].ln()).abs() < 1e-12);
                let max = step.dist.fold(0.0f64, |a, &b| a.max(b));
                assert!((sc.max_probs[t] - max).abs() < 1e-12);
                let h: f64 = step.dist.iter().map(|p| -p * p.ln()).sum();
                assert!((sc.entropies[t] - h).abs() < 1e-12);
                let hid = sc.hidden.as_ref().unwrap();
                for k in 0..6 {
                    assert!((f64::from(hid[[t, k]]) - step.hidden[k]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn out_of_range_id_is_rejected() {
        let m = init_params::<f32>(&arch(), 4).unwrap();
        let s = EncodedSentence::from_words(&[3, 42]).unwrap();
        assert!(nn_forward(&m, &s, DropoutMode::Off).is_err());
        assert!(score_sentences(&m, &[s], 4, false).is_err());
    }
}
