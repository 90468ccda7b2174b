use rand::seq::index::sample;

use super::lstm::{backward, forward, logits, softmax_loss, Segment, State};
use super::model::NeuralLm;
use crate::corpus::EncodedSentence;
use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Mean cross-entropy of the batch as one untruncated segment, without dropout.
fn batch_loss(m: &NeuralLm<f64>, seg: &Segment) -> f64 {
    let mut state = State::zeros(m.arch.layers, seg.batch, m.arch.d_hid);
    let fwd = forward(m, seg, &mut state, None);
    let mut z = logits(m, &fwd.top);
    let (loss, n) = softmax_loss(&mut z, seg);
    loss / n as f64
}

/// Denominator floor of [`relative_error`]. Central differences at ε = 1e-5
/// carry ~1e-10 of round-off, so smaller gradients have no meaningful
/// relative accuracy and are compared on that absolute scale instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Outcome of a finite-difference check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Compared coordinates whose gradient magnitude reaches the floor.
    pub significant: usize,
}

/// Compares the analytic gradient against central differences on at least
/// `coords` coordinates, spread evenly over the parameter tensors. Embedding
/// coordinates are drawn from rows of words in the batch (other rows have no
/// path to the loss).
pub fn nn_gradient_check(
    params: &NeuralLm<f64>,
    batch: &[EncodedSentence],
    epsilon: f64,
    coords: usize,
    seed: u64,
) -> Result<GradCheck> {
    if batch.is_empty() {
        return Err(Error::invalid("gradient check needs a nonempty batch"));
    }
    for s in batch {
        params.check_ids(s.ids())?;
    }
    let refs: Vec<&EncodedSentence> = batch.iter().collect();
    let seg = Segment::whole(&refs);
    let mut state = State::zeros(params.arch.layers, seg.batch, params.arch.d_hid);
    let fwd = forward(params, &seg, &mut state, None);
    let mut z = logits(params, &fwd.top);
    softmax_loss(&mut z, &seg);
    let mut grads = params.zeros_like();
    backward(params, &seg, &fwd, &z, &mut grads);

    let mut rng = rng_from_seed(seed);
    let analytic: Vec<Vec<f64>> = grads
        .tensors()
        .into_iter()
        .map(|(_, t)| t.to_vec())
        .collect();
    let groups = analytic.len();
    let per_group = coords.div_ceil(groups);
    let d_emb = params.arch.d_emb;
    let mut used_rows: Vec<usize> = seg
        .inputs
        .iter()
        .zip(&seg.mask)
        .filter(|(_, &m)| m)
        .map(|(&id, _)| id as usize)
        .collect();
    used_rows.sort_unstable();
    used_rows.dedup();

    let mut probe = params.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        significant: 0,
    };
    for (gi, grad) in analytic.iter().enumerate() {
        let candidates: Vec<usize> = if gi == 0 {
            used_rows
                .iter()
                .flat_map(|&r| r * d_emb..(r + 1) * d_emb)
                .collect()
        } else {
            (0..grad.len()).collect()
        };
        let k = per_group.min(candidates.len());
        for ci in sample(&mut rng, candidates.len(), k) {
            let i = candidates[ci];
            let orig = probe.tensors()[gi].1[i];
            probe.tensors_mut()[gi][i] = orig + epsilon;
            let up = batch_loss(&probe, &seg);
            probe.tensors_mut()[gi][i] = orig - epsilon;
            let down = batch_loss(&probe, &seg);
            probe.tensors_mut()[gi][i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = grad[i];
            report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
            report.checked += 1;
            if a.abs().max(numeric.abs()) >= REL_ERROR_FLOOR {
                report.significant += 1;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{init_params, NnArch};

    #[test]
    fn absent_words_get_zero_embedding_gradient() {
        let arch = NnArch {
            vocab_size: 12,
            d_emb: 3,
            d_hid: 4,
            layers: 1,
        };
        let m = init_params::<f64>(&arch, 1).unwrap();
        let s = EncodedSentence::from_words(&[3, 5, 5]).unwrap();
        let seg = Segment::whole(&[&s]);
        let mut state = State::zeros(1, 1, 4);
        let fwd = forward(&m, &seg, &mut state, None);
        let mut z = logits(&m, &fwd.top);
        softmax_loss(&mut z, &seg);
        let mut g = m.zeros_like();
        backward(&m, &seg, &fwd, &z, &mut g);
        for (row, grad) in g.emb.outer_iter().enumerate() {
            let used = [0, 3, 5].contains(&row);
            assert_eq!(grad.iter().any(|&x| x != 0.0), used, "row {row}");
        }
    }
}
