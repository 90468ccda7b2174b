//! Batched forward and backward passes over one time-major segment.
//!
//! Row `t * batch + b` of every `TB × _` matrix holds time step `t` of batch
//! row `b`. Padding rows have `mask == false`: they contribute no loss, and
//! since padding only ever follows the real tokens of a row, no gradient
//! flows from them into real steps.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::model::NeuralLm;
use super::Real;
use crate::corpus::EncodedSentence;

/// One truncated-BPTT window of a batch of sentences.
#[derive(Debug, Clone)]
pub(crate) struct Segment {
    pub steps: usize,
    pub batch: usize,
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    pub mask: Vec<bool>,
}

impl Segment {
    /// Consecutive windows of at most `bptt` steps covering whole sentences,
    /// one sentence per batch row, padded to the longest.
    pub fn windows(sentences: &[&EncodedSentence], bptt: usize) -> Vec<Segment> {
        let bsz = sentences.len();
        let total = sentences.iter().map(|s| s.num_targets()).max().unwrap_or(0);
        let bptt = bptt.max(1);
        (0..total)
            .step_by(bptt)
            .map(|start| {
                let steps = bptt.min(total - start);
                let mut seg = Segment {
                    steps,
                    batch: bsz,
                    inputs: vec![0; steps * bsz],
                    targets: vec![0; steps * bsz],
                    mask: vec![false; steps * bsz],
                };
                for (b, s) in sentences.iter().enumerate() {
                    let ids = s.ids();
                    for t in 0..steps.min(s.num_targets().saturating_sub(start)) {
                        let r = t * bsz + b;
                        seg.inputs[r] = ids[start + t];
                        seg.targets[r] = ids[start + t + 1];
                        seg.mask[r] = true;
                    }
                }
                seg
            })
            .collect()
    }

    pub fn whole(sentences: &[&EncodedSentence]) -> Segment {
        Self::windows(sentences, usize::MAX)
            .pop()
            .expect("sentences always have a target")
    }

    pub fn num_targets(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Recurrent state carried between segments of the same batch.
#[derive(Debug, Clone)]
pub(crate) struct State<T> {
    pub h: Vec<Array2<T>>,
    pub c: Vec<Array2<T>>,
}

impl<T: Real> State<T> {
    pub fn zeros(layers: usize, batch: usize, d_hid: usize) -> Self {
        State {
            h: vec![Array2::zeros((batch, d_hid)); layers],
            c: vec![Array2::zeros((batch, d_hid)); layers],
        }
    }
}

struct LayerCache<T> {
    /// layer input after dropout, TB × in
    x: Array2<T>,
    /// activated gates [i, f, g, o], TB × 4h
    gates: Array2<T>,
    c: Array2<T>,
    tanh_c: Array2<T>,
    /// layer output before dropout, TB × h
    h: Array2<T>,
    h0: Array2<T>,
    c0: Array2<T>,
}

pub(crate) struct Forward<T> {
    /// classifier input (top layer output after dropout), TB × h
    pub top: Array2<T>,
    layers: Vec<LayerCache<T>>,
    emb_mask: Option<Array2<T>>,
    out_masks: Vec<Option<Array2<T>>>,
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn dropout_mask<T: Real>(rows: usize, cols: usize, rate: f64, rng: &mut ChaCha8Rng) -> Array2<T> {
    let keep = T::lit(1.0 / (1.0 - rate));
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.gen::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    })
}

/// Runs the LSTM stack over a segment, updating `state` to the final step.
/// With `dropout = Some((rate, rng))`, inverted dropout is applied to the
/// embedding output and to every layer output.
pub(crate) fn forward<T: Real>(
    m: &NeuralLm<T>,
    seg: &Segment,
    state: &mut State<T>,
    mut dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Forward<T> {
    let (steps, bsz) = (seg.steps, seg.batch);
    let rows = steps * bsz;
    let hs = m.arch.d_hid;
    let g4 = 4 * hs;

    let mut x = Array2::zeros((rows, m.arch.d_emb));
    for (r, &id) in seg.inputs.iter().enumerate() {
        x.row_mut(r).assign(&m.emb.row(id as usize));
    }
    let mut new_mask = |cols: usize| match dropout.as_mut() {
        Some((rate, rng)) if *rate > 0.0 => Some(dropout_mask::<T>(rows, cols, *rate, rng)),
        _ => None,
    };
    let emb_mask = new_mask(m.arch.d_emb);
    if let Some(mask) = &emb_mask {
        x *= mask;
    }

    let mut caches = Vec::with_capacity(m.layers.len());
    let mut out_masks = Vec::with_capacity(m.layers.len());
    for (li, layer) in m.layers.iter().enumerate() {
        let mut z = x.dot(&layer.w_x);
        z += &layer.b;
        let mut c_all = Array2::zeros((rows, hs));
        let mut tc_all = Array2::zeros((rows, hs));
        let mut h_all = Array2::zeros((rows, hs));
        let h0 = state.h[li].clone();
        let c0 = state.c[li].clone();
        let h_prev = &mut state.h[li];
        let c_prev = &mut state.c[li];
        for t in 0..steps {
            let r0 = t * bsz;
            {
                let mut zt = z.slice_mut(s![r0..r0 + bsz, ..]);
                general_mat_mul(T::one(), &*h_prev, &layer.w_h, T::one(), &mut zt);
            }
            let zs = z.as_slice_mut().unwrap();
            let cs = c_all.as_slice_mut().unwrap();
            let tcs = tc_all.as_slice_mut().unwrap();
            let hsl = h_all.as_slice_mut().unwrap();
            let hp = h_prev.as_slice_mut().unwrap();
            let cp = c_prev.as_slice_mut().unwrap();
            for b in 0..bsz {
                let r = r0 + b;
                let zr = &mut zs[r * g4..(r + 1) * g4];
                for j in 0..hs {
                    let i = sigmoid(zr[j]);
                    let f = sigmoid(zr[hs + j]);
                    let g = zr[2 * hs + j].tanh();
                    let o = sigmoid(zr[3 * hs + j]);
                    zr[j] = i;
                    zr[hs + j] = f;
                    zr[2 * hs + j] = g;
                    zr[3 * hs + j] = o;
                    let c = f * cp[b * hs + j] + i * g;
                    let tc = c.tanh();
                    let h = o * tc;
                    cs[r * hs + j] = c;
                    tcs[r * hs + j] = tc;
                    hsl[r * hs + j] = h;
                    cp[b * hs + j] = c;
                    hp[b * hs + j] = h;
                }
            }
        }
        let out_mask = new_mask(hs);
        let mut next = h_all.clone();
        if let Some(mask) = &out_mask {
            next *= mask;
        }
        caches.push(LayerCache {
            x: std::mem::replace(&mut x, next),
            gates: z,
            c: c_all,
            tanh_c: tc_all,
            h: h_all,
            h0,
            c0,
        });
        out_masks.push(out_mask);
    }
    Forward {
        top: x,
        layers: caches,
        emb_mask,
        out_masks,
    }
}

/// Logits `top · out_w + out_b`, TB × V.
pub(crate) fn logits<T: Real>(m: &NeuralLm<T>, top: &Array2<T>) -> Array2<T> {
    let mut z = top.dot(&m.out_w);
    z += &m.out_b;
    z
}

/// Summed cross-entropy (nats) over the unmasked rows, and the gradient of
/// the mean over those rows with respect to the logits (computed in place).
pub(crate) fn softmax_loss<T: Real>(z: &mut Array2<T>, seg: &Segment) -> (f64, usize) {
    let ntok = seg.num_targets();
    let scale = T::lit(1.0 / ntok.max(1) as f64);
    let mut loss = 0.0;
    for (r, mut row) in z.axis_iter_mut(Axis(0)).enumerate() {
        if !seg.mask[r] {
            row.fill(T::zero());
            continue;
        }
        let row = row.as_slice_mut().unwrap();
        let target = seg.targets[r] as usize;
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let zt = row[target] - max;
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        loss += sum.to_f64().unwrap().ln() - zt.to_f64().unwrap();
        let k = scale / sum;
        for v in row.iter_mut() {
            *v *= k;
        }
        row[target] -= scale;
    }
    (loss, ntok)
}

/// Accumulates into `grads` the gradient given `dz_out` = dLoss/dlogits.
pub(crate) fn backward<T: Real>(
    m: &NeuralLm<T>,
    seg: &Segment,
    fwd: &Forward<T>,
    dz_out: &Array2<T>,
    grads: &mut NeuralLm<T>,
) {
    let (steps, bsz) = (seg.steps, seg.batch);
    let hs = m.arch.d_hid;
    let g4 = 4 * hs;

    general_mat_mul(T::one(), &fwd.top.t(), dz_out, T::one(), &mut grads.out_w);
    grads.out_b += &dz_out.sum_axis(Axis(0));
    let mut d_out = dz_out.dot(&m.out_w.t());

    for li in (0..m.layers.len()).rev() {
        let layer = &m.layers[li];
        let cache = &fwd.layers[li];
        if let Some(mask) = &fwd.out_masks[li] {
            d_out *= mask;
        }
        let mut dz = Array2::<T>::zeros((steps * bsz, g4));
        let mut dh_next = Array2::<T>::zeros((bsz, hs));
        let mut dc_next = Array2::<T>::zeros((bsz, hs));
        let gates = cache.gates.as_slice().unwrap();
        let cs = cache.c.as_slice().unwrap();
        let tcs = cache.tanh_c.as_slice().unwrap();
        let c0 = cache.c0.as_slice().unwrap();
        let dho = d_out.as_slice().unwrap();
        for t in (0..steps).rev() {
            let r0 = t * bsz;
            {
                let dzs = dz.as_slice_mut().unwrap();
                let dhn = dh_next.as_slice().unwrap();
                let dcn = dc_next.as_slice_mut().unwrap();
                for b in 0..bsz {
                    let r = r0 + b;
                    let gr = &gates[r * g4..(r + 1) * g4];
                    let dzr = &mut dzs[r * g4..(r + 1) * g4];
                    for j in 0..hs {
                        let (i, f, g, o) = (gr[j], gr[hs + j], gr[2 * hs + j], gr[3 * hs + j]);
                        let tc = tcs[r * hs + j];
                        let c_prev = if t == 0 {
                            c0[b * hs + j]
                        } else {
                            cs[(r - bsz) * hs + j]
                        };
                        let dh = dho[r * hs + j] + dhn[b * hs + j];
                        let dc = dcn[b * hs + j] + dh * o * (T::one() - tc * tc);
                        dzr[j] = dc * g * i * (T::one() - i);
                        dzr[hs + j] = dc * c_prev * f * (T::one() - f);
                        dzr[2 * hs + j] = dc * i * (T::one() - g * g);
                        dzr[3 * hs + j] = dh * tc * o * (T::one() - o);
                        dcn[b * hs + j] = dc * f;
                    }
                }
            }
            if t > 0 {
                let dzt = dz.slice(s![r0..r0 + bsz, ..]);
                general_mat_mul(T::one(), &dzt, &layer.w_h.t(), T::zero(), &mut dh_next);
            }
        }

        // h_{t-1} for every row: the initial state, then the outputs shifted by one step
        let mut h_prev = Array2::<T>::zeros((steps * bsz, hs));
        h_prev.slice_mut(s![..bsz, ..]).assign(&cache.h0);
        if steps > 1 {
            h_prev
                .slice_mut(s![bsz.., ..])
                .assign(&cache.h.slice(s![..(steps - 1) * bsz, ..]));
        }
        let gl = &mut grads.layers[li];
        general_mat_mul(T::one(), &h_prev.t(), &dz, T::one(), &mut gl.w_h);
        general_mat_mul(T::one(), &cache.x.t(), &dz, T::one(), &mut gl.w_x);
        gl.b += &dz.sum_axis(Axis(0));
        d_out = dz.dot(&layer.w_x.t());
    }

    if let Some(mask) = &fwd.emb_mask {
        d_out *= mask;
    }
    for (r, &id) in seg.inputs.iter().enumerate() {
        if seg.mask[r] {
            let mut row = grads.emb.row_mut(id as usize);
            row += &d_out.row(r);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{init_params, NnArch};

    #[test]
    fn output_gradient_is_softmax_minus_onehot() {
        let arch = NnArch {
            vocab_size: 7,
            d_emb: 3,
            d_hid: 5,
            layers: 1,
        };
        let m = init_params::<f64>(&arch, 2).unwrap();
        let seg = Segment {
            steps: 3,
            batch: 1,
            inputs: vec![0, 4, 5],
            targets: vec![4, 5, 1],
            mask: vec![true; 3],
        };
        let mut state = State::zeros(1, 1, 5);
        let fwd = forward(&m, &seg, &mut state, None);
        let mut z = logits(&m, &fwd.top);
        let raw = z.clone();
        softmax_loss(&mut z, &seg);
        let mut grads = m.zeros_like();
        backward(&m, &seg, &fwd, &z, &mut grads);

        let mut expected = Array2::<f64>::zeros((5, 7));
        for r in 0..3 {
            let row = raw.row(r);
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for w in 0..7 {
                let p = (row[w] - max).exp() / sum;
                let d = (p - if w == seg.targets[r] as usize {
                    1.0
                } else {
                    0.0
                }) / 3.0;
                for k in 0..5 {
                    expected[[k, w]] += d * fwd.top[[r, k]];
                }
            }
        }
        for (a, b) in grads.out_w.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
