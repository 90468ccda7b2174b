//! Gating networks mapping a feature sequence to mixture weights λ_t.
//!
//! All three architectures end in a scalar logit and a sigmoid:
//! - LIN: `logit = x·w + b`
//! - MLP: two rectified layers of 32 units, then the linear output
//! - LSTM: the MLP trunk feeding an 8-unit LSTM (state reset per sentence),
//!   then the linear output on its hidden state
//!
//! Parameters live in one flat `f64` vector so the optimizer and the
//! finite-difference check treat every architecture alike.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::{GateData, GateSequence};
use crate::container::{Container, Tensor};
use crate::rng::rng_from_seed;
use crate::{Error, Result};

pub const MLP_UNITS: usize = 32;
pub const LSTM_UNITS: usize = 8;
/// Logits are clamped to ±this before the sigmoid, keeping λ strictly inside
/// (0, 1) in floating point (σ(30) = 1 − 9.4e−14).
pub const LOGIT_LIMIT: f64 = 30.0;
/// Warm-start λ is clamped to [this, 1 − this].
const INIT_LAMBDA_EDGE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateArch {
    Lin,
    Mlp,
    Lstm,
}

impl GateArch {
    pub const ALL: [GateArch; 3] = [GateArch::Lin, GateArch::Mlp, GateArch::Lstm];

    pub fn name(self) -> &'static str {
        match self {
            GateArch::Lin => "lin",
            GateArch::Mlp => "mlp",
            GateArch::Lstm => "lstm",
        }
    }
}

impl fmt::Display for GateArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lin" => Ok(GateArch::Lin),
            "mlp" => Ok(GateArch::Mlp),
            "lstm" => Ok(GateArch::Lstm),
            _ => Err(Error::invalid(format!(
                "unknown gate architecture `{s}` (expected lin, mlp or lstm)"
            ))),
        }
    }
}

/// Named parameter blocks in storage order, with shapes.
pub fn param_shapes(arch: GateArch, input_dim: usize) -> Vec<(&'static str, Vec<usize>)> {
    let (m, k) = (MLP_UNITS, LSTM_UNITS);
    let trunk = [
        ("trunk.w1", vec![input_dim, m]),
        ("trunk.b1", vec![m]),
        ("trunk.w2", vec![m, m]),
        ("trunk.b2", vec![m]),
    ];
    match arch {
        GateArch::Lin => vec![("out.w", vec![input_dim]), ("out.b", vec![1])],
        GateArch::Mlp => {
            let mut v = trunk.to_vec();
            v.extend([("out.w", vec![m]), ("out.b", vec![1])]);
            v
        }
        GateArch::Lstm => {
            let mut v = trunk.to_vec();
            v.extend([
                ("lstm.w_x", vec![m, 4 * k]),
                ("lstm.w_h", vec![k, 4 * k]),
                ("lstm.b", vec![4 * k]),
                ("out.w", vec![k]),
                ("out.b", vec![1]),
            ]);
            v
        }
    }
}

pub fn count_params(arch: GateArch, input_dim: usize) -> usize {
    param_shapes(arch, input_dim)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

#[derive(Debug, Clone, Default)]
struct Offsets {
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    wx: Range<usize>,
    wh: Range<usize>,
    bl: Range<usize>,
    wo: Range<usize>,
    bo: Range<usize>,
}

fn offsets(arch: GateArch, input_dim: usize) -> Offsets {
    let mut o = Offsets::default();
    let mut at = 0;
    for (name, shape) in param_shapes(arch, input_dim) {
        let n: usize = shape.iter().product();
        let r = at..at + n;
        at += n;
        match name {
            "trunk.w1" => o.w1 = r,
            "trunk.b1" => o.b1 = r,
            "trunk.w2" => o.w2 = r,
            "trunk.b2" => o.b2 = r,
            "lstm.w_x" => o.wx = r,
            "lstm.w_h" => o.wh = r,
            "lstm.b" => o.bl = r,
            "out.w" => o.wo = r,
            "out.b" => o.bo = r,
            _ => unreachable!(),
        }
    }
    o
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// dL/dλ of L = −ln(λ·p_nn + (1−λ)·p_ng).
pub fn mixture_loss_grad(lambda: f64, p_nn: f64, p_ng: f64) -> f64 {
    -(p_nn - p_ng) / (lambda * p_nn + (1.0 - lambda) * p_ng)
}

/// −ln(λ·p_nn + (1−λ)·p_ng)
pub fn mixture_loss(lambda: f64, p_nn: f64, p_ng: f64) -> f64 {
    -(lambda * p_nn + (1.0 - lambda) * p_ng).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateNet {
    pub arch: GateArch,
    pub input_dim: usize,
    pub params: Vec<f64>,
}

/// Random init: Glorot-uniform weights, zero biases (LSTM forget bias 1).
///
/// With `warm_lambda`, the output layer starts at zero weights and bias
/// logit(λ), so the untrained gate reproduces that constant mixture.
pub fn init_gate(
    arch: GateArch,
    input_dim: usize,
    seed: u64,
    warm_lambda: Option<f64>,
) -> Result<GateNet> {
    if input_dim == 0 {
        return Err(Error::invalid("gate input dimension must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let o = offsets(arch, input_dim);
    let mut params = vec![0.0; count_params(arch, input_dim)];
    let mut glorot = |r: &Range<usize>, fan_in: usize, fan_out: usize, params: &mut [f64]| {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for p in &mut params[r.clone()] {
            *p = rng.gen_range(-a..a);
        }
    };
    let (m, k) = (MLP_UNITS, LSTM_UNITS);
    if arch != GateArch::Lin {
        glorot(&o.w1, input_dim, m, &mut params);
        glorot(&o.w2, m, m, &mut params);
    }
    if arch == GateArch::Lstm {
        glorot(&o.wx, m, 4 * k, &mut params);
        glorot(&o.wh, k, 4 * k, &mut params);
        for p in &mut params[o.bl.start + k..o.bl.start + 2 * k] {
            *p = 1.0;
        }
    }
    match warm_lambda {
        Some(l) => {
            if !l.is_finite() {
                return Err(Error::invalid("warm-start λ must be finite"));
            }
            let l = l.clamp(INIT_LAMBDA_EDGE, 1.0 - INIT_LAMBDA_EDGE);
            params[o.bo.start] = (l / (1.0 - l)).ln();
        }
        None => {
            let fan_in = o.wo.len();
            glorot(&o.wo, fan_in, 1, &mut params);
        }
    }
    Ok(GateNet {
        arch,
        input_dim,
        params,
    })
}

/// Activations of one forward pass over sentences stacked row-wise.
pub(crate) struct Pass {
    lens: Vec<usize>,
    x: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
    /// LSTM gates after activation, rows × 4k, order [i, f, g, o]
    gates: Array2<f64>,
    c: Array2<f64>,
    h: Array2<f64>,
    raw_logits: Vec<f64>,
    pub(crate) lambdas: Vec<f64>,
}

impl GateNet {
    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn view2(&self, r: &Range<usize>, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.params[r.clone()]).expect("layout")
    }

    fn view1(&self, r: &Range<usize>) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[r.clone()])
    }

    pub(crate) fn forward_pass(&self, seqs: &[&GateSequence]) -> Result<Pass> {
        let d = self.input_dim;
        for s in seqs {
            if s.features.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.features.ncols(),
                });
            }
        }
        let lens: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        let rows: usize = lens.iter().sum();
        let mut x = Array2::zeros((rows, d));
        let mut r = 0;
        for s in seqs {
            x.slice_mut(ndarray::s![r..r + s.len(), ..])
                .assign(&s.features);
            r += s.len();
        }
        let o = offsets(self.arch, d);
        let (m, k) = (MLP_UNITS, LSTM_UNITS);
        let empty = || Array2::zeros((0, 0));
        let (mut h1, mut h2) = (empty(), empty());
        let (mut gates, mut c, mut h) = (empty(), empty(), empty());
        let top: ArrayView2<f64>;
        if self.arch == GateArch::Lin {
            top = x.view();
        } else {
            h1 = x.dot(&self.view2(&o.w1, d, m)) + self.view1(&o.b1);
            h1.mapv_inplace(|v| v.max(0.0));
            h2 = h1.dot(&self.view2(&o.w2, m, m)) + self.view1(&o.b2);
            h2.mapv_inplace(|v| v.max(0.0));
            if self.arch == GateArch::Mlp {
                top = h2.view();
            } else {
                let zx = h2.dot(&self.view2(&o.wx, m, 4 * k)) + self.view1(&o.bl);
                let wh = self.view2(&o.wh, k, 4 * k);
                gates = Array2::zeros((rows, 4 * k));
                c = Array2::zeros((rows, k));
                h = Array2::zeros((rows, k));
                let mut start = 0;
                for &len in &lens {
                    for t in start..start + len {
                        let mut z = zx.row(t).to_owned();
                        if t > start {
                            z += &h.row(t - 1).dot(&wh);
                        }
                        for j in 0..k {
                            let i_g = sigmoid(z[j]);
                            let f_g = sigmoid(z[k + j]);
                            let g_g = z[2 * k + j].tanh();
                            let o_g = sigmoid(z[3 * k + j]);
                            let c_prev = if t > start { c[[t - 1, j]] } else { 0.0 };
                            let cj = f_g * c_prev + i_g * g_g;
                            c[[t, j]] = cj;
                            h[[t, j]] = o_g * cj.tanh();
                            gates[[t, j]] = i_g;
                            gates[[t, k + j]] = f_g;
                            gates[[t, 2 * k + j]] = g_g;
                            gates[[t, 3 * k + j]] = o_g;
                        }
                    }
                    start += len;
                }
                top = h.view();
            }
        }
        let wo = self.view1(&o.wo);
        let bo = self.params[o.bo.start];
        let raw_logits: Vec<f64> = top.dot(&wo).iter().map(|&z| z + bo).collect();
        let lambdas = raw_logits
            .iter()
            .map(|&z| sigmoid(z.clamp(-LOGIT_LIMIT, LOGIT_LIMIT)))
            .collect();
        Ok(Pass {
            lens,
            x,
            h1,
            h2,
            gates,
            c,
            h,
            raw_logits,
            lambdas,
        })
    }

    /// Gradient of Σ_t dlambda[t]·λ_t with respect to the parameters.
    pub(crate) fn backward(&self, pass: &Pass, dlambda: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        let o = offsets(self.arch, d);
        let (m, k) = (MLP_UNITS, LSTM_UNITS);
        let mut g = vec![0.0; self.params.len()];
        let dlogit: Array1<f64> = pass
            .raw_logits
            .iter()
            .zip(&pass.lambdas)
            .zip(dlambda)
            .map(|((&z, &l), &dl)| {
                if z.abs() < LOGIT_LIMIT {
                    dl * l * (1.0 - l)
                } else {
                    0.0
                }
            })
            .collect();
        let top = match self.arch {
            GateArch::Lin => pass.x.view(),
            GateArch::Mlp => pass.h2.view(),
            GateArch::Lstm => pass.h.view(),
        };
        let dwo = top.t().dot(&dlogit);
        put(&mut g[o.wo.clone()], dwo.iter());
        g[o.bo.start] = dlogit.sum();
        if self.arch == GateArch::Lin {
            return g;
        }
        let wo = self.view1(&o.wo);
        let rows = dlogit.len();
        let dtop = dlogit
            .view()
            .insert_axis(Axis(1))
            .dot(&wo.insert_axis(Axis(0)));
        let mut dh2 = if self.arch == GateArch::Mlp {
            dtop
        } else {
            let wh = self.view2(&o.wh, k, 4 * k);
            let wx = self.view2(&o.wx, m, 4 * k);
            let mut dz = Array2::zeros((rows, 4 * k));
            let mut start = 0;
            for &len in &pass.lens {
                let mut dh_next = Array1::<f64>::zeros(k);
                let mut dc_next = Array1::<f64>::zeros(k);
                for t in (start..start + len).rev() {
                    let dh = &dtop.row(t) + &dh_next;
                    for j in 0..k {
                        let (i_g, f_g, g_g, o_g) = (
                            pass.gates[[t, j]],
                            pass.gates[[t, k + j]],
                            pass.gates[[t, 2 * k + j]],
                            pass.gates[[t, 3 * k + j]],
                        );
                        let tc = pass.c[[t, j]].tanh();
                        let c_prev = if t > start { pass.c[[t - 1, j]] } else { 0.0 };
                        let dc = dc_next[j] + dh[j] * o_g * (1.0 - tc * tc);
                        dz[[t, j]] = dc * g_g * i_g * (1.0 - i_g);
                        dz[[t, k + j]] = dc * c_prev * f_g * (1.0 - f_g);
                        dz[[t, 2 * k + j]] = dc * i_g * (1.0 - g_g * g_g);
                        dz[[t, 3 * k + j]] = dh[j] * tc * o_g * (1.0 - o_g);
                        dc_next[j] = dc * f_g;
                    }
                    dh_next = if t > start {
                        wh.dot(&dz.row(t))
                    } else {
                        Array1::zeros(k)
                    };
                }
                start += len;
            }
            // h_{t-1} of each row, zero at sentence starts.
            let mut h_prev = Array2::zeros((rows, k));
            let mut start = 0;
            for &len in &pass.lens {
                for t in start + 1..start + len {
                    h_prev.row_mut(t).assign(&pass.h.row(t - 1));
                }
                start += len;
            }
            let dwx = pass.h2.t().dot(&dz);
            let dwh = h_prev.t().dot(&dz);
            put(&mut g[o.wx.clone()], dwx.iter());
            put(&mut g[o.wh.clone()], dwh.iter());
            put(&mut g[o.bl.clone()], dz.sum_axis(Axis(0)).iter());
            dz.dot(&wx.t())
        };
        dh2.zip_mut_with(&pass.h2, |d, &a| {
            if a <= 0.0 {
                *d = 0.0;
            }
        });
        let dw2 = pass.h1.t().dot(&dh2);
        put(&mut g[o.w2.clone()], dw2.iter());
        put(&mut g[o.b2.clone()], dh2.sum_axis(Axis(0)).iter());
        let mut dh1 = dh2.dot(&self.view2(&o.w2, m, m).t());
        dh1.zip_mut_with(&pass.h1, |d, &a| {
            if a <= 0.0 {
                *d = 0.0;
            }
        });
        let dw1 = pass.x.t().dot(&dh1);
        put(&mut g[o.w1.clone()], dw1.iter());
        put(&mut g[o.b1.clone()], dh1.sum_axis(Axis(0)).iter());
        g
    }

    /// λ_t for one sentence (steps × input_dim features).
    pub fn gate_forward(&self, features: ArrayView2<f64>) -> Result<Vec<f64>> {
        let seq = GateSequence {
            features: features.to_owned(),
            p_nn: vec![0.0; features.nrows()],
            p_ng: vec![0.0; features.nrows()],
        };
        Ok(self.forward_pass(&[&seq])?.lambdas)
    }

    /// λ sequences for every sentence of `data`.
    pub fn lambdas(&self, data: &GateData) -> Result<Vec<Vec<f64>>> {
        let refs: Vec<&GateSequence> = data.sequences.iter().collect();
        let pass = self.forward_pass(&refs)?;
        let mut out = Vec::with_capacity(refs.len());
        let mut at = 0;
        for len in pass.lens {
            out.push(pass.lambdas[at..at + len].to_vec());
            at += len;
        }
        Ok(out)
    }

    /// Mean mixture cross-entropy (nats) over every step of `seqs`.
    pub fn mean_loss(&self, seqs: &[&GateSequence]) -> Result<f64> {
        let pass = self.forward_pass(seqs)?;
        Ok(mean_mixture_loss(&pass.lambdas, seqs))
    }

    /// Mean loss over `seqs` and its gradient.
    pub fn loss_and_grad(&self, seqs: &[&GateSequence]) -> Result<(f64, Vec<f64>)> {
        let pass = self.forward_pass(seqs)?;
        let n = pass.lambdas.len().max(1) as f64;
        let (p_nn, p_ng) = flat_probs(seqs);
        let dlambda: Vec<f64> = pass
            .lambdas
            .iter()
            .zip(p_nn.iter().zip(&p_ng))
            .map(|(&l, (&a, &b))| mixture_loss_grad(l, a, b) / n)
            .collect();
        let loss = mean_mixture_loss(&pass.lambdas, seqs);
        Ok((loss, self.backward(&pass, &dlambda)))
    }

    pub fn to_container(&self, extra: serde_json::Value) -> Result<Container> {
        let mut tensors = Vec::new();
        let mut at = 0;
        for (name, shape) in param_shapes(self.arch, self.input_dim) {
            let n: usize = shape.iter().product();
            let data = self.params[at..at + n].iter().map(|&v| v as f32).collect();
            tensors.push(Tensor::new(name, shape, data)?);
            at += n;
        }
        let config = serde_json::json!({
            "arch": self.arch,
            "input_dim": self.input_dim,
            "extra": extra,
        });
        Ok(Container {
            kind: GATE_KIND.to_string(),
            config,
            tensors,
        })
    }

    /// Rebuilds a gate and returns the `extra` value stored with it.
    pub fn from_container(c: &Container) -> Result<(GateNet, serde_json::Value)> {
        if c.kind != GATE_KIND {
            return Err(Error::invalid(format!(
                "container holds `{}`, not a gate",
                c.kind
            )));
        }
        let arch: GateArch = serde_json::from_value(c.config["arch"].clone())?;
        let input_dim: usize = serde_json::from_value(c.config["input_dim"].clone())?;
        let mut params = Vec::with_capacity(count_params(arch, input_dim));
        for (name, shape) in param_shapes(arch, input_dim) {
            let t = c.tensor(name)?;
            if t.shape != shape {
                return Err(Error::invalid(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            params.extend(t.data.iter().map(|&v| f64::from(v)));
        }
        Ok((
            GateNet {
                arch,
                input_dim,
                params,
            },
            c.config["extra"].clone(),
        ))
    }

    /// Rounds parameters to the f32 precision they are stored with.
    pub fn round_to_storage(&mut self) {
        for p in &mut self.params {
            *p = f64::from(*p as f32);
        }
    }
}

/// Copies in logical (row-major) order whatever the source layout.
fn put<'a>(dst: &mut [f64], src: impl Iterator<Item = &'a f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *s;
    }
}

pub const GATE_KIND: &str = "lmmix-gate";

fn flat_probs(seqs: &[&GateSequence]) -> (Vec<f64>, Vec<f64>) {
    let p_nn = seqs.iter().flat_map(|s| s.p_nn.iter().copied()).collect();
    let p_ng = seqs.iter().flat_map(|s| s.p_ng.iter().copied()).collect();
    (p_nn, p_ng)
}

fn mean_mixture_loss(lambdas: &[f64], seqs: &[&GateSequence]) -> f64 {
    let (p_nn, p_ng) = flat_probs(seqs);
    let total: f64 = lambdas
        .iter()
        .zip(p_nn.iter().zip(&p_ng))
        .map(|(&l, (&a, &b))| mixture_loss(l, a, b))
        .sum();
    total / lambdas.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn parameter_counts() {
        assert_eq!(count_params(GateArch::Lin, 15), 16);
        // 15·32+32 + 32·32+32 + 32+1
        assert_eq!(count_params(GateArch::Mlp, 15), 1601);
        assert_eq!(count_params(GateArch::Lstm, 15), 2889);
        for arch in GateArch::ALL {
            let net = init_gate(arch, 15, 1, None).unwrap();
            assert_eq!(net.num_params(), count_params(arch, 15));
            assert!(net.num_params() < 5000);
        }
    }

    #[test]
    fn zero_lin_gives_half() {
        let net = GateNet {
            arch: GateArch::Lin,
            input_dim: 3,
            params: vec![0.0; 4],
        };
        let l = net
            .gate_forward(array![[1.0, -2.0, 5.0], [0.0, 0.0, 0.0]].view())
            .unwrap();
        assert_eq!(l, vec![0.5, 0.5]);
        assert!(net.gate_forward(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn warm_start_reproduces_constant() {
        for arch in GateArch::ALL {
            let net = init_gate(arch, 4, 3, Some(0.3)).unwrap();
            let x = Array2::from_shape_fn((5, 4), |(i, j)| (i * 4 + j) as f64 - 7.0);
            for l in net.gate_forward(x.view()).unwrap() {
                assert!((l - 0.3).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closed_form_lambda_gradient() {
        assert!((mixture_loss_grad(0.5, 0.2, 0.4) - 2.0 / 3.0).abs() <= f64::EPSILON);
        assert_eq!(mixture_loss_grad(0.3, 0.25, 0.25), 0.0);
    }

    #[test]
    fn lstm_state_resets_per_sentence() {
        let net = init_gate(GateArch::Lstm, 2, 5, None).unwrap();
        let x = array![[0.5, -1.0], [2.0, 0.3], [-0.7, 1.1]];
        let alone = net.gate_forward(x.view()).unwrap();
        let seq = |f: Array2<f64>| GateSequence {
            p_nn: vec![0.5; f.nrows()],
            p_ng: vec![0.5; f.nrows()],
            features: f,
        };
        let first = seq(array![[9.0, 9.0], [-3.0, 4.0]]);
        let data = GateData::new(2, vec![first, seq(x.clone())]).unwrap();
        let both = net.lambdas(&data).unwrap();
        assert_eq!(both[1], alone);
    }

    #[test]
    fn container_round_trip() {
        let mut net = init_gate(GateArch::Lstm, 3, 9, None).unwrap();
        net.round_to_storage();
        let c = net
            .to_container(serde_json::json!({"mode": "full"}))
            .unwrap();
        let back =
            Container::from_bytes(&c.to_bytes().unwrap(), std::path::Path::new("mem")).unwrap();
        let (again, extra) = GateNet::from_container(&back).unwrap();
        assert_eq!(again, net);
        assert_eq!(extra["mode"], "full");
    }

    proptest! {
        #[test]
        fn lambda_strictly_inside(
            arch in prop::sample::select(GateArch::ALL.to_vec()),
            seed in 0u64..50,
            scale in prop::sample::select(vec![1.0, 1e3, 1e8]),
            raw in prop::collection::vec(-1.0f64..1.0, 12),
        ) {
            let mut net = init_gate(arch, 3, seed, None).unwrap();
            for p in &mut net.params {
                *p *= scale;
            }
            let x = Array2::from_shape_vec((4, 3), raw.iter().map(|v| v * scale).collect()).unwrap();
            for l in net.gate_forward(x.view()).unwrap() {
                prop_assert!(l > 0.0 && l < 1.0);
            }
        }
    }
}
