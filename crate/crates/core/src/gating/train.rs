//! Adam training of a gate on frozen expert probabilities, with step-halving
//! learning rate and early stopping on a held-out split.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{GateData, GateSequence};
use super::network::GateNet;
use crate::rng::derived_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateTrainConfig {
    pub lr: f64,
    /// The learning rate halves every this many steps.
    pub halve_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Sentences per minibatch.
    pub batch_size: usize,
    pub max_steps: usize,
    /// Steps between held-out evaluations.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for GateTrainConfig {
    fn default() -> Self {
        GateTrainConfig {
            lr: 6e-3,
            halve_every: 5000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            max_steps: 20_000,
            eval_every: 250,
            patience: 10,
            seed: 1,
        }
    }
}

impl GateTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: key.to_string(),
                message: message.to_string(),
            })
        };
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("gate_lr", "must be positive");
        }
        if self.halve_every == 0 {
            return bad("gate_halve_every", "must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("gate_beta", "Adam betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("gate_eps", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("gate_batch_size", "must be positive");
        }
        if self.eval_every == 0 {
            return bad("gate_eval_every", "must be positive");
        }
        Ok(())
    }

    /// lr · 2^(−⌊step / halve_every⌋)
    pub fn lr_at(&self, step: usize) -> f64 {
        self.lr * 0.5f64.powi((step / self.halve_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateEval {
    pub step: usize,
    /// Mean minibatch loss since the previous evaluation (None at step 0).
    pub train_loss: Option<f64>,
    pub stop_loss: f64,
}

#[derive(Debug, Clone)]
pub struct GateTrainOutcome {
    /// Parameters at the best held-out evaluation.
    pub net: GateNet,
    pub best_step: usize,
    pub best_stop_loss: f64,
    pub steps_run: usize,
    /// Learning rate used at each update, indexed by step.
    pub lr_trace: Vec<f64>,
    pub evals: Vec<GateEval>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &GateTrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.eps);
        }
    }
}

/// Trains `net` on `train` with the experts frozen (their probabilities are
/// read, never written). Features are expected normalized already.
pub fn train_gate(
    mut net: GateNet,
    train: &GateData,
    stop: &GateData,
    cfg: &GateTrainConfig,
) -> Result<GateTrainOutcome> {
    cfg.validate()?;
    for data in [train, stop] {
        if data.dim != net.input_dim {
            return Err(Error::DimensionMismatch {
                expected: net.input_dim,
                got: data.dim,
            });
        }
        data.check_probabilities()?;
    }
    if train.num_steps() == 0 || stop.num_steps() == 0 {
        return Err(Error::invalid(
            "gate training needs nonempty train and stop splits",
        ));
    }
    let train_seqs: Vec<&GateSequence> = train.sequences.iter().filter(|s| !s.is_empty()).collect();
    let stop_seqs: Vec<&GateSequence> = stop.sequences.iter().collect();

    let mut rng = derived_rng(cfg.seed, "gate-batches");
    let mut order: Vec<usize> = (0..train_seqs.len()).collect();
    let mut cursor = order.len();
    let mut adam = Adam::new(net.num_params());
    let mut best = net.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_step = 0;
    let mut bad_evals = 0;
    let mut lr_trace = Vec::new();
    let mut evals = Vec::new();
    let (mut acc, mut acc_n) = (0.0, 0usize);
    let mut step = 0;
    loop {
        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let stop_loss = net.mean_loss(&stop_seqs)?;
            if !stop_loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "gate held-out loss {stop_loss} at step {step}"
                )));
            }
            evals.push(GateEval {
                step,
                train_loss: (acc_n > 0).then(|| acc / acc_n as f64),
                stop_loss,
            });
            (acc, acc_n) = (0.0, 0);
            log::debug!("gate step {step}: held-out loss {stop_loss:.6}");
            if stop_loss < best_loss {
                best_loss = stop_loss;
                best = net.clone();
                best_step = step;
                bad_evals = 0;
            } else {
                bad_evals += 1;
                if bad_evals >= cfg.patience {
                    break;
                }
            }
        }
        if step == cfg.max_steps {
            break;
        }
        if cursor + cfg.batch_size > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch: Vec<&GateSequence> = order[cursor..end].iter().map(|&i| train_seqs[i]).collect();
        cursor = end;
        let (loss, grad) = net.loss_and_grad(&batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!(
                "gate training loss {loss} at step {step}"
            )));
        }
        acc += loss;
        acc_n += 1;
        let lr = cfg.lr_at(step);
        lr_trace.push(lr);
        adam.step(&mut net.params, &grad, lr, cfg);
        step += 1;
    }
    Ok(GateTrainOutcome {
        net: best,
        best_step,
        best_stop_loss: best_loss,
        steps_run: step,
        lr_trace,
        evals,
    })
}
