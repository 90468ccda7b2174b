use super::data::GateSequence;
use super::network::GateNet;
use crate::neural::{relative_error, GradCheck, REL_ERROR_FLOOR};
use crate::Result;

/// Central-difference check of the mean mixture loss over every gate
/// parameter.
pub fn gate_gradient_check(
    net: &GateNet,
    batch: &[&GateSequence],
    epsilon: f64,
) -> Result<GradCheck> {
    let (_, analytic) = net.loss_and_grad(batch)?;
    let mut probe = net.clone();
    let mut max_rel_error = 0f64;
    let mut significant = 0;
    for i in 0..net.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + epsilon;
        let up = probe.mean_loss(batch)?;
        probe.params[i] = orig - epsilon;
        let down = probe.mean_loss(batch)?;
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        max_rel_error = max_rel_error.max(relative_error(analytic[i], numeric));
        if analytic[i].abs().max(numeric.abs()) > REL_ERROR_FLOOR {
            significant += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error,
        checked: net.params.len(),
        significant,
    })
}
