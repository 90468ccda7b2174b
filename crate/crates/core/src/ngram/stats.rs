use crate::{Error, Result};

/// Mode probability and Shannon entropy (nats) of a distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistStats {
    pub max: f64,
    pub entropy: f64,
}

pub fn distribution_stats<T: Copy + Into<f64>>(dist: &[T]) -> Result<DistStats> {
    let mut max = 0.0f64;
    let mut entropy = 0.0f64;
    for &p in dist {
        let p: f64 = p.into();
        if p < 0.0 || p.is_nan() {
            return Err(Error::invalid(format!("negative probability {p}")));
        }
        if p > max {
            max = p;
        }
        if p > 0.0 {
            entropy -= p * p.ln();
        }
    }
    Ok(DistStats { max, entropy })
}
