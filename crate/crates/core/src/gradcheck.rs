//! Central finite-difference utilities for validating analytic gradients.
//!
//! These probe scalar losses through forward evaluation only, so they stay
//! independent of the backward implementations they check.

use crate::error::Result;
use crate::model::{ModelParams, ParamGrad};

/// Central finite differences of `loss` over every parameter entry.
pub fn finite_diff_grad<F>(model: &ModelParams, h: f64, mut loss: F) -> Result<Vec<f64>>
where
    F: FnMut(&ModelParams) -> Result<f64>,
{
    let n = model.param_count();
    let mut probe = model.clone();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let orig = probe.get_flat(i);
        probe.set_flat(i, orig + h);
        let plus = loss(&probe)?;
        probe.set_flat(i, orig - h);
        let minus = loss(&probe)?;
        probe.set_flat(i, orig);
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Relative L2 error between an analytic gradient and a finite-difference
/// reference: `|a - fd| / max(|fd|, floor)`.
pub fn relative_l2_error(analytic: &ParamGrad, fd: &[f64], floor: f64) -> f64 {
    let flat = analytic.flatten();
    assert_eq!(flat.len(), fd.len(), "gradient length mismatch");
    let diff: f64 = flat
        .iter()
        .zip(fd)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm.max(floor)
}
