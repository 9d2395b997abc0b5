//! Finite-difference verification of the analytic gradients.

use super::{ExtractorModel, TrainingExample};
use crate::error::Result;

/// Step for central differences in float64.
pub const FD_STEP: f64 = 1e-5;

/// Per-tensor relative error between the analytic batch gradient and central
/// finite differences over every scalar: `||fd - g|| / (sqrt(n) * max|.|)`.
pub fn finite_difference_check(
    model: &mut ExtractorModel,
    batch: &[TrainingExample],
) -> Result<Vec<(String, f64)>> {
    let (_, grad) = model.backward(batch)?;
    let tensors = model.params().tensors().to_vec();
    let mut out = Vec::with_capacity(tensors.len());
    for t in &tensors {
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for i in t.range() {
            let orig = model.params().as_slice()[i];
            model.params_mut().as_mut_slice()[i] = orig + FD_STEP;
            let up = model.backward(batch)?.0;
            model.params_mut().as_mut_slice()[i] = orig - FD_STEP;
            let dn = model.backward(batch)?.0;
            model.params_mut().as_mut_slice()[i] = orig;
            let fd = (up - dn) / (2.0 * FD_STEP);
            num += (fd - grad[i]).powi(2);
            den = den.max(fd.abs()).max(grad[i].abs());
        }
        out.push((
            t.name.clone(),
            num.sqrt() / (den * (t.len() as f64).sqrt()).max(1e-12),
        ));
    }
    Ok(out)
}
