//! Central finite-difference gradient verification.
//!
//! The check only evaluates the forward function, so it is independent of
//! the backward closures it validates.

use super::Tensor;
use crate::error::Result;

/// Outcome of comparing analytic and numeric gradients for one input.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub input: usize,
    /// ||analytic - numeric|| / max(||analytic||, ||numeric||)
    pub relative_error: f64,
    pub max_abs_error: f64,
}

/// Norm-wise relative error between two gradient vectors. Two zero
/// vectors compare as exactly equal.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares the gradient of the scalar `f(inputs)` against central
/// differences with step `eps`, for every input tensor.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<Vec<GradCheckReport>>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|t| Tensor::param(t.to_vec(), t.shape()))
        .collect::<Result<_>>()?;
    f(&leaves)?.backward()?;

    let mut reports = Vec::with_capacity(inputs.len());
    for (idx, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let mut numeric = vec![0.0; leaf.numel()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let eval = |delta: f64| -> Result<f64> {
                let mut data = leaf.to_vec();
                data[k] += delta;
                let mut probe: Vec<Tensor> = leaves.iter().map(Tensor::detach).collect();
                probe[idx] = Tensor::new(data, leaf.shape())?;
                Ok(f(&probe)?.item())
            };
            *slot = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
        }
        let max_abs_error = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        reports.push(GradCheckReport {
            input: idx,
            relative_error: relative_error(&analytic, &numeric),
            max_abs_error,
        });
    }
    Ok(reports)
}

/// Largest relative error across all inputs.
pub fn worst_relative_error(reports: &[GradCheckReport]) -> f64 {
    reports.iter().map(|r| r.relative_error).fold(0.0, f64::max)
}
