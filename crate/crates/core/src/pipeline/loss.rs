//! Training loss: per-variable MSE on volume and surface points plus the
//! area-weighted surface term, summed into one objective.

use crate::error::{Error, Result};

/// Per-variable loss terms and their exact sum.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub volume_mse: Vec<(String, f64)>,
    pub surface_mse: Vec<(String, f64)>,
    pub surface_area_weighted_mse: Vec<(String, f64)>,
    pub total: f64,
}

fn check_finite(context: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput { context: context.into() });
    }
    Ok(())
}

fn mse(pred: &[f64], truth: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64
}

fn area_weighted_mse(pred: &[f64], truth: &[f64], areas: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter()
        .zip(truth)
        .zip(areas)
        .map(|((a, b), w)| {
            let d = w * a - w * b;
            d * d
        })
        .sum::<f64>()
        / pred.len() as f64
}

/// Compute every loss term. Predictions and truths are per-variable columns
/// aligned with `surface_vars` / `volume_vars`; `areas` holds the per-row
/// facet or sample areas of the surface points.
pub fn compute_loss(
    surface_vars: &[String],
    surface_pred: &[Vec<f64>],
    surface_true: &[Vec<f64>],
    areas: &[f64],
    volume_vars: &[String],
    volume_pred: &[Vec<f64>],
    volume_true: &[Vec<f64>],
) -> Result<LossReport> {
    for (v, col) in surface_vars.iter().zip(surface_pred) {
        check_finite(&format!("surface prediction '{v}'"), col)?;
    }
    for (v, col) in surface_vars.iter().zip(surface_true) {
        check_finite(&format!("surface truth '{v}'"), col)?;
    }
    for (v, col) in volume_vars.iter().zip(volume_pred) {
        check_finite(&format!("volume prediction '{v}'"), col)?;
    }
    for (v, col) in volume_vars.iter().zip(volume_true) {
        check_finite(&format!("volume truth '{v}'"), col)?;
    }
    check_finite("surface areas", areas)?;

    let mut report = LossReport {
        volume_mse: Vec::new(),
        surface_mse: Vec::new(),
        surface_area_weighted_mse: Vec::new(),
        total: 0.0,
    };
    for (v, (pred, truth)) in volume_vars.iter().zip(volume_pred.iter().zip(volume_true)) {
        report.volume_mse.push((v.clone(), mse(pred, truth)));
    }
    for (v, (pred, truth)) in surface_vars.iter().zip(surface_pred.iter().zip(surface_true)) {
        report.surface_mse.push((v.clone(), mse(pred, truth)));
        report
            .surface_area_weighted_mse
            .push((v.clone(), area_weighted_mse(pred, truth, areas)));
    }
    // Total is the exact sum of the reported terms, in report order.
    report.total = report
        .volume_mse
        .iter()
        .chain(&report.surface_mse)
        .chain(&report.surface_area_weighted_mse)
        .map(|(_, v)| v)
        .sum();
    Ok(report)
}

/// Gradients of the total loss with respect to the predictions, aligned with
/// the inputs of [`compute_loss`].
pub fn loss_gradients(
    surface_pred: &[Vec<f64>],
    surface_true: &[Vec<f64>],
    areas: &[f64],
    volume_pred: &[Vec<f64>],
    volume_true: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let surface_grads = surface_pred
        .iter()
        .zip(surface_true)
        .map(|(pred, truth)| {
            let n = pred.len().max(1) as f64;
            pred.iter()
                .zip(truth)
                .zip(areas)
                .map(|((a, b), w)| 2.0 * (a - b) / n + 2.0 * w * w * (a - b) / n)
                .collect()
        })
        .collect();
    let volume_grads = volume_pred
        .iter()
        .zip(volume_true)
        .map(|(pred, truth)| {
            let n = pred.len().max(1) as f64;
            pred.iter().zip(truth).map(|(a, b)| 2.0 * (a - b) / n).collect()
        })
        .collect();
    (surface_grads, volume_grads)
}
