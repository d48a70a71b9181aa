//! Engineering evaluation metrics: relative L2 errors, drag integration,
//! drag regression, and design trends.

use serde::Serialize;

use crate::datagen::SplitTag;
use crate::error::{Error, Result};
use crate::spatial::Axis;
use crate::vec3::Vec3;

/// Relative L2 error `||y_T - y_P|| / ||y_T||`. With weights, both fields are
/// multiplied element-wise by the weights (facet areas) before both norms.
pub fn relative_l2(truth: &[f64], pred: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    debug_assert_eq!(truth.len(), pred.len());
    let mut num = 0.0;
    let mut den = 0.0;
    match weights {
        None => {
            for (t, p) in truth.iter().zip(pred) {
                num += (t - p) * (t - p);
                den += t * t;
            }
        }
        Some(w) => {
            debug_assert_eq!(truth.len(), w.len());
            for ((t, p), w) in truth.iter().zip(pred).zip(w) {
                let d = w * t - w * p;
                num += d * d;
                den += (w * t) * (w * t);
            }
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroNormTruth);
    }
    Ok((num / den).sqrt())
}

/// The difference-of-squared-sums variant `sqrt(sum(y_T^2 - y_P^2)) /
/// sqrt(sum(y_T^2))`, kept for comparison; `None` when the radicand is
/// negative (the expression is not a norm).
pub fn relative_l2_printed_form(
    truth: &[f64],
    pred: &[f64],
    weights: Option<&[f64]>,
) -> Result<Option<f64>> {
    let mut num = 0.0;
    let mut den = 0.0;
    let w_of = |i: usize| weights.map_or(1.0, |w| w[i]);
    for i in 0..truth.len() {
        let (t, p) = (w_of(i) * truth[i], w_of(i) * pred[i]);
        num += t * t - p * p;
        den += t * t;
    }
    if den == 0.0 {
        return Err(Error::ZeroNormTruth);
    }
    Ok((num >= 0.0).then(|| (num / den).sqrt()))
}

/// Drag force `F = sum_i (p_i * n_axis_i + tau_axis_i) * a_i` over surface
/// samples with outward unit normals.
pub fn integrate_drag(
    normals: &[Vec3],
    areas: &[f64],
    pressure: &[f64],
    shear_axis: &[f64],
    axis: Axis,
) -> f64 {
    let ai = axis.index();
    let mut force = 0.0;
    for i in 0..normals.len() {
        force += (pressure[i] * normals[i][ai] + shear_axis[i]) * areas[i];
    }
    force
}

/// Coefficient of determination of predictions against truths.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> f64 {
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum();
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman_rho(a: &[f64], b: &[f64]) -> f64 {
    let ra = ranks(a);
    let rb = ranks(b);
    pearson(&ra, &rb)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Per-variable error of one sample.
#[derive(Debug, Clone, Serialize)]
pub struct VarMetric {
    pub variable: String,
    pub rel_l2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub area_weighted_rel_l2: Option<f64>,
}

/// All metrics of one evaluated sample.
#[derive(Debug, Clone, Serialize)]
pub struct SampleMetrics {
    pub id: String,
    pub split: SplitTag,
    pub surface: Vec<VarMetric>,
    pub volume: Vec<VarMetric>,
    pub true_drag: f64,
    pub pred_drag: f64,
}

/// One design-trend row (samples sorted ascending by true drag).
#[derive(Debug, Clone, Serialize)]
pub struct TrendRow {
    pub rank: usize,
    pub id: String,
    pub split: SplitTag,
    pub true_drag: f64,
    pub pred_drag: f64,
}

/// Mean relative L2 per variable over one split.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub split: String,
    pub table: String,
    pub variable: String,
    pub mean_rel_l2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_area_weighted_rel_l2: Option<f64>,
}

/// Full evaluation output over a test set.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub samples: Vec<SampleMetrics>,
    pub r2_drag: f64,
    pub spearman_drag: f64,
    pub design_trend: Vec<TrendRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl MetricsReport {
    /// Assemble trend table, regression statistics, and per-split aggregates
    /// from the per-sample metrics.
    pub fn from_samples(samples: Vec<SampleMetrics>) -> Self {
        let truths: Vec<f64> = samples.iter().map(|s| s.true_drag).collect();
        let preds: Vec<f64> = samples.iter().map(|s| s.pred_drag).collect();
        let r2_drag = if samples.len() >= 2 { r_squared(&truths, &preds) } else { f64::NAN };
        let spearman_drag =
            if samples.len() >= 2 { spearman_rho(&truths, &preds) } else { f64::NAN };

        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&i, &j| samples[i].true_drag.total_cmp(&samples[j].true_drag));
        let design_trend = order
            .iter()
            .enumerate()
            .map(|(rank, &i)| TrendRow {
                rank: rank + 1,
                id: samples[i].id.clone(),
                split: samples[i].split,
                true_drag: samples[i].true_drag,
                pred_drag: samples[i].pred_drag,
            })
            .collect();

        let mut aggregates = Vec::new();
        for split in [None, Some(SplitTag::TestIn), Some(SplitTag::TestOut), Some(SplitTag::Train)]
        {
            let subset: Vec<&SampleMetrics> = samples
                .iter()
                .filter(|s| split.map_or(true, |tag| s.split == tag))
                .collect();
            if subset.is_empty() {
                continue;
            }
            let split_name = split.map_or("all".to_string(), |t| t.as_str().to_string());
            for (table, pick) in [
                ("surface", true),
                ("volume", false),
            ] {
                let var_count =
                    if pick { subset[0].surface.len() } else { subset[0].volume.len() };
                for vi in 0..var_count {
                    let vars: Vec<&VarMetric> = subset
                        .iter()
                        .map(|s| if pick { &s.surface[vi] } else { &s.volume[vi] })
                        .collect();
                    let mean = vars.iter().map(|v| v.rel_l2).sum::<f64>() / vars.len() as f64;
                    let aw = if vars.iter().all(|v| v.area_weighted_rel_l2.is_some()) {
                        Some(
                            vars.iter().map(|v| v.area_weighted_rel_l2.unwrap()).sum::<f64>()
                                / vars.len() as f64,
                        )
                    } else {
                        None
                    };
                    aggregates.push(AggregateRow {
                        split: split_name.clone(),
                        table: table.into(),
                        variable: vars[0].variable.clone(),
                        mean_rel_l2: mean,
                        mean_area_weighted_rel_l2: aw,
                    });
                }
            }
        }
        MetricsReport { samples, r2_drag, spearman_drag, design_trend, aggregates }
    }
}
