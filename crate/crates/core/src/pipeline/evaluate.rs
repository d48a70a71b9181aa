//! Engineering-metric evaluation over a test set, on mesh face centers or on
//! freshly sampled uniform point clouds.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{integrate_drag, relative_l2, MetricsReport, SampleMetrics, VarMetric};
use crate::datagen::{AnalyticFlow, SampleBundle};
use crate::error::{Error, Result};
use crate::model::{DominoModel, FieldTable, GeometryInputs, QueryMode};
use crate::seeding::{derive_seed, stream};
use crate::spatial::{sample_surface_uniform_cloud, Axis};
use crate::vec3::Vec3;

/// Where evaluation points come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointSource {
    /// Mesh face centers and the stored volume table.
    Mesh,
    /// `count` area-weighted surface samples (equal per-point area, normals
    /// from the underlying face) plus fresh uniform volume points.
    UniformCloud { count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub batch_size: usize,
    /// Geometry-cloud vertices for the encoder (0 = all STL vertices).
    pub geometry_points: usize,
    /// Fresh volume points per sample in cloud mode.
    pub cloud_volume_points: usize,
    pub flow_axis: Axis,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            batch_size: 4096,
            geometry_points: 0,
            cloud_volume_points: 4096,
            flow_axis: Axis::X,
            seed: 0,
        }
    }
}

/// Queries plus ground truth for one sample and one table.
pub struct SurfaceQueries {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub areas: Vec<f64>,
    /// Truth columns in surface-variable order.
    pub truth: Vec<Vec<f64>>,
}

pub struct VolumeQueries {
    pub positions: Vec<Vec3>,
    /// Truth columns in volume-variable order.
    pub truth: Vec<Vec<f64>>,
}

/// Assemble the evaluation queries of one sample for the chosen source.
pub fn build_queries(
    bundle: &SampleBundle,
    geo: &GeometryInputs,
    source: PointSource,
    cfg: &EvalConfig,
    sample_idx: usize,
) -> Result<(SurfaceQueries, VolumeQueries)> {
    match source {
        PointSource::Mesh => {
            let s = &bundle.surface;
            let surface = SurfaceQueries {
                positions: s.position.clone(),
                normals: s.normal.clone(),
                areas: s.area.clone(),
                truth: vec![
                    s.pressure.clone(),
                    s.shear.iter().map(|v| v.x).collect(),
                    s.shear.iter().map(|v| v.y).collect(),
                    s.shear.iter().map(|v| v.z).collect(),
                ],
            };
            let v = &bundle.volume;
            let volume = VolumeQueries {
                positions: v.position.clone(),
                truth: vec![
                    v.pressure.clone(),
                    v.velocity.iter().map(|u| u.x).collect(),
                    v.velocity.iter().map(|u| u.y).collect(),
                    v.velocity.iter().map(|u| u.z).collect(),
                    v.turb_visc.clone(),
                ],
            };
            Ok((surface, volume))
        }
        PointSource::UniformCloud { count } => {
            let flow = AnalyticFlow::new(&bundle.spec);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed,
                &[stream::EVAL, sample_idx as u64, 0],
            ));
            let samples = sample_surface_uniform_cloud(&bundle.geometry, count, &mut rng)?;
            let mut surface = SurfaceQueries {
                positions: Vec::with_capacity(count),
                normals: Vec::with_capacity(count),
                areas: Vec::with_capacity(count),
                truth: vec![Vec::with_capacity(count); 4],
            };
            for s in samples {
                let (p, shear) = flow.surface_fields(s.position);
                surface.positions.push(s.position);
                surface.normals.push(s.normal);
                surface.areas.push(s.area_weight);
                surface.truth[0].push(p);
                surface.truth[1].push(shear.x);
                surface.truth[2].push(shear.y);
                surface.truth[3].push(shear.z);
            }

            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed,
                &[stream::EVAL, sample_idx as u64, 1],
            ));
            let extent = geo.domain_box.extent();
            let mut volume = VolumeQueries {
                positions: Vec::with_capacity(cfg.cloud_volume_points),
                truth: vec![Vec::with_capacity(cfg.cloud_volume_points); 5],
            };
            let budget = 100 * cfg.cloud_volume_points;
            let mut candidates = 0;
            while volume.positions.len() < cfg.cloud_volume_points {
                if candidates >= budget {
                    return Err(Error::RejectionBoundExceeded {
                        requested: cfg.cloud_volume_points,
                        accepted: volume.positions.len(),
                        candidates,
                    });
                }
                candidates += 1;
                let p = geo.domain_box.min
                    + Vec3::new(
                        rand::Rng::gen::<f64>(&mut rng) * extent.x,
                        rand::Rng::gen::<f64>(&mut rng) * extent.y,
                        rand::Rng::gen::<f64>(&mut rng) * extent.z,
                    );
                if flow.sphere_frame(p).norm() < 1.0 {
                    continue;
                }
                let (pr, u, nu) = flow.volume_fields(p)?;
                volume.positions.push(p);
                volume.truth[0].push(pr);
                volume.truth[1].push(u.x);
                volume.truth[2].push(u.y);
                volume.truth[3].push(u.z);
                volume.truth[4].push(nu);
            }
            Ok((surface, volume))
        }
    }
}

/// Evaluate with an arbitrary field predictor (the production model or a
/// test oracle): called once per sample and mode.
pub fn evaluate_with<F>(
    samples: &[(&SampleBundle, &GeometryInputs)],
    source: PointSource,
    cfg: &EvalConfig,
    surface_vars: &[String],
    volume_vars: &[String],
    mut predict: F,
) -> Result<MetricsReport>
where
    F: FnMut(usize, &SampleBundle, &GeometryInputs, &[Vec3], Option<&[Vec3]>, QueryMode) -> Result<FieldTable>,
{
    let mut out = Vec::with_capacity(samples.len());
    for (si, (bundle, geo)) in samples.iter().enumerate() {
        let (surface_q, volume_q) = build_queries(bundle, geo, source, cfg, si)?;
        let surf_table = predict(
            si,
            bundle,
            geo,
            &surface_q.positions,
            Some(&surface_q.normals),
            QueryMode::Surface,
        )?;
        let vol_table =
            predict(si, bundle, geo, &volume_q.positions, None, QueryMode::Volume)?;

        let mut surface_metrics = Vec::with_capacity(surface_vars.len());
        for (vi, var) in surface_vars.iter().enumerate() {
            let pred = surf_table.column(var)?;
            let rel = nan_on_zero_norm(relative_l2(&surface_q.truth[vi], &pred, None))?;
            let aw = nan_on_zero_norm(relative_l2(
                &surface_q.truth[vi],
                &pred,
                Some(&surface_q.areas),
            ))?;
            surface_metrics.push(VarMetric {
                variable: var.clone(),
                rel_l2: rel,
                area_weighted_rel_l2: Some(aw),
            });
        }
        let mut volume_metrics = Vec::with_capacity(volume_vars.len());
        for (vi, var) in volume_vars.iter().enumerate() {
            let pred = vol_table.column(var)?;
            let rel = nan_on_zero_norm(relative_l2(&volume_q.truth[vi], &pred, None))?;
            volume_metrics.push(VarMetric {
                variable: var.clone(),
                rel_l2: rel,
                area_weighted_rel_l2: None,
            });
        }

        let shear_var = flow_shear_variable(cfg.flow_axis);
        let pred_drag = integrate_drag(
            &surface_q.normals,
            &surface_q.areas,
            &surf_table.column("p")?,
            &surf_table.column(shear_var)?,
            cfg.flow_axis,
        );
        out.push(SampleMetrics {
            id: bundle.spec.id.clone(),
            split: bundle.split,
            surface: surface_metrics,
            volume: volume_metrics,
            true_drag: bundle.drag_label,
            pred_drag,
        });
    }
    Ok(MetricsReport::from_samples(out))
}

/// A variable with an all-zero truth has no defined relative error; record
/// NaN for that sample instead of failing the whole evaluation.
fn nan_on_zero_norm(result: Result<f64>) -> Result<f64> {
    match result {
        Ok(v) => Ok(v),
        Err(Error::ZeroNormTruth) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

pub fn flow_shear_variable(axis: Axis) -> &'static str {
    match axis {
        Axis::X => "tau_x",
        Axis::Y => "tau_y",
        Axis::Z => "tau_z",
    }
}

/// Evaluate the trained model: the geometry encoding is computed once per
/// sample and shared between the surface and volume passes.
pub fn evaluate(
    model: &DominoModel,
    samples: &[(&SampleBundle, &GeometryInputs)],
    source: PointSource,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let surface_vars: Vec<String> = model.surface_heads.iter().map(|h| h.name.clone()).collect();
    let volume_vars: Vec<String> = model.volume_heads.iter().map(|h| h.name.clone()).collect();
    let mut encodings: HashMap<usize, crate::encoder::GlobalEncoding> = HashMap::new();
    evaluate_with(
        samples,
        source,
        cfg,
        &surface_vars,
        &volume_vars,
        |si, bundle, geo, points, normals, mode| {
            if !encodings.contains_key(&si) {
                let cloud = eval_cloud(bundle, geo, cfg, si);
                let (enc, _) = model.encode_geometry(geo, &cloud)?;
                encodings.insert(si, enc);
            }
            let enc = &encodings[&si];
            model.predict_fields(
                geo,
                enc,
                points,
                normals,
                mode,
                cfg.batch_size,
                derive_seed(cfg.seed, &[stream::EVAL, si as u64, 2]),
            )
        },
    )
}

/// Deterministic evaluation geometry cloud: all STL vertices, or a fixed
/// uniform subsample when `geometry_points` caps it.
pub fn eval_cloud(
    bundle: &SampleBundle,
    _geo: &GeometryInputs,
    cfg: &EvalConfig,
    sample_idx: usize,
) -> Vec<Vec3> {
    let verts = &bundle.geometry.vertices;
    if cfg.geometry_points == 0 || cfg.geometry_points >= verts.len() {
        return verts.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed,
        &[stream::EVAL, sample_idx as u64, 3],
    ));
    (0..cfg.geometry_points)
        .map(|_| verts[rand::Rng::gen_range(&mut rng, 0..verts.len())])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_dataset, DatasetSpec};
    use crate::encoder::EncoderConfig;
    use crate::model::{prepare_geometry, SURFACE_VARIABLES, VOLUME_VARIABLES};
    use crate::predictor::PredictorConfig;
    use crate::spatial::TrimFactors;

    fn vars(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn setup() -> (Vec<SampleBundle>, Vec<GeometryInputs>) {
        let dataset = DatasetSpec {
            n_train: 2,
            n_test_in: 1,
            n_test_out: 1,
            subdivision: 2,
            volume_points: 128,
            ..DatasetSpec::default()
        };
        let bundles = make_dataset(&dataset, 21).unwrap();
        let encoder = EncoderConfig { resolution: 8, ..EncoderConfig::default() };
        let predictor = PredictorConfig::default();
        let geos = bundles
            .iter()
            .map(|b| {
                prepare_geometry(
                    &encoder,
                    &predictor,
                    b.geometry.clone(),
                    Axis::X,
                    TrimFactors::default(),
                )
                .unwrap()
            })
            .collect();
        (bundles, geos)
    }

    /// Copies the truth into the prediction table.
    fn identity_oracle(
        bundle: &SampleBundle,
        points: &[Vec3],
        mode: QueryMode,
    ) -> FieldTable {
        let flow = AnalyticFlow::new(&bundle.spec);
        match mode {
            QueryMode::Surface => {
                let variables = vars(&SURFACE_VARIABLES);
                let mut values = Vec::with_capacity(points.len() * 4);
                for &p in points {
                    let (pr, shear) = flow.surface_fields(p);
                    values.extend_from_slice(&[pr, shear.x, shear.y, shear.z]);
                }
                FieldTable { variables, values }
            }
            QueryMode::Volume => {
                let variables = vars(&VOLUME_VARIABLES);
                let mut values = Vec::with_capacity(points.len() * 5);
                for &p in points {
                    let (pr, u, nu) = flow.volume_fields(p).unwrap();
                    values.extend_from_slice(&[pr, u.x, u.y, u.z, nu]);
                }
                FieldTable { variables, values }
            }
        }
    }

    #[test]
    fn identity_oracle_scores_perfectly_on_mesh_points() {
        let (bundles, geos) = setup();
        let samples: Vec<(&SampleBundle, &GeometryInputs)> =
            bundles.iter().zip(geos.iter()).collect();
        let cfg = EvalConfig::default();
        let report = evaluate_with(
            &samples,
            PointSource::Mesh,
            &cfg,
            &vars(&SURFACE_VARIABLES),
            &vars(&VOLUME_VARIABLES),
            |_, bundle, _, points, _, mode| Ok(identity_oracle(bundle, points, mode)),
        )
        .unwrap();
        for s in &report.samples {
            for m in s.surface.iter().chain(&s.volume) {
                assert!(m.rel_l2 < 1e-12, "{} rel l2 {}", m.variable, m.rel_l2);
            }
            assert!((s.pred_drag - s.true_drag).abs() < 1e-12);
        }
        assert!((report.r2_drag - 1.0).abs() < 1e-9);
    }

    #[test]
    fn both_point_sources_emit_the_same_schema() {
        let (bundles, geos) = setup();
        let samples: Vec<(&SampleBundle, &GeometryInputs)> =
            bundles.iter().zip(geos.iter()).take(1).collect();
        let cfg = EvalConfig { cloud_volume_points: 64, ..EvalConfig::default() };
        let mesh = evaluate_with(
            &samples,
            PointSource::Mesh,
            &cfg,
            &vars(&SURFACE_VARIABLES),
            &vars(&VOLUME_VARIABLES),
            |_, bundle, _, points, _, mode| Ok(identity_oracle(bundle, points, mode)),
        )
        .unwrap();
        let cloud = evaluate_with(
            &samples,
            PointSource::UniformCloud { count: 2000 },
            &cfg,
            &vars(&SURFACE_VARIABLES),
            &vars(&VOLUME_VARIABLES),
            |_, bundle, _, points, _, mode| Ok(identity_oracle(bundle, points, mode)),
        )
        .unwrap();
        assert_eq!(mesh.samples[0].surface.len(), cloud.samples[0].surface.len());
        assert_eq!(mesh.samples[0].volume.len(), cloud.samples[0].volume.len());
        // Cloud drag from the truth matches the label up to sampling noise.
        let rel = (cloud.samples[0].pred_drag - cloud.samples[0].true_drag).abs()
            / cloud.samples[0].true_drag.abs();
        assert!(rel < 0.1, "cloud drag rel err {rel}");
    }

    #[test]
    fn cloud_points_have_equal_areas_summing_to_total() {
        let (bundles, geos) = setup();
        let cfg = EvalConfig { cloud_volume_points: 16, ..EvalConfig::default() };
        let (surface_q, _) =
            build_queries(&bundles[0], &geos[0], PointSource::UniformCloud { count: 500 }, &cfg, 0)
                .unwrap();
        assert_eq!(surface_q.positions.len(), 500);
        let total: f64 = surface_q.areas.iter().sum();
        let expect = bundles[0].geometry.total_area();
        assert!((total - expect).abs() < 1e-9 * expect);
        assert!(surface_q.areas.windows(2).all(|w| w[0] == w[1]));
    }
}
