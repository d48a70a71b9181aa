//! Training loop: per-epoch resampling, per-sample Adam steps, plateau
//! scheduling on a fixed validation set, and checkpoint hooks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{compute_loss, loss_gradients, LossReport};
use crate::datagen::SampleBundle;
use crate::diffnet::{PlateauScheduler, ADAM_BETAS, ADAM_EPS};
use crate::error::{Error, Result};
use crate::model::{BranchForward, DominoModel, GeometryInputs, QueryMode};
use crate::seeding::{derive_seed, stream};
use crate::spatial::AreaTable;
use crate::vec3::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    /// Fresh surface rows drawn per sample per epoch (area-weighted).
    pub surface_points_per_epoch: usize,
    /// Fresh volume rows drawn per sample per epoch (uniform).
    pub volume_points_per_epoch: usize,
    /// STL vertices drawn per sample per epoch for the geometry cloud.
    pub geometry_points: usize,
    /// Fixed held-out rows per sample for the scheduler's validation loss.
    pub val_surface_points: usize,
    pub val_volume_points: usize,
    /// Checkpoint cadence in epochs (0 disables periodic checkpoints).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            initial_lr: 1e-3,
            surface_points_per_epoch: 2048,
            volume_points_per_epoch: 4096,
            geometry_points: 1024,
            val_surface_points: 512,
            val_volume_points: 1024,
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.initial_lr <= 0.0 {
            return Err(Error::config("initial_lr must be positive"));
        }
        for (name, v) in [
            ("surface_points_per_epoch", self.surface_points_per_epoch),
            ("volume_points_per_epoch", self.volume_points_per_epoch),
            ("geometry_points", self.geometry_points),
            ("val_surface_points", self.val_surface_points),
            ("val_volume_points", self.val_volume_points),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_total: f64,
    pub val_total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub history: Vec<EpochRecord>,
    pub best_val: f64,
    pub best_epoch: usize,
    pub scheduler: PlateauScheduler,
}

/// Scheduler state plus the next epoch index, as stored in a checkpoint.
#[derive(Debug, Clone)]
pub struct ResumeState {
    pub scheduler: PlateauScheduler,
    pub next_epoch: usize,
    pub best_val: f64,
    pub best_epoch: usize,
}

/// Checkpoint sink: `(tag, model, scheduler, next_epoch, best_val, best_epoch)`.
pub type CheckpointFn<'a> =
    dyn FnMut(&str, &DominoModel, &PlateauScheduler, usize, f64, usize) -> Result<()> + 'a;

/// One sample's drawn rows: positions, truths, and surface areas.
struct RowBatch {
    surf_positions: Vec<Vec3>,
    surf_normals: Vec<Vec3>,
    surf_areas: Vec<f64>,
    surf_truth: Vec<Vec<f64>>,
    vol_positions: Vec<Vec3>,
    vol_truth: Vec<Vec<f64>>,
}

fn draw_rows(
    bundle: &SampleBundle,
    n_surface: usize,
    n_volume: usize,
    surf_seed: u64,
    vol_seed: u64,
) -> RowBatch {
    let mut surf_rng = ChaCha8Rng::seed_from_u64(surf_seed);
    let table = AreaTable::new(&bundle.surface.area);
    let mut surf_rows = Vec::with_capacity(n_surface);
    for _ in 0..n_surface {
        surf_rows.push(table.pick(surf_rng.gen::<f64>()));
    }
    let mut vol_rng = ChaCha8Rng::seed_from_u64(vol_seed);
    let nv = bundle.volume.len();
    let vol_rows: Vec<usize> = (0..n_volume).map(|_| vol_rng.gen_range(0..nv)).collect();
    rows_to_batch(bundle, &surf_rows, &vol_rows)
}

fn rows_to_batch(bundle: &SampleBundle, surf_rows: &[usize], vol_rows: &[usize]) -> RowBatch {
    let s = &bundle.surface;
    let v = &bundle.volume;
    RowBatch {
        surf_positions: surf_rows.iter().map(|&r| s.position[r]).collect(),
        surf_normals: surf_rows.iter().map(|&r| s.normal[r]).collect(),
        surf_areas: surf_rows.iter().map(|&r| s.area[r]).collect(),
        surf_truth: vec![
            surf_rows.iter().map(|&r| s.pressure[r]).collect(),
            surf_rows.iter().map(|&r| s.shear[r].x).collect(),
            surf_rows.iter().map(|&r| s.shear[r].y).collect(),
            surf_rows.iter().map(|&r| s.shear[r].z).collect(),
        ],
        vol_positions: vol_rows.iter().map(|&r| v.position[r]).collect(),
        vol_truth: vec![
            vol_rows.iter().map(|&r| v.pressure[r]).collect(),
            vol_rows.iter().map(|&r| v.velocity[r].x).collect(),
            vol_rows.iter().map(|&r| v.velocity[r].y).collect(),
            vol_rows.iter().map(|&r| v.velocity[r].z).collect(),
            vol_rows.iter().map(|&r| v.turb_visc[r]).collect(),
        ],
    }
}

fn draw_cloud(bundle: &SampleBundle, count: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let verts = &bundle.geometry.vertices;
    (0..count).map(|_| verts[rng.gen_range(0..verts.len())]).collect()
}

struct ForwardOutput {
    report: LossReport,
    encoding: crate::encoder::GlobalEncoding,
    activations: crate::model::EncoderActivations,
    surface: BranchForward,
    volume: BranchForward,
}

fn forward_sample(
    model: &DominoModel,
    geo: &GeometryInputs,
    rows: &RowBatch,
    cloud: &[Vec3],
    stencil_seed_base: u64,
) -> Result<ForwardOutput> {
    let (encoding, activations) = model.encode_geometry(geo, cloud)?;
    let surf_seeds: Vec<u64> = (0..rows.surf_positions.len())
        .map(|i| derive_seed(stencil_seed_base, &[0, i as u64]))
        .collect();
    let surface = model.forward_branch(
        geo,
        &encoding,
        &rows.surf_positions,
        Some(&rows.surf_normals),
        QueryMode::Surface,
        &surf_seeds,
    )?;
    let vol_seeds: Vec<u64> = (0..rows.vol_positions.len())
        .map(|i| derive_seed(stencil_seed_base, &[1, i as u64]))
        .collect();
    let volume = model.forward_branch(
        geo,
        &encoding,
        &rows.vol_positions,
        None,
        QueryMode::Volume,
        &vol_seeds,
    )?;

    let surface_vars: Vec<String> = model.surface_heads.iter().map(|h| h.name.clone()).collect();
    let volume_vars: Vec<String> = model.volume_heads.iter().map(|h| h.name.clone()).collect();
    let report = compute_loss(
        &surface_vars,
        &surface.predictions,
        &rows.surf_truth,
        &rows.surf_areas,
        &volume_vars,
        &volume.predictions,
        &rows.vol_truth,
    )?;
    Ok(ForwardOutput { report, encoding, activations, surface, volume })
}

/// Full training run. `samples` pairs each training bundle with its prepared
/// geometry; `resume` continues a checkpointed run. Checkpoints are emitted
/// through the optional sink with tags `best` and `epoch_{n}`.
pub fn train(
    model: &mut DominoModel,
    samples: &[(&SampleBundle, &GeometryInputs)],
    config: &TrainConfig,
    seed: u64,
    resume: Option<ResumeState>,
    mut checkpoint: Option<&mut CheckpointFn<'_>>,
) -> Result<TrainResult> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::config("training requires at least one sample"));
    }

    // Fixed validation rows and clouds, identical across epochs and resumes.
    let val_batches: Vec<(RowBatch, Vec<Vec3>)> = samples
        .iter()
        .enumerate()
        .map(|(si, (bundle, _))| {
            let rows = draw_rows(
                bundle,
                config.val_surface_points,
                config.val_volume_points,
                derive_seed(seed, &[stream::VALIDATION, si as u64, 0]),
                derive_seed(seed, &[stream::VALIDATION, si as u64, 1]),
            );
            let cloud = draw_cloud(
                bundle,
                config.geometry_points,
                derive_seed(seed, &[stream::VALIDATION, si as u64, 2]),
            );
            (rows, cloud)
        })
        .collect();

    let (mut scheduler, start_epoch, mut best_val, mut best_epoch) = match resume {
        Some(state) => (state.scheduler, state.next_epoch, state.best_val, state.best_epoch),
        None => (PlateauScheduler::new(config.initial_lr), 0, f64::INFINITY, 0),
    };

    let mut history = Vec::with_capacity(config.epochs.saturating_sub(start_epoch));
    for epoch in start_epoch..config.epochs {
        let lr = scheduler.lr();
        let mut train_sum = 0.0;
        for (si, (bundle, geo)) in samples.iter().enumerate() {
            let e = epoch as u64;
            let s = si as u64;
            let rows = draw_rows(
                bundle,
                config.surface_points_per_epoch,
                config.volume_points_per_epoch,
                derive_seed(seed, &[stream::SURFACE_POINTS, e, s]),
                derive_seed(seed, &[stream::VOLUME_POINTS, e, s]),
            );
            let cloud = draw_cloud(
                bundle,
                config.geometry_points,
                derive_seed(seed, &[stream::GEOMETRY_CLOUD, e, s]),
            );
            let stencil_base = derive_seed(seed, &[stream::STENCIL, e, s]);

            model.params.zero_grads();
            let fwd = forward_sample(model, geo, &rows, &cloud, stencil_base)?;
            if !fwd.report.total.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            train_sum += fwd.report.total;

            let (surf_grads, vol_grads) = loss_gradients(
                &fwd.surface.predictions,
                &rows.surf_truth,
                &rows.surf_areas,
                &fwd.volume.predictions,
                &rows.vol_truth,
            );
            let grad_s =
                model.backward_branch(&fwd.encoding, &fwd.surface, QueryMode::Surface, &surf_grads)?;
            let grad_v =
                model.backward_branch(&fwd.encoding, &fwd.volume, QueryMode::Volume, &vol_grads)?;
            let grad_encoding: Vec<f64> =
                grad_s.iter().zip(&grad_v).map(|(a, b)| a + b).collect();
            model.encode_backward(&fwd.encoding, &fwd.activations, &grad_encoding)?;
            model.params.adam_step(lr, ADAM_BETAS, ADAM_EPS)?;
        }
        let train_total = train_sum / samples.len() as f64;

        let mut val_sum = 0.0;
        for (si, ((bundle, geo), (rows, cloud))) in
            samples.iter().zip(&val_batches).enumerate()
        {
            let _ = bundle;
            let stencil_base = derive_seed(seed, &[stream::VALIDATION, si as u64, 3]);
            let fwd = forward_sample(model, geo, rows, cloud, stencil_base)?;
            val_sum += fwd.report.total;
        }
        let val_total = val_sum / samples.len() as f64;
        if !val_total.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }

        scheduler.step(val_total);
        history.push(EpochRecord { epoch, lr, train_total, val_total });

        let improved = val_total < best_val;
        if improved {
            best_val = val_total;
            best_epoch = epoch;
        }
        if let Some(sink) = checkpoint.as_mut() {
            if improved {
                sink("best", model, &scheduler, epoch + 1, best_val, best_epoch)?;
            }
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                sink(
                    &format!("epoch_{:05}", epoch + 1),
                    model,
                    &scheduler,
                    epoch + 1,
                    best_val,
                    best_epoch,
                )?;
            }
        }
    }
    Ok(TrainResult { history, best_val, best_epoch, scheduler })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_dataset, DatasetSpec};
    use crate::encoder::EncoderConfig;
    use crate::model::prepare_geometry;
    use crate::predictor::PredictorConfig;
    use crate::spatial::{Axis, TrimFactors};

    fn tiny_setup() -> (DominoModel, Vec<SampleBundle>, Vec<GeometryInputs>) {
        let encoder = EncoderConfig {
            resolution: 8,
            channels_per_scale: 2,
            radii: vec![0.1, 0.4],
            max_neighbors: 8,
            propagation_iters: 1,
            stop_tolerance: None,
            kernel_hidden: vec![8],
        };
        let predictor = PredictorConfig {
            probe_edge: 3,
            local_width: 8,
            local_hidden: vec![],
            stencil_neighbors: 2,
            stencil_radius_cells: 2.0,
            basis_widths: vec![8, 8],
            fusion_hidden: vec![8],
        };
        let dataset = DatasetSpec {
            n_train: 2,
            n_test_in: 1,
            n_test_out: 1,
            subdivision: 2,
            volume_points: 256,
            ..DatasetSpec::default()
        };
        let bundles = make_dataset(&dataset, 11).unwrap();
        let train: Vec<SampleBundle> =
            bundles.into_iter().filter(|b| b.split == crate::datagen::SplitTag::Train).collect();
        let geos: Vec<GeometryInputs> = train
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
        let model = DominoModel::new(encoder, predictor, 5).unwrap();
        (model, train, geos)
    }

    fn tiny_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            initial_lr: 1e-3,
            surface_points_per_epoch: 16,
            volume_points_per_epoch: 24,
            geometry_points: 32,
            val_surface_points: 16,
            val_volume_points: 16,
            checkpoint_every: 0,
        }
    }

    #[test]
    fn same_seed_gives_identical_histories() {
        let (model0, bundles, geos) = tiny_setup();
        let samples: Vec<(&SampleBundle, &GeometryInputs)> =
            bundles.iter().zip(geos.iter()).map(|(b, g)| (b, g)).collect();
        let config = tiny_config(3);

        let mut m1 = DominoModel::new(model0.encoder.clone(), model0.predictor.clone(), 5).unwrap();
        let r1 = train(&mut m1, &samples, &config, 42, None, None).unwrap();
        let mut m2 = DominoModel::new(model0.encoder.clone(), model0.predictor.clone(), 5).unwrap();
        let r2 = train(&mut m2, &samples, &config, 42, None, None).unwrap();
        assert_eq!(r1.history, r2.history);
        for (name, t1) in m1.params.iter() {
            let t2 = m2.params.tensor(name).unwrap();
            assert_eq!(t1.values, t2.values, "parameter {name} diverged");
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let (mut model, bundles, geos) = tiny_setup();
        let samples: Vec<(&SampleBundle, &GeometryInputs)> =
            bundles.iter().zip(geos.iter()).map(|(b, g)| (b, g)).collect();
        let before: Vec<(String, Vec<f64>)> = model
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.values.clone()))
            .collect();
        let config = tiny_config(2);
        // PlateauScheduler floors at 1e-6; force an exactly-zero rate by
        // driving the schedule through resume state.
        let mut sched = PlateauScheduler::new(0.0);
        sched.floor = 0.0;
        let resume = ResumeState { scheduler: sched, next_epoch: 0, best_val: f64::INFINITY, best_epoch: 0 };
        train(&mut model, &samples, &config, 1, Some(resume), None).unwrap();
        for (name, values) in before {
            assert_eq!(model.params.tensor(&name).unwrap().values, values, "{name} moved");
        }
    }

    #[test]
    fn training_reduces_loss_on_a_tiny_problem() {
        let (mut model, bundles, geos) = tiny_setup();
        let samples: Vec<(&SampleBundle, &GeometryInputs)> =
            bundles.iter().zip(geos.iter()).take(1).collect();
        let config = tiny_config(30);
        let result = train(&mut model, &samples, &config, 7, None, None).unwrap();
        let first = result.history.first().unwrap().train_total;
        let last = result.history.last().unwrap().train_total;
        assert!(
            last < first,
            "loss did not decrease: {first} -> {last}"
        );
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (model0, bundles, geos) = tiny_setup();
        let samples: Vec<(&SampleBundle, &GeometryInputs)> =
            bundles.iter().zip(geos.iter()).map(|(b, g)| (b, g)).collect();

        let full_cfg = tiny_config(4);
        let mut m_full =
            DominoModel::new(model0.encoder.clone(), model0.predictor.clone(), 5).unwrap();
        let r_full = train(&mut m_full, &samples, &full_cfg, 9, None, None).unwrap();

        let half_cfg = tiny_config(2);
        let mut m_half =
            DominoModel::new(model0.encoder.clone(), model0.predictor.clone(), 5).unwrap();
        let r_half = train(&mut m_half, &samples, &half_cfg, 9, None, None).unwrap();
        let resume = ResumeState {
            scheduler: r_half.scheduler.clone(),
            next_epoch: 2,
            best_val: r_half.best_val,
            best_epoch: r_half.best_epoch,
        };
        let r_rest = train(&mut m_half, &samples, &full_cfg, 9, Some(resume), None).unwrap();

        for (a, b) in r_full.history[2..].iter().zip(&r_rest.history) {
            assert_eq!(a.epoch, b.epoch);
            assert!((a.train_total - b.train_total).abs() < 1e-9);
            assert!((a.val_total - b.val_total).abs() < 1e-9);
        }
        for (name, t1) in m_full.params.iter() {
            let t2 = m_half.params.tensor(name).unwrap();
            for (x, y) in t1.values.iter().zip(&t2.values) {
                assert!((x - y).abs() < 1e-12, "parameter {name} diverged");
            }
        }
    }
}
