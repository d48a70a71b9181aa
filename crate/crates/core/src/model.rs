//! The composed model: shared geometry encoder plus per-variable aggregation
//! heads, with batched field prediction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffnet::{register_conv_block, register_mlp, MlpSpec, ParamStore};
use crate::encoder::{
    assemble_global_encoding, project_points_to_grid, project_points_to_grid_backward,
    propagate_backward, propagate_surface_to_domain, split_encoding_gradient, EncoderConfig,
    GlobalEncoding, ProjectionCache, PropagationCache,
};
use crate::error::{Error, Result};
use crate::mesh::TriangleSurface;
use crate::predictor::{
    aggregate_backward, aggregate_with_values, extract_local_backward, extract_local_encoding,
    HeadConfig, LocalEncodingCache, PredictorConfig, StencilBatch, StencilContext, StencilMode,
};
use crate::seeding::{derive_seed, stream};
use crate::spatial::{
    compute_sdf_grid, make_domain_box, AreaTable, Axis, BoundingBox, NeighborIndex, SdfReport,
    StructuredGrid, TrimFactors, SDF_CHANNELS,
};
use crate::vec3::Vec3;

/// Volume solution variables, in output-column order.
pub const VOLUME_VARIABLES: [&str; 5] = ["p", "u_x", "u_y", "u_z", "nu_t"];
/// Surface solution variables, in output-column order.
pub const SURFACE_VARIABLES: [&str; 4] = ["p", "tau_x", "tau_y", "tau_z"];

/// Fallback surface box edge for empty geometry.
const EMPTY_GEOMETRY_HALF_EDGE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMode {
    Surface,
    Volume,
}

/// Composed encoder + heads + every hyperparameter.
pub struct DominoModel {
    pub encoder: EncoderConfig,
    pub predictor: PredictorConfig,
    pub params: ParamStore,
    pub volume_heads: Vec<HeadConfig>,
    pub surface_heads: Vec<HeadConfig>,
    kernel_spec: MlpSpec,
    local_spec: MlpSpec,
}

impl DominoModel {
    /// Fresh model with parameters drawn from the seed's init stream.
    pub fn new(encoder: EncoderConfig, predictor: PredictorConfig, seed: u64) -> Result<Self> {
        encoder.validate()?;
        predictor.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::PARAM_INIT]));

        let kernel_spec = encoder.kernel_spec();
        for k in 0..encoder.radii.len() {
            register_mlp(&mut params, &surface_kernel_prefix(k), &kernel_spec, &mut rng);
        }
        for k in 0..encoder.radii.len() {
            register_mlp(&mut params, &domain_kernel_prefix(k), &kernel_spec, &mut rng);
        }
        register_conv_block(&mut params, PROPAGATE_PREFIX, encoder.scale_channels(), &mut rng);

        let local_spec = predictor.local_spec(encoder.global_channels());
        register_mlp(&mut params, LOCAL_PREFIX, &local_spec, &mut rng);

        let volume_heads: Vec<HeadConfig> =
            VOLUME_VARIABLES.iter().map(|v| HeadConfig::new(v, &predictor)).collect();
        let surface_heads: Vec<HeadConfig> =
            SURFACE_VARIABLES.iter().map(|v| HeadConfig::new(v, &predictor)).collect();
        for head in &volume_heads {
            register_mlp(&mut params, &format!("{}.basis", volume_head_prefix(&head.name)), &head.basis, &mut rng);
            register_mlp(&mut params, &format!("{}.fusion", volume_head_prefix(&head.name)), &head.fusion, &mut rng);
        }
        for head in &surface_heads {
            register_mlp(&mut params, &format!("{}.basis", surface_head_prefix(&head.name)), &head.basis, &mut rng);
            register_mlp(&mut params, &format!("{}.fusion", surface_head_prefix(&head.name)), &head.fusion, &mut rng);
        }

        Ok(DominoModel { encoder, predictor, params, volume_heads, surface_heads, kernel_spec, local_spec })
    }

    pub fn kernel_spec(&self) -> &MlpSpec {
        &self.kernel_spec
    }

    pub fn local_spec(&self) -> &MlpSpec {
        &self.local_spec
    }
}

const PROPAGATE_PREFIX: &str = "encoder.propagate";
const LOCAL_PREFIX: &str = "local";

fn surface_kernel_prefix(scale: usize) -> String {
    format!("encoder.surface.scale{scale}")
}

fn domain_kernel_prefix(scale: usize) -> String {
    format!("encoder.domain.scale{scale}")
}

pub fn volume_head_prefix(var: &str) -> String {
    format!("head.volume.{var}")
}

pub fn surface_head_prefix(var: &str) -> String {
    format!("head.surface.{var}")
}

/// Preprocessed per-geometry state, shared across epochs and queries: grids,
/// SDF field, face-center index, and the stencil radius.
pub struct GeometryInputs {
    pub surface: TriangleSurface,
    pub surface_box: BoundingBox,
    pub domain_box: BoundingBox,
    pub surface_grid: StructuredGrid,
    pub domain_grid: StructuredGrid,
    pub sdf: StructuredGrid,
    pub sdf_report: SdfReport,
    pub face_index: Option<NeighborIndex>,
    pub area_table: Option<AreaTable>,
    /// Stencil radius `r_s` in world units (cells scale x mean cell edge).
    pub stencil_radius: f64,
}

impl GeometryInputs {
    pub fn stencil_context<'a>(&'a self, neighbors: usize) -> StencilContext<'a> {
        StencilContext {
            surface: &self.surface,
            face_index: self.face_index.as_ref(),
            area_table: self.area_table.as_ref(),
            sdf: &self.sdf,
            center_of_mass: self.surface.center_of_mass,
            radius: self.stencil_radius,
            neighbors,
        }
    }
}

/// Build every per-geometry structure the model needs. `surface` may be
/// empty, in which case the SDF falls back to a positive constant and no
/// surface queries are possible.
pub fn prepare_geometry(
    encoder: &EncoderConfig,
    predictor: &PredictorConfig,
    surface: TriangleSurface,
    flow_axis: Axis,
    trim: TrimFactors,
) -> Result<GeometryInputs> {
    let surface_box = if surface.is_empty() {
        BoundingBox::new(
            Vec3::splat(-EMPTY_GEOMETRY_HALF_EDGE),
            Vec3::splat(EMPTY_GEOMETRY_HALF_EDGE),
        )?
    } else {
        BoundingBox::of_surface(&surface)?
    };
    let domain_box = make_domain_box(surface_box, flow_axis, trim);
    let m = encoder.resolution;
    let surface_grid = StructuredGrid::new(surface_box, m, 0)?;
    let domain_grid = StructuredGrid::new(domain_box, m, 0)?;

    let (sdf, sdf_report) = if surface.is_empty() {
        let mut grid = domain_grid.like_geometry(SDF_CHANNELS);
        let diag = domain_box.diagonal();
        for id in 0..grid.node_count() {
            grid.data[id * SDF_CHANNELS] = diag;
        }
        (grid, SdfReport { disagreement_fraction: 0.0, unsigned_fallback: true })
    } else {
        compute_sdf_grid(&surface, &domain_grid)?
    };

    let stencil_radius = predictor.stencil_radius_cells * domain_grid.cell_size.mean();
    let (face_index, area_table) = if surface.is_empty() {
        (None, None)
    } else {
        (
            Some(NeighborIndex::build(surface.face_center.clone(), stencil_radius)),
            Some(AreaTable::new(&surface.face_area)),
        )
    };

    Ok(GeometryInputs {
        surface,
        surface_box,
        domain_box,
        surface_grid,
        domain_grid,
        sdf,
        sdf_report,
        face_index,
        area_table,
        stencil_radius,
    })
}

/// Forward-pass caches of one geometry encoding.
pub struct EncoderActivations {
    surface_projections: Vec<ProjectionCache>,
    domain_projections: Vec<ProjectionCache>,
    propagation: PropagationCache,
}

impl EncoderActivations {
    pub fn iterations_used(&self) -> usize {
        self.propagation.iterations_used
    }

    pub fn residual_history(&self) -> &[f64] {
        &self.propagation.residual_history
    }
}

impl DominoModel {
    /// Run the full geometry encoder on a point cloud: multi-scale projection
    /// onto both grids, iterative propagation, SDF assembly.
    pub fn encode_geometry(
        &self,
        geo: &GeometryInputs,
        cloud: &[Vec3],
    ) -> Result<(GlobalEncoding, EncoderActivations)> {
        let f = self.encoder.channels_per_scale;
        let scales = self.encoder.radii.len();
        let nodes = geo.domain_grid.node_count();
        let diag = geo.surface_box.diagonal();

        let mut surface_features = vec![0.0; nodes * f * scales];
        let mut domain_features = vec![0.0; nodes * f * scales];
        let mut surface_projections = Vec::with_capacity(scales);
        let mut domain_projections = Vec::with_capacity(scales);
        for (k, frac) in self.encoder.radii.iter().enumerate() {
            let radius = frac * diag;
            let index = NeighborIndex::build(cloud.to_vec(), radius);
            let (feat_s, cache_s) = project_points_to_grid(
                &index,
                &geo.surface_grid,
                radius,
                self.encoder.max_neighbors,
                &self.params,
                &surface_kernel_prefix(k),
                &self.kernel_spec,
            )?;
            scatter_scale(&mut surface_features, &feat_s, k, f, scales);
            surface_projections.push(cache_s);

            let (feat_d, cache_d) = project_points_to_grid(
                &index,
                &geo.domain_grid,
                radius,
                self.encoder.max_neighbors,
                &self.params,
                &domain_kernel_prefix(k),
                &self.kernel_spec,
            )?;
            scatter_scale(&mut domain_features, &feat_d, k, f, scales);
            domain_projections.push(cache_d);
        }

        let (propagated, propagation) = propagate_surface_to_domain(
            &self.params,
            PROPAGATE_PREFIX,
            &surface_features,
            f * scales,
            &geo.surface_grid,
            &geo.domain_grid,
            self.encoder.propagation_iters,
            self.encoder.stop_tolerance,
        )?;

        let encoding = assemble_global_encoding(
            &domain_features,
            f * scales,
            &propagated,
            f * scales,
            &geo.sdf,
        )?;
        if encoding.grid.channels != self.encoder.global_channels() {
            return Err(Error::ShapeMismatch {
                context: "global encoding channels".into(),
                expected: vec![self.encoder.global_channels()],
                actual: vec![encoding.grid.channels],
            });
        }
        Ok((encoding, EncoderActivations { surface_projections, domain_projections, propagation }))
    }

    /// Reverse pass of [`Self::encode_geometry`]: takes the gradient with
    /// respect to the assembled encoding grid and accumulates every encoder
    /// parameter gradient.
    pub fn encode_backward(
        &mut self,
        encoding: &GlobalEncoding,
        activations: &EncoderActivations,
        grad_encoding: &[f64],
    ) -> Result<()> {
        let f = self.encoder.channels_per_scale;
        let scales = self.encoder.radii.len();
        let (grad_direct, grad_prop) = split_encoding_gradient(encoding, grad_encoding);

        let grad_surface_features = propagate_backward(
            &mut self.params,
            PROPAGATE_PREFIX,
            &activations.propagation,
            &grad_prop,
        )?;
        for k in 0..scales {
            let grad_k = gather_scale(&grad_surface_features, k, f, scales);
            project_points_to_grid_backward(
                &mut self.params,
                &surface_kernel_prefix(k),
                &self.kernel_spec,
                &activations.surface_projections[k],
                &grad_k,
            )?;
        }
        for k in 0..scales {
            let grad_k = gather_scale(&grad_direct, k, f, scales);
            project_points_to_grid_backward(
                &mut self.params,
                &domain_kernel_prefix(k),
                &self.kernel_spec,
                &activations.domain_projections[k],
                &grad_k,
            )?;
        }
        Ok(())
    }
}

/// Write a per-scale feature block into the concatenated channel layout.
fn scatter_scale(dst: &mut [f64], src: &[f64], scale: usize, f: usize, scales: usize) {
    let nodes = src.len() / f;
    let width = f * scales;
    for node in 0..nodes {
        dst[node * width + scale * f..node * width + (scale + 1) * f]
            .copy_from_slice(&src[node * f..(node + 1) * f]);
    }
}

/// Extract one scale's channel block from the concatenated layout.
fn gather_scale(src: &[f64], scale: usize, f: usize, scales: usize) -> Vec<f64> {
    let width = f * scales;
    let nodes = src.len() / width;
    let mut out = vec![0.0; nodes * f];
    for node in 0..nodes {
        out[node * f..(node + 1) * f]
            .copy_from_slice(&src[node * width + scale * f..node * width + (scale + 1) * f]);
    }
    out
}

/// Predicted fields, one column per variable in the mode's variable order.
#[derive(Debug, Clone)]
pub struct FieldTable {
    pub variables: Vec<String>,
    /// Row-major `rows x variables`.
    pub values: Vec<f64>,
}

impl FieldTable {
    pub fn rows(&self) -> usize {
        if self.variables.is_empty() {
            0
        } else {
            self.values.len() / self.variables.len()
        }
    }

    /// Extract one variable's column; unknown names are an error.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::UnknownVariable { name: name.into() })?;
        let stride = self.variables.len();
        Ok(self.values.iter().skip(idx).step_by(stride).copied().collect())
    }
}

/// Per-branch forward caches of one prediction batch (used for training).
pub struct BranchForward {
    pub stencil: StencilBatch,
    pub local: Vec<f64>,
    pub local_cache: LocalEncodingCache,
    /// Per-head aggregated predictions, in head order.
    pub predictions: Vec<Vec<f64>>,
}

impl DominoModel {
    fn heads(&self, mode: QueryMode) -> &[HeadConfig] {
        match mode {
            QueryMode::Surface => &self.surface_heads,
            QueryMode::Volume => &self.volume_heads,
        }
    }

    fn head_prefix(&self, mode: QueryMode, var: &str) -> String {
        match mode {
            QueryMode::Surface => surface_head_prefix(var),
            QueryMode::Volume => volume_head_prefix(var),
        }
    }

    /// Forward pass of one batch through stencils, local encodings, and all
    /// heads of the mode. `seeds` carries one stencil seed per point.
    pub fn forward_branch(
        &self,
        geo: &GeometryInputs,
        encoding: &GlobalEncoding,
        points: &[Vec3],
        normals: Option<&[Vec3]>,
        mode: QueryMode,
        seeds: &[u64],
    ) -> Result<BranchForward> {
        let ctx = geo.stencil_context(self.predictor.stencil_neighbors);
        let stencil_mode = match mode {
            QueryMode::Surface => StencilMode::Surface,
            QueryMode::Volume => StencilMode::Volume,
        };
        let stencil = ctx.build(points, normals, stencil_mode, seeds)?;
        let (local, local_cache) = extract_local_encoding(
            encoding,
            points,
            self.predictor.probe_edge,
            &self.params,
            LOCAL_PREFIX,
            &self.local_spec,
        )?;
        let mut predictions = Vec::with_capacity(self.heads(mode).len());
        for head in self.heads(mode) {
            let prefix = self.head_prefix(mode, &head.name);
            let (pred, _) = aggregate_with_values(
                &self.params,
                &prefix,
                head,
                &stencil,
                &local,
                self.predictor.local_width,
            )?;
            predictions.push(pred);
        }
        Ok(BranchForward { stencil, local, local_cache, predictions })
    }

    /// Reverse pass of [`Self::forward_branch`]: per-head prediction
    /// gradients in, gradient with respect to the encoding grid out.
    pub fn backward_branch(
        &mut self,
        encoding: &GlobalEncoding,
        forward: &BranchForward,
        mode: QueryMode,
        grad_predictions: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        let local_width = self.predictor.local_width;
        let batch = forward.stencil.len();
        let mut grad_local = vec![0.0; batch * local_width];
        let heads = self.heads(mode).to_vec();
        for (head, grad_pred) in heads.iter().zip(grad_predictions) {
            let prefix = self.head_prefix(mode, &head.name);
            let g = aggregate_backward(
                &mut self.params,
                &prefix,
                head,
                &forward.stencil,
                &forward.local,
                local_width,
                grad_pred,
            )?;
            for (acc, v) in grad_local.iter_mut().zip(&g) {
                *acc += v;
            }
        }
        let local_spec = self.local_spec.clone();
        extract_local_backward(
            &mut self.params,
            LOCAL_PREFIX,
            &local_spec,
            encoding,
            &forward.local_cache,
            &grad_local,
        )
    }

    /// Predict all of a mode's variables at the query points, batched so
    /// peak transient memory scales with `batch_size`, not the query count.
    /// Stencil randomness is seeded per global point index, so results are
    /// identical across any batching of the same point list.
    #[allow(clippy::too_many_arguments)]
    pub fn predict_fields(
        &self,
        geo: &GeometryInputs,
        encoding: &GlobalEncoding,
        points: &[Vec3],
        normals: Option<&[Vec3]>,
        mode: QueryMode,
        batch_size: usize,
        seed: u64,
    ) -> Result<FieldTable> {
        let heads = self.heads(mode);
        let variables: Vec<String> = heads.iter().map(|h| h.name.clone()).collect();
        let width = variables.len();
        let mut values = vec![0.0; points.len() * width];
        let batch_size = batch_size.max(1);

        let mut start = 0;
        while start < points.len() {
            let end = (start + batch_size).min(points.len());
            let chunk = &points[start..end];
            let chunk_normals = normals.map(|n| &n[start..end]);
            let seeds: Vec<u64> = (start..end)
                .map(|i| derive_seed(seed, &[stream::STENCIL, i as u64]))
                .collect();
            let fwd = self.forward_branch(geo, encoding, chunk, chunk_normals, mode, &seeds)?;
            for (h, pred) in fwd.predictions.iter().enumerate() {
                for (row, &v) in pred.iter().enumerate() {
                    values[(start + row) * width + h] = v;
                }
            }
            start = end;
        }
        Ok(FieldTable { variables, values })
    }
}
