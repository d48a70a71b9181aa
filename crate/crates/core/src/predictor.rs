//! Solution-field prediction machinery: local geometry encodings sampled from
//! the global grid, randomly built computational stencils, basis-function
//! networks, and inverse-distance aggregation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffnet::{mlp_backward, mlp_forward, Activation, MlpSpec, ParamStore};
use crate::encoder::GlobalEncoding;
use crate::error::{Error, Result};
use crate::mesh::TriangleSurface;
use crate::spatial::{AreaTable, NeighborIndex, StructuredGrid, TrilinearStencil};
use crate::vec3::Vec3;

/// Width of one stencil-point feature row: position (3), sdf (1), direction
/// from the geometry center of mass (3), surface normal (3, zero for volume
/// points).
pub const STENCIL_FEATURE_WIDTH: usize = 10;

/// IDW regularizer as a fraction of the stencil radius.
pub const IDW_EPSILON_FRACTION: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    /// Probe lattice edge `l` (odd).
    pub probe_edge: usize,
    /// Width of the local encoding vector.
    pub local_width: usize,
    /// Hidden widths of the local projection MLP.
    pub local_hidden: Vec<usize>,
    /// Random stencil neighbors per evaluation point (`p`).
    pub stencil_neighbors: usize,
    /// Stencil radius in units of the mean domain cell edge.
    pub stencil_radius_cells: f64,
    /// Basis network widths after the 10-wide input (last entry = latent width).
    pub basis_widths: Vec<usize>,
    /// Fusion network hidden widths (input = latent + local, output 1).
    pub fusion_hidden: Vec<usize>,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            probe_edge: 3,
            local_width: 64,
            local_hidden: vec![],
            stencil_neighbors: 7,
            stencil_radius_cells: 2.0,
            basis_widths: vec![64, 64],
            fusion_hidden: vec![128, 64],
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probe_edge == 0 || self.probe_edge % 2 == 0 {
            return Err(Error::config(format!("probe_edge must be odd, got {}", self.probe_edge)));
        }
        if self.local_width == 0 {
            return Err(Error::config("local_width must be >= 1"));
        }
        if self.stencil_radius_cells <= 0.0 {
            return Err(Error::config("stencil_radius_cells must be positive"));
        }
        if self.basis_widths.is_empty() {
            return Err(Error::config("basis_widths must not be empty"));
        }
        Ok(())
    }

    pub fn latent_width(&self) -> usize {
        *self.basis_widths.last().unwrap()
    }

    pub fn local_spec(&self, global_channels: usize) -> MlpSpec {
        let flat = self.probe_edge.pow(3) * global_channels;
        let mut widths = vec![flat];
        widths.extend_from_slice(&self.local_hidden);
        widths.push(self.local_width);
        MlpSpec::new(widths, Activation::Relu)
    }

    pub fn basis_spec(&self) -> MlpSpec {
        let mut widths = vec![STENCIL_FEATURE_WIDTH];
        widths.extend_from_slice(&self.basis_widths);
        MlpSpec::new(widths, Activation::Relu)
    }

    pub fn fusion_spec(&self) -> MlpSpec {
        let mut widths = vec![self.latent_width() + self.local_width];
        widths.extend_from_slice(&self.fusion_hidden);
        widths.push(1);
        MlpSpec::new(widths, Activation::Relu)
    }
}

/// One aggregation head; vector variables use one head per component, so the
/// output dimension is always 1.
#[derive(Debug, Clone)]
pub struct HeadConfig {
    pub name: String,
    pub basis: MlpSpec,
    pub fusion: MlpSpec,
    pub output_dim: usize,
}

impl HeadConfig {
    pub fn new(name: &str, config: &PredictorConfig) -> Self {
        HeadConfig {
            name: name.to_string(),
            basis: config.basis_spec(),
            fusion: config.fusion_spec(),
            output_dim: 1,
        }
    }
}

/// A batch of evaluation points with their random stencils and features.
#[derive(Debug, Clone)]
pub struct StencilBatch {
    pub centers: Vec<Vec3>,
    /// Stencil size `p + 1`; slot 0 of every stencil is the center itself.
    pub stencil_size: usize,
    pub points: Vec<Vec3>,
    /// `batch x stencil_size x STENCIL_FEATURE_WIDTH`.
    pub features: Vec<f64>,
    /// `batch x stencil_size`; the center's own entry is exactly 0.
    pub distances: Vec<f64>,
    /// Stencil radius used to build the batch (also scales the IDW epsilon).
    pub radius: f64,
}

impl StencilBatch {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn idw_epsilon(&self) -> f64 {
        IDW_EPSILON_FRACTION * self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StencilMode {
    Surface,
    Volume,
}

/// Immutable per-geometry inputs for stencil construction.
pub struct StencilContext<'a> {
    pub surface: &'a TriangleSurface,
    /// Spatial index over face centers (required for surface mode).
    pub face_index: Option<&'a NeighborIndex>,
    pub area_table: Option<&'a AreaTable>,
    pub sdf: &'a StructuredGrid,
    pub center_of_mass: Vec3,
    /// Stencil radius `r_s` in world units.
    pub radius: f64,
    /// Neighbor count `p`.
    pub neighbors: usize,
}

impl<'a> StencilContext<'a> {
    /// Build stencils around `centers`. `center_normals` supplies surface
    /// normals for surface-mode centers; `seeds` holds one RNG seed per
    /// center so results are independent of batching.
    pub fn build(
        &self,
        centers: &[Vec3],
        center_normals: Option<&[Vec3]>,
        mode: StencilMode,
        seeds: &[u64],
    ) -> Result<StencilBatch> {
        debug_assert_eq!(seeds.len(), centers.len());
        if mode == StencilMode::Surface && self.surface.is_empty() {
            return Err(Error::EmptySurfaceSampling);
        }
        let p = self.neighbors;
        let size = p + 1;
        let batch = centers.len();
        let mut points = Vec::with_capacity(batch * size);
        let mut features = vec![0.0; batch * size * STENCIL_FEATURE_WIDTH];
        let mut distances = vec![0.0; batch * size];

        for (b, &center) in centers.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds[b]);
            let center_normal = match (mode, center_normals) {
                (StencilMode::Surface, Some(n)) => n[b],
                _ => Vec3::ZERO,
            };
            points.push(center);
            self.fill_features(
                &mut features[(b * size) * STENCIL_FEATURE_WIDTH..],
                center,
                center_normal,
            );
            distances[b * size] = 0.0;

            for j in 0..p {
                let (pos, normal) = match mode {
                    StencilMode::Volume => (self.sample_ball(center, &mut rng), Vec3::ZERO),
                    StencilMode::Surface => self.sample_surface_near(center, &mut rng)?,
                };
                points.push(pos);
                let slot = b * size + 1 + j;
                self.fill_features(
                    &mut features[slot * STENCIL_FEATURE_WIDTH..],
                    pos,
                    normal,
                );
                distances[slot] = (pos - center).norm();
            }
        }
        Ok(StencilBatch {
            centers: centers.to_vec(),
            stencil_size: size,
            points,
            features,
            distances,
            radius: self.radius,
        })
    }

    fn fill_features(&self, row: &mut [f64], pos: Vec3, normal: Vec3) {
        let sdf = self.sdf.sample_channel_clamped(pos, 0);
        let dir = (pos - self.center_of_mass).normalized();
        row[0] = pos.x;
        row[1] = pos.y;
        row[2] = pos.z;
        row[3] = sdf;
        row[4] = dir.x;
        row[5] = dir.y;
        row[6] = dir.z;
        row[7] = normal.x;
        row[8] = normal.y;
        row[9] = normal.z;
    }

    /// Uniform point in the ball of radius `r_s` around `center`.
    fn sample_ball<R: Rng>(&self, center: Vec3, rng: &mut R) -> Vec3 {
        let z: f64 = 1.0 - 2.0 * rng.gen::<f64>();
        let phi = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
        let s = (1.0 - z * z).max(0.0).sqrt();
        let dir = Vec3::new(s * phi.cos(), s * phi.sin(), z);
        let r = self.radius * rng.gen::<f64>().cbrt();
        center + dir * r
    }

    /// Area-weighted barycentric point on a face near `center`: faces whose
    /// centers lie within `r_s` qualify; if fewer than `p` qualify, the
    /// candidate set becomes the `p` nearest face centers.
    fn sample_surface_near<R: Rng>(&self, center: Vec3, rng: &mut R) -> Result<(Vec3, Vec3)> {
        let index = self.face_index.ok_or(Error::EmptySurfaceSampling)?;
        let faces = self.surface.faces.len();
        let mut candidates = index.ball_query(center, self.radius, faces);
        if candidates.len() < self.neighbors.max(1) {
            candidates = nearest_faces(self.surface, center, self.neighbors.max(1));
        }
        // Cumulative area over the candidate set.
        let mut cum = Vec::with_capacity(candidates.len());
        let mut total = 0.0;
        for &(f, _) in &candidates {
            total += self.surface.face_area[f as usize];
            cum.push(total);
        }
        let target = rng.gen::<f64>() * total;
        let pick = cum.partition_point(|&c| c <= target).min(candidates.len() - 1);
        let face = candidates[pick].0 as usize;
        let pos = crate::spatial::barycentric_point(self.surface, face, rng.gen(), rng.gen());
        Ok((pos, self.surface.face_normal[face]))
    }
}

/// Brute-force `k` nearest face centers by (distance, index).
fn nearest_faces(surface: &TriangleSurface, center: Vec3, k: usize) -> Vec<(u32, f64)> {
    let mut all: Vec<(f64, u32)> = surface
        .face_center
        .iter()
        .enumerate()
        .map(|(f, &c)| ((c - center).norm_sq(), f as u32))
        .collect();
    all.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(d2, f)| (f, d2.sqrt())).collect()
}

/// Cache of one local-encoding extraction.
#[derive(Debug, Clone)]
pub struct LocalEncodingCache {
    /// One interpolation stencil per probe, `batch x l^3` of them.
    probes: Vec<TrilinearStencil>,
    /// Flattened probe samples, the local-MLP input: `batch x (l^3 * C)`.
    pub flat: Vec<f64>,
}

/// Sample an `l x l x l` probe lattice (spacing = one grid cell) around each
/// center from the global encoding, flatten, and project through the local
/// MLP. Probes outside the domain clamp to boundary values; centers outside
/// the domain are an error.
pub fn extract_local_encoding(
    global: &GlobalEncoding,
    centers: &[Vec3],
    probe_edge: usize,
    store: &ParamStore,
    prefix: &str,
    spec: &MlpSpec,
) -> Result<(Vec<f64>, LocalEncodingCache)> {
    let grid = &global.grid;
    let channels = grid.channels;
    let probes_per = probe_edge.pow(3);
    let flat_width = probes_per * channels;
    if spec.input_width() != flat_width {
        return Err(Error::ShapeMismatch {
            context: format!("{prefix} local MLP input"),
            expected: vec![flat_width],
            actual: vec![spec.input_width()],
        });
    }
    for (i, &c) in centers.iter().enumerate() {
        if !grid.bbox.contains(c) {
            return Err(Error::PointOutsideDomain { index: i, x: c.x, y: c.y, z: c.z });
        }
    }
    let half = (probe_edge as i64 - 1) / 2;
    let batch = centers.len();
    let mut probes = Vec::with_capacity(batch * probes_per);
    let mut flat = vec![0.0; batch * flat_width];
    for (b, &center) in centers.iter().enumerate() {
        let mut probe_idx = 0;
        for di in -half..=half {
            for dj in -half..=half {
                for dk in -half..=half {
                    let pos = center
                        + Vec3::new(
                            di as f64 * grid.cell_size.x,
                            dj as f64 * grid.cell_size.y,
                            dk as f64 * grid.cell_size.z,
                        );
                    let st = grid.trilinear_clamped(pos);
                    let out =
                        &mut flat[b * flat_width + probe_idx * channels..][..channels];
                    for (corner, w) in st.corners.iter().zip(st.weights) {
                        let src = *corner as usize * channels;
                        for (o, v) in out.iter_mut().zip(&grid.data[src..src + channels]) {
                            *o += w * v;
                        }
                    }
                    probes.push(st);
                    probe_idx += 1;
                }
            }
        }
    }
    let encoding = mlp_forward(store, prefix, spec, &flat, batch)?;
    Ok((encoding, LocalEncodingCache { probes, flat }))
}

/// Reverse pass of [`extract_local_encoding`]: accumulates local-MLP
/// gradients and returns the gradient with respect to the global grid data.
pub fn extract_local_backward(
    store: &mut ParamStore,
    prefix: &str,
    spec: &MlpSpec,
    global: &GlobalEncoding,
    cache: &LocalEncodingCache,
    grad_encoding: &[f64],
) -> Result<Vec<f64>> {
    let channels = global.grid.channels;
    let batch = grad_encoding.len() / spec.output_width();
    let flat_grad = mlp_backward(store, prefix, spec, &cache.flat, batch, grad_encoding)?;
    let mut grad_grid = vec![0.0; global.grid.data.len()];
    let probes_per = cache.probes.len() / batch.max(1);
    for b in 0..batch {
        for pi in 0..probes_per {
            let st = &cache.probes[b * probes_per + pi];
            let src = &flat_grad[b * probes_per * channels + pi * channels..][..channels];
            for (corner, w) in st.corners.iter().zip(st.weights) {
                let dst = *corner as usize * channels;
                for (g, v) in grad_grid[dst..dst + channels].iter_mut().zip(src) {
                    *g += w * v;
                }
            }
        }
    }
    Ok(grad_grid)
}

/// Per-stencil-point predictions blended into the center values by inverse
/// distance: `out = sum_j w_j s_j / sum_j w_j`, `w_j = 1 / (d_j + eps)`.
pub fn aggregate_predict(
    store: &ParamStore,
    head_prefix: &str,
    head: &HeadConfig,
    stencil: &StencilBatch,
    local: &[f64],
    local_width: usize,
) -> Result<Vec<f64>> {
    let (values, _) = aggregate_with_values(store, head_prefix, head, stencil, local, local_width)?;
    Ok(values)
}

/// Forward pass that also returns the raw per-point predictions (needed by
/// the reverse pass and by tests).
pub fn aggregate_with_values(
    store: &ParamStore,
    head_prefix: &str,
    head: &HeadConfig,
    stencil: &StencilBatch,
    local: &[f64],
    local_width: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let batch = stencil.len();
    let size = stencil.stencil_size;
    let rows = batch * size;
    let latent_width = head.basis.output_width();

    let basis_out = mlp_forward(
        store,
        &format!("{head_prefix}.basis"),
        &head.basis,
        &stencil.features,
        rows,
    )?;
    let fusion_input = concat_latent_local(&basis_out, latent_width, local, local_width, batch, size);
    let s = mlp_forward(
        store,
        &format!("{head_prefix}.fusion"),
        &head.fusion,
        &fusion_input,
        rows,
    )?;

    let eps = stencil.idw_epsilon();
    let mut out = vec![0.0; batch];
    for b in 0..batch {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..size {
            let w = 1.0 / (stencil.distances[b * size + j] + eps);
            num += w * s[b * size + j];
            den += w;
        }
        out[b] = num / den;
    }
    Ok((out, s))
}

/// Reverse pass of [`aggregate_predict`]; recomputes the basis/fusion chain,
/// accumulates head parameter gradients, and returns the gradient with
/// respect to each center's local encoding (`batch x local_width`).
pub fn aggregate_backward(
    store: &mut ParamStore,
    head_prefix: &str,
    head: &HeadConfig,
    stencil: &StencilBatch,
    local: &[f64],
    local_width: usize,
    grad_out: &[f64],
) -> Result<Vec<f64>> {
    let batch = stencil.len();
    let size = stencil.stencil_size;
    let rows = batch * size;
    let latent_width = head.basis.output_width();
    let basis_prefix = format!("{head_prefix}.basis");
    let fusion_prefix = format!("{head_prefix}.fusion");

    let basis_out = mlp_forward(store, &basis_prefix, &head.basis, &stencil.features, rows)?;
    let fusion_input = concat_latent_local(&basis_out, latent_width, local, local_width, batch, size);

    // d out_b / d s_bj = w_bj / sum_k w_bk.
    let eps = stencil.idw_epsilon();
    let mut grad_s = vec![0.0; rows];
    for b in 0..batch {
        let mut den = 0.0;
        for j in 0..size {
            den += 1.0 / (stencil.distances[b * size + j] + eps);
        }
        for j in 0..size {
            let w = 1.0 / (stencil.distances[b * size + j] + eps);
            grad_s[b * size + j] = grad_out[b] * w / den;
        }
    }

    let grad_fusion_in =
        mlp_backward(store, &fusion_prefix, &head.fusion, &fusion_input, rows, &grad_s)?;

    let fusion_width = latent_width + local_width;
    let mut grad_basis_out = vec![0.0; rows * latent_width];
    let mut grad_local = vec![0.0; batch * local_width];
    for r in 0..rows {
        let row = &grad_fusion_in[r * fusion_width..(r + 1) * fusion_width];
        grad_basis_out[r * latent_width..(r + 1) * latent_width]
            .copy_from_slice(&row[..latent_width]);
        let b = r / size;
        for (g, v) in grad_local[b * local_width..(b + 1) * local_width]
            .iter_mut()
            .zip(&row[latent_width..])
        {
            *g += v;
        }
    }
    mlp_backward(store, &basis_prefix, &head.basis, &stencil.features, rows, &grad_basis_out)?;
    Ok(grad_local)
}

fn concat_latent_local(
    basis_out: &[f64],
    latent_width: usize,
    local: &[f64],
    local_width: usize,
    batch: usize,
    size: usize,
) -> Vec<f64> {
    let fusion_width = latent_width + local_width;
    let mut fusion_input = vec![0.0; batch * size * fusion_width];
    for b in 0..batch {
        let loc = &local[b * local_width..(b + 1) * local_width];
        for j in 0..size {
            let r = b * size + j;
            let dst = &mut fusion_input[r * fusion_width..(r + 1) * fusion_width];
            dst[..latent_width]
                .copy_from_slice(&basis_out[r * latent_width..(r + 1) * latent_width]);
            dst[latent_width..].copy_from_slice(loc);
        }
    }
    fusion_input
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::register_mlp;
    use crate::spatial::BoundingBox;
    use rand::SeedableRng;

    fn flat_sdf_grid(m: usize) -> StructuredGrid {
        let bbox = BoundingBox::new(Vec3::splat(-1.0), Vec3::splat(1.0)).unwrap();
        StructuredGrid::new(bbox, m, 4).unwrap()
    }

    fn volume_context<'a>(sdf: &'a StructuredGrid, surface: &'a TriangleSurface) -> StencilContext<'a> {
        StencilContext {
            surface,
            face_index: None,
            area_table: None,
            sdf,
            center_of_mass: Vec3::ZERO,
            radius: 0.25,
            neighbors: 4,
        }
    }

    #[test]
    fn volume_stencil_stays_in_ball_and_distances_match() {
        let sdf = flat_sdf_grid(4);
        let surface = TriangleSurface::empty();
        let ctx = volume_context(&sdf, &surface);
        let centers = vec![Vec3::new(0.1, -0.2, 0.3), Vec3::splat(0.0)];
        let batch = ctx
            .build(&centers, None, StencilMode::Volume, &[11, 12])
            .unwrap();
        assert_eq!(batch.stencil_size, 5);
        for b in 0..2 {
            assert_eq!(batch.distances[b * 5], 0.0);
            for j in 1..5 {
                let d = batch.distances[b * 5 + j];
                assert!(d <= ctx.radius + 1e-12);
                let pos = batch.points[b * 5 + j];
                assert!((pos - centers[b]).norm() - d < 1e-12);
            }
        }
    }

    #[test]
    fn p_zero_stencil_is_center_alone() {
        let sdf = flat_sdf_grid(4);
        let surface = TriangleSurface::empty();
        let mut ctx = volume_context(&sdf, &surface);
        ctx.neighbors = 0;
        let centers = vec![Vec3::new(0.5, 0.5, 0.5)];
        let batch = ctx.build(&centers, None, StencilMode::Volume, &[1]).unwrap();
        assert_eq!(batch.stencil_size, 1);
        assert_eq!(batch.points.len(), 1);
    }

    #[test]
    fn center_of_mass_direction_feature() {
        let sdf = flat_sdf_grid(4);
        let surface = TriangleSurface::empty();
        let mut ctx = volume_context(&sdf, &surface);
        ctx.neighbors = 0;
        // Point directly above the center of mass (origin): direction (0,0,1).
        let centers = vec![Vec3::new(0.0, 0.0, 0.7)];
        let batch = ctx.build(&centers, None, StencilMode::Volume, &[1]).unwrap();
        assert_eq!(&batch.features[4..7], &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn surface_mode_requires_geometry() {
        let sdf = flat_sdf_grid(4);
        let surface = TriangleSurface::empty();
        let ctx = volume_context(&sdf, &surface);
        let err = ctx.build(&[Vec3::ZERO], None, StencilMode::Surface, &[1]);
        assert!(matches!(err, Err(Error::EmptySurfaceSampling)));
    }

    fn tiny_global(m: usize, channels: usize) -> GlobalEncoding {
        let bbox = BoundingBox::new(Vec3::splat(-1.0), Vec3::splat(1.0)).unwrap();
        let mut grid = StructuredGrid::new(bbox, m, channels).unwrap();
        for (i, v) in grid.data.iter_mut().enumerate() {
            *v = (i % 17) as f64 * 0.1 - 0.8;
        }
        GlobalEncoding { grid, direct_channels: 0, propagated_channels: 0 }
    }

    #[test]
    fn constant_grid_probes_read_the_constant() {
        let bbox = BoundingBox::new(Vec3::splat(-1.0), Vec3::splat(1.0)).unwrap();
        let mut grid = StructuredGrid::new(bbox, 6, 2).unwrap();
        grid.data.fill(3.25);
        let global = GlobalEncoding { grid, direct_channels: 1, propagated_channels: 1 };
        let spec = MlpSpec::new(vec![27 * 2, 4], Activation::Relu);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        register_mlp(&mut store, "local", &spec, &mut rng);
        let centers = vec![Vec3::new(0.2, -0.3, 0.4)];
        let (enc, cache) =
            extract_local_encoding(&global, &centers, 3, &store, "local", &spec).unwrap();
        assert!(cache.flat.iter().all(|&v| (v - 3.25).abs() < 1e-12));
        // Output equals the MLP applied to the constant row.
        let direct = mlp_forward(&store, "local", &spec, &cache.flat, 1).unwrap();
        assert_eq!(enc, direct);
    }

    #[test]
    fn degenerate_single_probe_lattice() {
        let global = tiny_global(6, 3);
        let spec = MlpSpec::new(vec![3, 2], Activation::Relu);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        register_mlp(&mut store, "local", &spec, &mut rng);
        let centers = vec![Vec3::ZERO];
        let (enc, _) = extract_local_encoding(&global, &centers, 1, &store, "local", &spec).unwrap();
        assert_eq!(enc.len(), 2);
    }

    #[test]
    fn probe_lattice_offsets_are_cell_spaced() {
        let global = tiny_global(6, 1);
        let spec = MlpSpec::new(vec![27, 1], Activation::Relu);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        register_mlp(&mut store, "local", &spec, &mut rng);
        // Write a linear-in-x field so probe values reveal their x offsets.
        let mut g = global;
        for id in 0..g.grid.node_count() {
            g.grid.data[id] = g.grid.node_position_by_id(id).x;
        }
        let center = Vec3::new(0.1, 0.05, -0.2);
        let (_, cache) = extract_local_encoding(&g, &[center], 3, &store, "local", &spec).unwrap();
        let h = g.grid.cell_size.x;
        // flat layout: probe-major; probes ordered di, dj, dk. The x offset of
        // probe index pi is (pi / 9 - 1) * h.
        for pi in 0..27 {
            let expect = center.x + ((pi / 9) as f64 - 1.0) * h;
            assert!(
                (cache.flat[pi] - expect).abs() < 1e-12,
                "probe {pi}: {} vs {expect}",
                cache.flat[pi]
            );
        }
    }

    #[test]
    fn center_outside_domain_is_an_error() {
        let global = tiny_global(6, 2);
        let spec = MlpSpec::new(vec![54, 2], Activation::Relu);
        let store = ParamStore::new();
        let err = extract_local_encoding(
            &global,
            &[Vec3::splat(0.0), Vec3::splat(5.0)],
            3,
            &store,
            "local",
            &spec,
        );
        match err {
            Err(Error::PointOutsideDomain { index: 1, .. }) => {}
            other => panic!("expected out-of-domain error, got {other:?}"),
        }
    }

    fn idw_fixture(distances: Vec<f64>, s: Vec<f64>, radius: f64) -> f64 {
        let eps = IDW_EPSILON_FRACTION * radius;
        let mut num = 0.0;
        let mut den = 0.0;
        for (d, v) in distances.iter().zip(&s) {
            num += v / (d + eps);
            den += 1.0 / (d + eps);
        }
        num / den
    }

    #[test]
    fn idw_hand_computed_example() {
        // p = 2, d = (0, r, r), s = (1, 0, 0), eps = 0.01 r -> ~0.9806.
        let out = idw_fixture(vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 0.0], 1.0);
        assert!((out - 0.980584).abs() < 1e-5, "{out}");
    }

    #[test]
    fn aggregation_matches_idw_reference_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let config = PredictorConfig {
            probe_edge: 1,
            local_width: 4,
            local_hidden: vec![],
            stencil_neighbors: 3,
            stencil_radius_cells: 2.0,
            basis_widths: vec![8, 6],
            fusion_hidden: vec![8],
        };
        let head = HeadConfig::new("p", &config);
        let mut store = ParamStore::new();
        register_mlp(&mut store, "head.p.basis", &head.basis, &mut rng);
        register_mlp(&mut store, "head.p.fusion", &head.fusion, &mut rng);

        let sdf = flat_sdf_grid(4);
        let surface = TriangleSurface::empty();
        let mut ctx = volume_context(&sdf, &surface);
        ctx.neighbors = 3;
        let centers = vec![Vec3::new(0.1, 0.2, -0.1), Vec3::new(-0.4, 0.0, 0.3)];
        let stencil = ctx.build(&centers, None, StencilMode::Volume, &[3, 4]).unwrap();

        let local: Vec<f64> = (0..2 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (out, s) =
            aggregate_with_values(&store, "head.p", &head, &stencil, &local, 4).unwrap();
        for b in 0..2 {
            let d = stencil.distances[b * 4..(b + 1) * 4].to_vec();
            let sv = s[b * 4..(b + 1) * 4].to_vec();
            let expect = idw_fixture(d, sv.clone(), stencil.radius);
            assert!((out[b] - expect).abs() < 1e-12);
            // Convex combination bounds.
            let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = sv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(out[b] >= lo - 1e-12 && out[b] <= hi + 1e-12);
        }
    }

    #[test]
    fn aggregation_of_constant_values_is_that_constant() {
        // All s_j equal -> output equals the constant regardless of distances.
        let out = idw_fixture(vec![0.0, 0.3, 0.9, 1.4], vec![2.5; 4], 1.0);
        assert!((out - 2.5).abs() < 1e-12);
    }

    #[test]
    fn aggregate_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let config = PredictorConfig {
            probe_edge: 1,
            local_width: 3,
            local_hidden: vec![],
            stencil_neighbors: 2,
            stencil_radius_cells: 2.0,
            basis_widths: vec![6, 5],
            fusion_hidden: vec![7],
        };
        let head = HeadConfig::new("v", &config);
        let mut store = ParamStore::new();
        register_mlp(&mut store, "head.v.basis", &head.basis, &mut rng);
        register_mlp(&mut store, "head.v.fusion", &head.fusion, &mut rng);

        let sdf = flat_sdf_grid(4);
        let surface = TriangleSurface::empty();
        let mut ctx = volume_context(&sdf, &surface);
        ctx.neighbors = 2;
        let centers = vec![Vec3::new(0.1, 0.2, -0.1), Vec3::new(-0.2, 0.5, 0.0)];
        let stencil = ctx.build(&centers, None, StencilMode::Volume, &[7, 9]).unwrap();
        let local: Vec<f64> = (0..2 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let loss_fn = |s: &ParamStore| -> f64 {
            aggregate_predict(s, "head.v", &head, &stencil, &local, 3).unwrap().iter().sum()
        };
        let backward = |s: &mut ParamStore| {
            aggregate_backward(s, "head.v", &head, &stencil, &local, 3, &[1.0, 1.0]).unwrap();
        };
        crate::diffnet::gradcheck::loss_and_grads(&mut store, backward);
        let err = crate::diffnet::gradcheck::max_param_rel_error(&mut store, loss_fn, 1e-5);
        assert!(err < 1e-6, "max relative gradient error {err}");
    }

    #[test]
    fn local_encoding_gradient_reaches_the_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let global = tiny_global(6, 3);
        let spec = MlpSpec::new(vec![27 * 3, 4], Activation::Gelu);
        let mut store = ParamStore::new();
        register_mlp(&mut store, "local", &spec, &mut rng);
        let centers = vec![Vec3::new(0.2, -0.1, 0.05)];

        store.zero_grads();
        let (enc, cache) =
            extract_local_encoding(&global, &centers, 3, &store, "local", &spec).unwrap();
        let gout = vec![1.0; enc.len()];
        let grad_grid =
            extract_local_backward(&mut store, "local", &spec, &global, &cache, &gout).unwrap();

        // Finite-difference a few grid entries.
        let h = 1e-6;
        let mut checked = 0;
        for id in (0..global.grid.data.len()).step_by(37) {
            if grad_grid[id] == 0.0 {
                continue;
            }
            let mut g = global.clone();
            g.grid.data[id] += h;
            let (ep, _) = extract_local_encoding(&g, &centers, 3, &store, "local", &spec).unwrap();
            g.grid.data[id] -= 2.0 * h;
            let (em, _) = extract_local_encoding(&g, &centers, 3, &store, "local", &spec).unwrap();
            let fd = (ep.iter().sum::<f64>() - em.iter().sum::<f64>()) / (2.0 * h);
            assert!(
                (fd - grad_grid[id]).abs() < 1e-6 * fd.abs().max(1.0),
                "grid grad {id}: fd {fd} vs {}",
                grad_grid[id]
            );
            checked += 1;
        }
        assert!(checked > 3);
    }
}
