//! Global geometry representation: multi-scale point-convolution projection
//! of the geometry cloud onto structured grids, iterative CNN propagation
//! from the surface box into the computational domain, and assembly with the
//! SDF channels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffnet::{
    conv_block_backward, conv_block_forward, mlp_backward, mlp_forward, ConvBlockCache, MlpSpec,
    ParamStore,
};
use crate::error::{Error, Result};
use crate::spatial::{NeighborIndex, StructuredGrid, TrilinearStencil, SDF_CHANNELS};

/// Width of one kernel-MLP input row: query position (3), neighbor position
/// (3), distance (1).
pub const KERNEL_INPUT_WIDTH: usize = 7;

/// Configuration of the geometry encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Grid resolution per axis (shared by surface and domain grids).
    pub resolution: usize,
    /// Feature channels produced per kernel scale.
    pub channels_per_scale: usize,
    /// Kernel radii as fractions of the surface-box diagonal, strictly increasing.
    pub radii: Vec<f64>,
    /// Neighbor cap per kernel query.
    pub max_neighbors: usize,
    /// CNN propagation iterations.
    pub propagation_iters: usize,
    /// Optional fixed-point stopping tolerance on the support residual.
    pub stop_tolerance: Option<f64>,
    /// Hidden widths of every kernel MLP.
    pub kernel_hidden: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            resolution: 32,
            channels_per_scale: 8,
            radii: vec![0.05, 0.15, 0.40],
            max_neighbors: 32,
            propagation_iters: 3,
            stop_tolerance: None,
            kernel_hidden: vec![32],
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 || self.resolution % 2 != 0 {
            return Err(Error::config(format!(
                "encoder resolution must be even and >= 8, got {}",
                self.resolution
            )));
        }
        if self.channels_per_scale == 0 {
            return Err(Error::config("channels_per_scale must be >= 1"));
        }
        if self.radii.is_empty() || !self.radii.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("radii must be non-empty and strictly increasing"));
        }
        if self.radii.iter().any(|&r| r <= 0.0) {
            return Err(Error::config("radii must be positive"));
        }
        if self.max_neighbors == 0 {
            return Err(Error::config("max_neighbors must be >= 1"));
        }
        if self.propagation_iters == 0 {
            return Err(Error::config("propagation_iters must be >= 1"));
        }
        Ok(())
    }

    /// Channels of the direct (or propagated) feature block.
    pub fn scale_channels(&self) -> usize {
        self.channels_per_scale * self.radii.len()
    }

    /// Channels of the assembled global encoding.
    pub fn global_channels(&self) -> usize {
        2 * self.scale_channels() + SDF_CHANNELS
    }

    pub fn kernel_spec(&self) -> MlpSpec {
        let mut widths = vec![KERNEL_INPUT_WIDTH];
        widths.extend_from_slice(&self.kernel_hidden);
        widths.push(self.channels_per_scale);
        MlpSpec::new(widths, crate::diffnet::Activation::Relu)
    }
}

/// The assembled per-geometry feature grid over the computational domain.
/// Channel order: `[direct | propagated | sdf | grad sdf]`.
#[derive(Debug, Clone)]
pub struct GlobalEncoding {
    pub grid: StructuredGrid,
    pub direct_channels: usize,
    pub propagated_channels: usize,
}

impl GlobalEncoding {
    /// Offset of the SDF value channel.
    pub fn sdf_channel(&self) -> usize {
        self.direct_channels + self.propagated_channels
    }
}

/// Per-projection cache: kernel input rows plus the rows-per-node layout.
#[derive(Debug, Clone)]
pub struct ProjectionCache {
    /// `pair_count x 7` kernel inputs, grouped by node in ball-query order.
    pub rows: Vec<f64>,
    /// Prefix offsets, length `node_count + 1`.
    pub node_offsets: Vec<u32>,
}

impl ProjectionCache {
    pub fn pair_count(&self) -> usize {
        self.rows.len() / KERNEL_INPUT_WIDTH
    }
}

/// Project a geometry point cloud onto a grid with one learned kernel: for
/// each grid node the kernel MLP is summed over the ball-query neighborhood
/// (empty neighborhoods contribute zero).
pub fn project_points_to_grid(
    index: &NeighborIndex,
    grid: &StructuredGrid,
    radius: f64,
    max_neighbors: usize,
    store: &ParamStore,
    prefix: &str,
    spec: &MlpSpec,
) -> Result<(Vec<f64>, ProjectionCache)> {
    let nodes = grid.node_count();
    let channels = spec.output_width();

    let neighborhoods: Vec<Vec<(u32, f64)>> = if index.is_empty() {
        vec![Vec::new(); nodes]
    } else {
        (0..nodes)
            .into_par_iter()
            .map(|id| index.ball_query(grid.node_position_by_id(id), radius, max_neighbors))
            .collect()
    };

    let mut node_offsets = Vec::with_capacity(nodes + 1);
    node_offsets.push(0u32);
    let mut total = 0u32;
    for n in &neighborhoods {
        total += n.len() as u32;
        node_offsets.push(total);
    }

    let mut rows = vec![0.0; total as usize * KERNEL_INPUT_WIDTH];
    let points = index.points();
    let mut r = 0;
    for (id, neigh) in neighborhoods.iter().enumerate() {
        let node_pos = grid.node_position_by_id(id);
        for &(pt, dist) in neigh {
            let row = &mut rows[r * KERNEL_INPUT_WIDTH..(r + 1) * KERNEL_INPUT_WIDTH];
            let p = points[pt as usize];
            row[0] = node_pos.x;
            row[1] = node_pos.y;
            row[2] = node_pos.z;
            row[3] = p.x;
            row[4] = p.y;
            row[5] = p.z;
            row[6] = dist;
            r += 1;
        }
    }

    let mut features = vec![0.0; nodes * channels];
    if total > 0 {
        let outputs = mlp_forward(store, prefix, spec, &rows, total as usize)?;
        features
            .par_chunks_mut(channels)
            .enumerate()
            .for_each(|(id, feat)| {
                let (start, end) = (node_offsets[id] as usize, node_offsets[id + 1] as usize);
                for row in start..end {
                    for (f, o) in feat.iter_mut().zip(&outputs[row * channels..(row + 1) * channels]) {
                        *f += o;
                    }
                }
            });
    }
    Ok((features, ProjectionCache { rows, node_offsets }))
}

/// Reverse pass of [`project_points_to_grid`]: broadcasts per-node feature
/// gradients to the kernel rows and accumulates kernel parameter gradients.
pub fn project_points_to_grid_backward(
    store: &mut ParamStore,
    prefix: &str,
    spec: &MlpSpec,
    cache: &ProjectionCache,
    grad_features: &[f64],
) -> Result<()> {
    let pairs = cache.pair_count();
    if pairs == 0 {
        return Ok(());
    }
    let channels = spec.output_width();
    let nodes = cache.node_offsets.len() - 1;
    debug_assert_eq!(grad_features.len(), nodes * channels);
    let mut grad_rows = vec![0.0; pairs * channels];
    for id in 0..nodes {
        let (start, end) = (cache.node_offsets[id] as usize, cache.node_offsets[id + 1] as usize);
        let g = &grad_features[id * channels..(id + 1) * channels];
        for row in start..end {
            grad_rows[row * channels..(row + 1) * channels].copy_from_slice(g);
        }
    }
    mlp_backward(store, prefix, spec, &cache.rows, pairs, &grad_rows)?;
    Ok(())
}

/// Everything the propagation backward pass needs.
#[derive(Debug, Clone)]
pub struct PropagationCache {
    /// Surface-box features resampled onto the domain grid (iteration state 0).
    pub resampled: Vec<f64>,
    /// Per-domain-node interpolation stencil into the surface grid (`None`
    /// outside the surface box).
    stencils: Vec<Option<TrilinearStencil>>,
    conv_caches: Vec<ConvBlockCache>,
    /// Domain nodes lying inside the surface box.
    support: Vec<u32>,
    pub iterations_used: usize,
    pub residual_history: Vec<f64>,
    channels: usize,
}

/// Propagate surface-box grid features to the domain grid: trilinear
/// resampling into domain index space (zero outside the surface box),
/// followed by up to `iters` applications of the shared conv block. With a
/// tolerance set, iteration stops early once the RMS mismatch between the
/// resampled features and the state over the surface-box support drops
/// below it.
#[allow(clippy::too_many_arguments)]
pub fn propagate_surface_to_domain(
    store: &ParamStore,
    prefix: &str,
    surface_features: &[f64],
    channels: usize,
    surface_grid: &StructuredGrid,
    domain_grid: &StructuredGrid,
    iters: usize,
    tol: Option<f64>,
) -> Result<(Vec<f64>, PropagationCache)> {
    if surface_grid.resolution != domain_grid.resolution {
        return Err(Error::ShapeMismatch {
            context: "propagate_surface_to_domain grids".into(),
            expected: vec![surface_grid.resolution],
            actual: vec![domain_grid.resolution],
        });
    }
    let nodes = domain_grid.node_count();
    debug_assert_eq!(surface_features.len(), nodes * channels);

    let stencils: Vec<Option<TrilinearStencil>> = (0..nodes)
        .into_par_iter()
        .map(|id| surface_grid.trilinear_zero_outside(domain_grid.node_position_by_id(id)))
        .collect();
    let support: Vec<u32> =
        stencils.iter().enumerate().filter(|(_, s)| s.is_some()).map(|(i, _)| i as u32).collect();

    let mut resampled = vec![0.0; nodes * channels];
    resampled
        .par_chunks_mut(channels)
        .zip(stencils.par_iter())
        .for_each(|(out, stencil)| {
            if let Some(st) = stencil {
                for (corner, w) in st.corners.iter().zip(st.weights) {
                    let src = *corner as usize * channels;
                    for (o, v) in out.iter_mut().zip(&surface_features[src..src + channels]) {
                        *o += w * v;
                    }
                }
            }
        });

    let m = domain_grid.resolution;
    let mut state = resampled.clone();
    let mut conv_caches = Vec::with_capacity(iters);
    let mut residual_history = Vec::with_capacity(iters);
    for _ in 0..iters {
        let (next, cache) = conv_block_forward(store, prefix, &state, m, channels)?;
        state = next;
        conv_caches.push(cache);
        let residual = support_rms(&resampled, &state, &support, channels);
        residual_history.push(residual);
        if let Some(t) = tol {
            if residual < t {
                break;
            }
        }
    }

    let iterations_used = conv_caches.len();
    Ok((
        state,
        PropagationCache {
            resampled,
            stencils,
            conv_caches,
            support,
            iterations_used,
            residual_history,
            channels,
        },
    ))
}

/// RMS difference over the support nodes and channels; 0 for empty support.
fn support_rms(reference: &[f64], state: &[f64], support: &[u32], channels: usize) -> f64 {
    if support.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for &id in support {
        let off = id as usize * channels;
        for ch in 0..channels {
            let d = reference[off + ch] - state[off + ch];
            acc += d * d;
        }
    }
    (acc / (support.len() * channels) as f64).sqrt()
}

/// Reverse pass of [`propagate_surface_to_domain`]; returns the gradient with
/// respect to the surface-box features.
pub fn propagate_backward(
    store: &mut ParamStore,
    prefix: &str,
    cache: &PropagationCache,
    grad_out: &[f64],
) -> Result<Vec<f64>> {
    let mut g = grad_out.to_vec();
    for conv_cache in cache.conv_caches.iter().rev() {
        g = conv_block_backward(store, prefix, conv_cache, &g)?;
    }
    let channels = cache.channels;
    let mut grad_surface = vec![0.0; g.len()];
    for (id, stencil) in cache.stencils.iter().enumerate() {
        if let Some(st) = stencil {
            let src = &g[id * channels..(id + 1) * channels];
            for (corner, w) in st.corners.iter().zip(st.weights) {
                let dst = *corner as usize * channels;
                for (out, v) in grad_surface[dst..dst + channels].iter_mut().zip(src) {
                    *out += w * v;
                }
            }
        }
    }
    Ok(grad_surface)
}

/// Concatenate the direct projection, the propagated features, and the SDF
/// channels into the global encoding, in that fixed channel order.
pub fn assemble_global_encoding(
    direct: &[f64],
    direct_channels: usize,
    propagated: &[f64],
    propagated_channels: usize,
    sdf_grid: &StructuredGrid,
) -> Result<GlobalEncoding> {
    let nodes = sdf_grid.node_count();
    if sdf_grid.channels != SDF_CHANNELS
        || direct.len() != nodes * direct_channels
        || propagated.len() != nodes * propagated_channels
    {
        return Err(Error::ShapeMismatch {
            context: "assemble_global_encoding".into(),
            expected: vec![nodes, direct_channels, propagated_channels, SDF_CHANNELS],
            actual: vec![direct.len(), propagated.len(), sdf_grid.data.len()],
        });
    }
    let channels = direct_channels + propagated_channels + SDF_CHANNELS;
    let mut grid = sdf_grid.like_geometry(channels);
    grid.data
        .par_chunks_mut(channels)
        .enumerate()
        .for_each(|(id, out)| {
            out[..direct_channels]
                .copy_from_slice(&direct[id * direct_channels..(id + 1) * direct_channels]);
            out[direct_channels..direct_channels + propagated_channels].copy_from_slice(
                &propagated[id * propagated_channels..(id + 1) * propagated_channels],
            );
            out[direct_channels + propagated_channels..]
                .copy_from_slice(&sdf_grid.data[id * SDF_CHANNELS..(id + 1) * SDF_CHANNELS]);
        });
    Ok(GlobalEncoding { grid, direct_channels, propagated_channels })
}

/// Split a global-encoding gradient back into its direct and propagated
/// blocks (the SDF channels carry no gradient).
pub fn split_encoding_gradient(
    encoding: &GlobalEncoding,
    grad: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let nodes = encoding.grid.node_count();
    let channels = encoding.grid.channels;
    let dc = encoding.direct_channels;
    let pc = encoding.propagated_channels;
    let mut grad_direct = vec![0.0; nodes * dc];
    let mut grad_prop = vec![0.0; nodes * pc];
    for id in 0..nodes {
        let row = &grad[id * channels..(id + 1) * channels];
        grad_direct[id * dc..(id + 1) * dc].copy_from_slice(&row[..dc]);
        grad_prop[id * pc..(id + 1) * pc].copy_from_slice(&row[dc..dc + pc]);
    }
    (grad_direct, grad_prop)
}
