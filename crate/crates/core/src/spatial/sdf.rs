//! Signed distance fields on structured grids.

use rayon::prelude::*;

use super::grid::StructuredGrid;
use super::tri::TriangleBvh;
use crate::error::{Error, Result};
use crate::mesh::TriangleSurface;

/// Channel layout of an SDF grid: value plus its three gradient components.
pub const SDF_CHANNELS: usize = 4;

/// Fraction of grid nodes whose axis-ray parities may disagree before the
/// mesh is treated as non-watertight.
const DISAGREEMENT_LIMIT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfReport {
    pub disagreement_fraction: f64,
    /// True when sign voting was unreliable and all distances were left positive.
    pub unsigned_fallback: bool,
}

/// Compute the SDF and its central-difference gradient on the geometry of
/// `grid_spec` (its channel data is ignored).
///
/// The magnitude at each node is the exact minimum point-to-triangle
/// distance. The sign is negative inside, decided by majority vote of three
/// axis-ray crossing parities. If more than 5% of nodes have disagreeing
/// rays, the mesh is assumed open and all values stay positive.
pub fn compute_sdf_grid(
    surface: &TriangleSurface,
    grid_spec: &StructuredGrid,
) -> Result<(StructuredGrid, SdfReport)> {
    if surface.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let m = grid_spec.resolution;
    if m < 4 {
        return Err(Error::GridResolution { m, required: 4 });
    }
    let bvh = TriangleBvh::build(surface);
    let nodes = grid_spec.node_count();

    let per_node: Vec<(f64, bool, bool)> = (0..nodes)
        .into_par_iter()
        .map(|id| {
            let p = grid_spec.node_position_by_id(id);
            let d = bvh.distance(p);
            let vote = bvh.inside_vote(p);
            (d, vote.inside(), vote.disagrees())
        })
        .collect();

    let disagreements = per_node.iter().filter(|(_, _, dis)| *dis).count();
    let disagreement_fraction = disagreements as f64 / nodes as f64;
    let unsigned_fallback = disagreement_fraction > DISAGREEMENT_LIMIT;

    let mut out = grid_spec.like_geometry(SDF_CHANNELS);
    for (id, (d, inside, _)) in per_node.iter().enumerate() {
        out.data[id * SDF_CHANNELS] = if *inside && !unsigned_fallback { -d } else { *d };
    }
    fill_gradients(&mut out);
    Ok((out, SdfReport { disagreement_fraction, unsigned_fallback }))
}

/// Central differences on channel 0 into channels 1..4, one-sided at the
/// boundary faces.
fn fill_gradients(grid: &mut StructuredGrid) {
    let m = grid.resolution;
    let c = grid.channels;
    let value = |g: &StructuredGrid, i: usize, j: usize, k: usize| g.data[g.node_id(i, j, k) * c];
    let h = grid.cell_size;
    let mut grads = vec![0.0; grid.node_count() * 3];
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let id = grid.node_id(i, j, k);
                let diff = |lo: f64, hi: f64, span: f64| (hi - lo) / span;
                grads[id * 3] = match i {
                    0 => diff(value(grid, 0, j, k), value(grid, 1, j, k), h.x),
                    i if i == m - 1 => diff(value(grid, m - 2, j, k), value(grid, m - 1, j, k), h.x),
                    _ => diff(value(grid, i - 1, j, k), value(grid, i + 1, j, k), 2.0 * h.x),
                };
                grads[id * 3 + 1] = match j {
                    0 => diff(value(grid, i, 0, k), value(grid, i, 1, k), h.y),
                    j if j == m - 1 => diff(value(grid, i, m - 2, k), value(grid, i, m - 1, k), h.y),
                    _ => diff(value(grid, i, j - 1, k), value(grid, i, j + 1, k), 2.0 * h.y),
                };
                grads[id * 3 + 2] = match k {
                    0 => diff(value(grid, i, j, 0), value(grid, i, j, 1), h.z),
                    k if k == m - 1 => diff(value(grid, i, j, m - 2), value(grid, i, j, m - 1), h.z),
                    _ => diff(value(grid, i, j, k - 1), value(grid, i, j, k + 1), 2.0 * h.z),
                };
            }
        }
    }
    for id in 0..grid.node_count() {
        grid.data[id * c + 1] = grads[id * 3];
        grid.data[id * c + 2] = grads[id * 3 + 1];
        grid.data[id * c + 3] = grads[id * 3 + 2];
    }
}
