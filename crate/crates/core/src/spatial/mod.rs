//! Bounding boxes, structured grids, SDF fields, neighbor queries, and
//! point-sampling schemes.

mod grid;
mod neighbors;
mod sample;
mod sdf;
mod tri;

pub use grid::{StructuredGrid, TrilinearStencil};
pub use neighbors::{ball_query_brute_force, NeighborIndex};
pub use sample::{
    barycentric_point, sample_surface_area_weighted, sample_surface_uniform_cloud,
    sample_volume_uniform, sample_volume_uniform_with, AreaTable, SurfaceSample,
};
pub use sdf::{compute_sdf_grid, SdfReport, SDF_CHANNELS};
pub use tri::{brute_force_distance, point_triangle_dist_sq, InsideVote, TriangleBvh};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriangleSurface;
use crate::vec3::Vec3;

/// Axis-aligned box; `max` strictly exceeds `min` on every axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl BoundingBox {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if max.x > min.x && max.y > min.y && max.z > min.z {
            Ok(BoundingBox { min, max })
        } else {
            Err(Error::DegenerateBox)
        }
    }

    /// Tight box around a surface's vertices.
    pub fn of_surface(surface: &TriangleSurface) -> Result<Self> {
        let (lo, hi) = surface.vertex_bounds().ok_or(Error::EmptyMesh)?;
        Self::new(lo, hi)
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }
}

/// Coordinate axis; the flow direction is the positive side of the axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn unit(self) -> Vec3 {
        match self {
            Axis::X => Vec3::new(1.0, 0.0, 0.0),
            Axis::Y => Vec3::new(0.0, 1.0, 0.0),
            Axis::Z => Vec3::new(0.0, 0.0, 1.0),
        }
    }
}

/// Domain trimming factors in units of the surface-box extent per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimFactors {
    /// Extension past the surface box in the flow direction, in flow-axis lengths.
    pub downstream: f64,
    /// Extension against the flow direction, in flow-axis lengths.
    pub upstream: f64,
    /// Total lateral extension per transverse axis, split half to each side.
    pub lateral: f64,
}

impl Default for TrimFactors {
    fn default() -> Self {
        TrimFactors { downstream: 2.0, upstream: 1.0, lateral: 1.0 }
    }
}

/// Computational-domain box: the surface box stretched downstream/upstream
/// along the flow axis and symmetrically on the transverse axes.
pub fn make_domain_box(surface_box: BoundingBox, flow: Axis, trim: TrimFactors) -> BoundingBox {
    let extent = surface_box.extent();
    let mut min = surface_box.min;
    let mut max = surface_box.max;
    for axis in 0..3 {
        let len = match axis {
            0 => extent.x,
            1 => extent.y,
            _ => extent.z,
        };
        if axis == flow.index() {
            min.set(axis, min[axis] - trim.upstream * len);
            max.set(axis, max[axis] + trim.downstream * len);
        } else {
            min.set(axis, min[axis] - 0.5 * trim.lateral * len);
            max.set(axis, max[axis] + 0.5 * trim.lateral * len);
        }
    }
    BoundingBox { min, max }
}
