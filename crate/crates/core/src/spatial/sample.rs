//! Point-sampling schemes: area-weighted surface sampling and uniform volume
//! sampling with geometry rejection.

use rand::Rng;

use super::tri::TriangleBvh;
use super::BoundingBox;
use crate::error::{Error, Result};
use crate::mesh::TriangleSurface;
use crate::vec3::Vec3;

/// Oversampling bound of the rejection loop in [`sample_volume_uniform`].
const REJECTION_OVERSAMPLE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub position: Vec3,
    pub normal: Vec3,
    /// `total_area / count`; identical for every sample of one draw.
    pub area_weight: f64,
    pub face: u32,
}

/// Cumulative face-area table for repeated area-weighted face picks.
#[derive(Debug, Clone)]
pub struct AreaTable {
    cumulative: Vec<f64>,
    total: f64,
}

impl AreaTable {
    pub fn new(areas: &[f64]) -> Self {
        let mut cumulative = Vec::with_capacity(areas.len());
        let mut total = 0.0;
        for &a in areas {
            total += a;
            cumulative.push(total);
        }
        AreaTable { cumulative, total }
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Index of the face owning the cumulative coordinate `u * total`, u in [0,1).
    pub fn pick(&self, u: f64) -> usize {
        let target = u * self.total;
        self.cumulative.partition_point(|&c| c <= target).min(self.cumulative.len() - 1)
    }
}

/// Uniform barycentric point on face `f` of the surface.
pub fn barycentric_point(surface: &TriangleSurface, f: usize, u1: f64, u2: f64) -> Vec3 {
    let (a, b, c) = surface.triangle(f);
    let s = u1.sqrt();
    a * (1.0 - s) + b * (s * (1.0 - u2)) + c * (s * u2)
}

/// Draw `count` points with density proportional to face area: pick a face
/// with probability ∝ area, then a uniform barycentric point on it.
pub fn sample_surface_area_weighted<R: Rng>(
    surface: &TriangleSurface,
    count: usize,
    rng: &mut R,
) -> Result<Vec<SurfaceSample>> {
    if surface.is_empty() {
        return Err(Error::EmptySurfaceSampling);
    }
    let table = AreaTable::new(&surface.face_area);
    let weight = table.total() / count as f64;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let f = table.pick(rng.gen::<f64>());
        let position = barycentric_point(surface, f, rng.gen::<f64>(), rng.gen::<f64>());
        out.push(SurfaceSample {
            position,
            normal: surface.face_normal[f],
            area_weight: weight,
            face: f as u32,
        });
    }
    Ok(out)
}

/// Uniform-density surface cloud of exactly `count` points with equal
/// per-point area `total / count`: samples are allocated to faces
/// proportionally to area (largest-remainder rounding) and drawn uniformly
/// within each face. Compared to i.i.d. area-weighted draws this is
/// stratified, so surface integrals over the cloud converge at the facet
/// scale instead of the Monte-Carlo rate.
pub fn sample_surface_uniform_cloud<R: Rng>(
    surface: &TriangleSurface,
    count: usize,
    rng: &mut R,
) -> Result<Vec<SurfaceSample>> {
    if surface.is_empty() {
        return Err(Error::EmptySurfaceSampling);
    }
    let total: f64 = surface.total_area();
    let faces = surface.faces.len();
    let mut alloc = vec![0usize; faces];
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(faces);
    let mut assigned = 0;
    for f in 0..faces {
        let quota = count as f64 * surface.face_area[f] / total;
        let floor = quota.floor() as usize;
        alloc[f] = floor;
        assigned += floor;
        remainders.push((quota - floor as f64, f));
    }
    remainders.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, f) in remainders.iter().take(count.saturating_sub(assigned)) {
        alloc[f] += 1;
    }

    let weight = total / count as f64;
    let mut out = Vec::with_capacity(count);
    for (f, &n) in alloc.iter().enumerate() {
        for _ in 0..n {
            let position = barycentric_point(surface, f, rng.gen::<f64>(), rng.gen::<f64>());
            out.push(SurfaceSample {
                position,
                normal: surface.face_normal[f],
                area_weight: weight,
                face: f as u32,
            });
        }
    }
    Ok(out)
}

/// Draw `count` i.i.d. uniform points in `bbox`, rejecting points inside the
/// geometry (majority axis-ray parity, the same sign test as the SDF).
///
/// The loop aborts once `100 * count` candidates have been consumed.
pub fn sample_volume_uniform<R: Rng>(
    bbox: BoundingBox,
    surface: &TriangleSurface,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec3>> {
    let bvh = (!surface.is_empty()).then(|| TriangleBvh::build(surface));
    sample_volume_uniform_with(bbox, bvh.as_ref(), count, rng)
}

/// [`sample_volume_uniform`] over a prebuilt BVH (reused across draws).
pub fn sample_volume_uniform_with<R: Rng>(
    bbox: BoundingBox,
    bvh: Option<&TriangleBvh>,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec3>> {
    let extent = bbox.extent();
    let mut out = Vec::with_capacity(count);
    let budget = REJECTION_OVERSAMPLE * count;
    let mut candidates = 0;
    while out.len() < count {
        if candidates >= budget {
            return Err(Error::RejectionBoundExceeded {
                requested: count,
                accepted: out.len(),
                candidates,
            });
        }
        candidates += 1;
        let p = bbox.min
            + Vec3::new(
                rng.gen::<f64>() * extent.x,
                rng.gen::<f64>() * extent.y,
                rng.gen::<f64>() * extent.z,
            );
        let inside = bvh.map(|b| b.inside_vote(p).inside()).unwrap_or(false);
        if !inside {
            out.push(p);
        }
    }
    Ok(out)
}
