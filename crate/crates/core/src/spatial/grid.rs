//! Cell-centered structured grid over a bounding box.

use super::BoundingBox;
use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// `m x m x m x c` scalar field container. Nodes sit at cell centers:
/// `node(i,j,k) = min + (i+1/2, j+1/2, k+1/2) * cell_size`. Data is node-major
/// with channels contiguous per node, node id `(i*m + j)*m + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredGrid {
    pub bbox: BoundingBox,
    pub resolution: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub cell_size: Vec3,
}

/// The eight corner nodes and weights of one trilinear interpolation.
#[derive(Debug, Clone, Copy)]
pub struct TrilinearStencil {
    pub corners: [u32; 8],
    pub weights: [f64; 8],
}

impl StructuredGrid {
    pub fn new(bbox: BoundingBox, resolution: usize, channels: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::GridResolution { m: 0, required: 1 });
        }
        let cell_size = bbox.extent() / resolution as f64;
        Ok(StructuredGrid {
            bbox,
            resolution,
            channels,
            data: vec![0.0; resolution * resolution * resolution * channels],
            cell_size,
        })
    }

    /// Grid with identical geometry but a different channel count (zeroed).
    pub fn like_geometry(&self, channels: usize) -> StructuredGrid {
        StructuredGrid {
            bbox: self.bbox,
            resolution: self.resolution,
            channels,
            data: vec![0.0; self.node_count() * channels],
            cell_size: self.cell_size,
        }
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.resolution * self.resolution * self.resolution
    }

    #[inline]
    pub fn node_id(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution + j) * self.resolution + k
    }

    #[inline]
    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.bbox.min
            + Vec3::new(
                (i as f64 + 0.5) * self.cell_size.x,
                (j as f64 + 0.5) * self.cell_size.y,
                (k as f64 + 0.5) * self.cell_size.z,
            )
    }

    #[inline]
    pub fn node_position_by_id(&self, id: usize) -> Vec3 {
        let m = self.resolution;
        let k = id % m;
        let j = (id / m) % m;
        let i = id / (m * m);
        self.node_position(i, j, k)
    }

    #[inline]
    pub fn value(&self, node: usize, channel: usize) -> f64 {
        self.data[node * self.channels + channel]
    }

    #[inline]
    pub fn value_mut(&mut self, node: usize, channel: usize) -> &mut f64 {
        &mut self.data[node * self.channels + channel]
    }

    /// Continuous node-space coordinate of `p` per axis: 0 at the first node
    /// center, `m-1` at the last.
    #[inline]
    fn node_coord(&self, p: Vec3) -> Vec3 {
        Vec3::new(
            (p.x - self.bbox.min.x) / self.cell_size.x - 0.5,
            (p.y - self.bbox.min.y) / self.cell_size.y - 0.5,
            (p.z - self.bbox.min.z) / self.cell_size.z - 0.5,
        )
    }

    /// Trilinear interpolation stencil with coordinates clamped to the node
    /// range, so queries outside the box replicate boundary values.
    pub fn trilinear_clamped(&self, p: Vec3) -> TrilinearStencil {
        let m = self.resolution;
        let u = self.node_coord(p);
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let ua = u[a].clamp(0.0, (m - 1) as f64);
            let i0 = (ua.floor() as usize).min(m.saturating_sub(2));
            base[a] = i0;
            frac[a] = if m == 1 { 0.0 } else { ua - i0 as f64 };
        }
        let mut corners = [0u32; 8];
        let mut weights = [0f64; 8];
        for c in 0..8 {
            let di = c >> 2 & 1;
            let dj = c >> 1 & 1;
            let dk = c & 1;
            let i = (base[0] + di).min(m - 1);
            let j = (base[1] + dj).min(m - 1);
            let k = (base[2] + dk).min(m - 1);
            corners[c] = self.node_id(i, j, k) as u32;
            let wx = if di == 0 { 1.0 - frac[0] } else { frac[0] };
            let wy = if dj == 0 { 1.0 - frac[1] } else { frac[1] };
            let wz = if dk == 0 { 1.0 - frac[2] } else { frac[2] };
            weights[c] = wx * wy * wz;
        }
        TrilinearStencil { corners, weights }
    }

    /// Like [`Self::trilinear_clamped`] but returns `None` for points outside
    /// the bounding box (callers treat that as a zero contribution).
    pub fn trilinear_zero_outside(&self, p: Vec3) -> Option<TrilinearStencil> {
        if self.bbox.contains(p) {
            Some(self.trilinear_clamped(p))
        } else {
            None
        }
    }

    /// Interpolate all channels at `p` (clamped at the boundary) into `out`.
    pub fn sample_clamped(&self, p: Vec3, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels);
        let st = self.trilinear_clamped(p);
        out.fill(0.0);
        for (corner, w) in st.corners.iter().zip(st.weights) {
            let off = *corner as usize * self.channels;
            for (o, v) in out.iter_mut().zip(&self.data[off..off + self.channels]) {
                *o += w * v;
            }
        }
    }

    /// Interpolate one channel at `p` (clamped).
    pub fn sample_channel_clamped(&self, p: Vec3, channel: usize) -> f64 {
        let st = self.trilinear_clamped(p);
        st.corners
            .iter()
            .zip(st.weights)
            .map(|(corner, w)| w * self.value(*corner as usize, channel))
            .sum()
    }
}
