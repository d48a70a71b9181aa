//! Triangle primitives and a small AABB tree: exact point-triangle distance,
//! axis-ray crossing counts, and parity-based inside tests.

use super::Axis;
use crate::mesh::TriangleSurface;
use crate::vec3::Vec3;

/// Squared distance from `p` to triangle `(a, b, c)` (closest-point algorithm
/// over the triangle's Voronoi regions).
pub fn point_triangle_dist_sq(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;

    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm_sq(); // vertex a
    }

    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm_sq(); // vertex b
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (ap - ab * v).norm_sq(); // edge ab
    }

    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm_sq(); // vertex c
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (ap - ac * w).norm_sq(); // edge ac
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (bp - (c - b) * w).norm_sq(); // edge bc
    }

    // Interior: project onto the triangle plane.
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (ap - (ab * v + ac * w)).norm_sq()
}

const RAY_EPS: f64 = 1e-12;

/// Crossing weight of the ray `p + t * axis` (t > 0) against the triangle:
/// 1 for an interior hit, 1/2 for a hit exactly on the triangle boundary
/// (a shared edge then contributes one full crossing across its two faces),
/// 0 for a miss.
fn axis_ray_crossing_weight(p: Vec3, axis: Axis, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let dir = axis.unit();
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(e2);
    let det = e1.dot(h);
    if det.abs() < RAY_EPS {
        return 0.0; // parallel or degenerate
    }
    let inv = 1.0 / det;
    let s = p - a;
    let u = s.dot(h) * inv;
    if !(0.0..=1.0).contains(&u) {
        return 0.0;
    }
    let q = s.cross(e1);
    let v = dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return 0.0;
    }
    if e2.dot(q) * inv <= RAY_EPS {
        return 0.0;
    }
    if u == 0.0 || v == 0.0 || u + v == 1.0 {
        0.5
    } else {
        1.0
    }
}

/// Parity votes of the three axis rays cast from one point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InsideVote {
    pub odd_axes: u8,
}

impl InsideVote {
    /// Majority of the three rays report an odd crossing count.
    pub fn inside(self) -> bool {
        self.odd_axes >= 2
    }

    /// The rays did not agree; a symptom of open meshes or grazing rays.
    pub fn disagrees(self) -> bool {
        self.odd_axes == 1 || self.odd_axes == 2
    }
}

#[derive(Debug, Clone)]
struct BvhNode {
    lo: Vec3,
    hi: Vec3,
    // Leaf when count > 0: faces tri_order[start..start+count].
    left: u32,
    right: u32,
    start: u32,
    count: u32,
}

/// Axis-aligned bounding-box tree over the faces of a surface. Immutable
/// after construction; queries are safe to run concurrently.
#[derive(Debug, Clone)]
pub struct TriangleBvh {
    nodes: Vec<BvhNode>,
    // Flattened triangle corners in build order, 3 per leaf slot.
    corners: Vec<Vec3>,
}

const LEAF_SIZE: usize = 8;

impl TriangleBvh {
    pub fn build(surface: &TriangleSurface) -> Self {
        let n = surface.faces.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let centroids: Vec<Vec3> =
            (0..n).map(|f| surface.face_center[f]).collect();
        let mut nodes = Vec::new();
        if n > 0 {
            build_node(surface, &centroids, &mut order, 0, n, &mut nodes);
        }
        let corners = order
            .iter()
            .flat_map(|&f| {
                let (a, b, c) = surface.triangle(f as usize);
                [a, b, c]
            })
            .collect();
        TriangleBvh { nodes, corners }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    fn leaf_triangle(&self, slot: usize) -> (Vec3, Vec3, Vec3) {
        (self.corners[slot * 3], self.corners[slot * 3 + 1], self.corners[slot * 3 + 2])
    }

    /// Exact minimum distance from `p` to the surface. Equals the brute-force
    /// minimum over all faces bit-for-bit: pruning only skips faces that
    /// cannot improve the minimum.
    pub fn distance(&self, p: Vec3) -> f64 {
        self.distance_sq(p).sqrt()
    }

    pub fn distance_sq(&self, p: Vec3) -> f64 {
        if self.nodes.is_empty() {
            return f64::INFINITY;
        }
        let mut best = f64::INFINITY;
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if aabb_dist_sq(p, node.lo, node.hi) > best {
                continue;
            }
            if node.count > 0 {
                for slot in node.start..node.start + node.count {
                    let (a, b, c) = self.leaf_triangle(slot as usize);
                    let d2 = point_triangle_dist_sq(p, a, b, c);
                    if d2 < best {
                        best = d2;
                    }
                }
            } else {
                // Visit the nearer child last so it is popped first.
                let l = node.left as usize;
                let r = node.right as usize;
                let dl = aabb_dist_sq(p, self.nodes[l].lo, self.nodes[l].hi);
                let dr = aabb_dist_sq(p, self.nodes[r].lo, self.nodes[r].hi);
                if dl <= dr {
                    stack.push(node.right);
                    stack.push(node.left);
                } else {
                    stack.push(node.left);
                    stack.push(node.right);
                }
            }
        }
        best
    }

    /// Summed crossing weight of the ray `p + t * axis`, `t > 0` (half-integer
    /// when the ray grazes triangle boundaries).
    pub fn axis_ray_crossings(&self, p: Vec3, axis: Axis) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        let ai = axis.index();
        let (b0, b1) = match axis {
            Axis::X => (1, 2),
            Axis::Y => (0, 2),
            Axis::Z => (0, 1),
        };
        let mut count = 0.0;
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.hi[ai] < p[ai]
                || p[b0] < node.lo[b0]
                || p[b0] > node.hi[b0]
                || p[b1] < node.lo[b1]
                || p[b1] > node.hi[b1]
            {
                continue;
            }
            if node.count > 0 {
                for slot in node.start..node.start + node.count {
                    let (a, b, c) = self.leaf_triangle(slot as usize);
                    count += axis_ray_crossing_weight(p, axis, a, b, c);
                }
            } else {
                stack.push(node.left);
                stack.push(node.right);
            }
        }
        count
    }

    /// Cast the three axis rays from `p` and tally odd parities.
    pub fn inside_vote(&self, p: Vec3) -> InsideVote {
        let mut odd = 0u8;
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let count = self.axis_ray_crossings(p, axis);
            if count - 2.0 * (count / 2.0).floor() >= 1.0 {
                odd += 1;
            }
        }
        InsideVote { odd_axes: odd }
    }
}

#[inline]
fn aabb_dist_sq(p: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let dx = (lo.x - p.x).max(0.0).max(p.x - hi.x);
    let dy = (lo.y - p.y).max(0.0).max(p.y - hi.y);
    let dz = (lo.z - p.z).max(0.0).max(p.z - hi.z);
    dx * dx + dy * dy + dz * dz
}

fn build_node(
    surface: &TriangleSurface,
    centroids: &[Vec3],
    order: &mut [u32],
    start: usize,
    len: usize,
    nodes: &mut Vec<BvhNode>,
) -> u32 {
    let slice = &mut order[start..start + len];
    let mut lo = Vec3::splat(f64::INFINITY);
    let mut hi = Vec3::splat(f64::NEG_INFINITY);
    let mut clo = Vec3::splat(f64::INFINITY);
    let mut chi = Vec3::splat(f64::NEG_INFINITY);
    for &f in slice.iter() {
        let (a, b, c) = surface.triangle(f as usize);
        for v in [a, b, c] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        clo = clo.min(centroids[f as usize]);
        chi = chi.max(centroids[f as usize]);
    }

    let id = nodes.len() as u32;
    nodes.push(BvhNode { lo, hi, left: 0, right: 0, start: start as u32, count: 0 });

    let spread = chi - clo;
    let split_axis = if spread.x >= spread.y && spread.x >= spread.z {
        0
    } else if spread.y >= spread.z {
        1
    } else {
        2
    };
    if len <= LEAF_SIZE || spread[split_axis] <= 0.0 {
        nodes[id as usize].count = len as u32;
        return id;
    }

    let mid = len / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize][split_axis].total_cmp(&centroids[b as usize][split_axis])
    });
    let left = build_node(surface, centroids, order, start, mid, nodes);
    let right = build_node(surface, centroids, order, start + mid, len - mid, nodes);
    nodes[id as usize].left = left;
    nodes[id as usize].right = right;
    id
}

/// Brute-force minimum distance, the oracle for the accelerated query.
pub fn brute_force_distance(surface: &TriangleSurface, p: Vec3) -> f64 {
    let mut best = f64::INFINITY;
    for f in 0..surface.faces.len() {
        let (a, b, c) = surface.triangle(f);
        let d2 = point_triangle_dist_sq(p, a, b, c);
        if d2 < best {
            best = d2;
        }
    }
    best.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::test_meshes::unit_cube_surface;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn plane_distance_above_triangle() {
        let a = Vec3::new(-10.0, -10.0, 0.0);
        let b = Vec3::new(10.0, -10.0, 0.0);
        let c = Vec3::new(0.0, 10.0, 0.0);
        let d2 = point_triangle_dist_sq(Vec3::new(0.3, 0.1, 2.5), a, b, c);
        assert!((d2.sqrt() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn vertex_edge_and_face_regions() {
        let a = Vec3::ZERO;
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(0.0, 1.0, 0.0);
        // Beyond vertex b.
        let d = point_triangle_dist_sq(Vec3::new(2.0, 0.0, 0.0), a, b, c).sqrt();
        assert!((d - 1.0).abs() < 1e-12);
        // Beside edge ab.
        let d = point_triangle_dist_sq(Vec3::new(0.5, -2.0, 0.0), a, b, c).sqrt();
        assert!((d - 2.0).abs() < 1e-12);
        // Off the hypotenuse.
        let d = point_triangle_dist_sq(Vec3::new(1.0, 1.0, 0.0), a, b, c).sqrt();
        assert!((d - (0.5f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bvh_distance_matches_brute_force_bitwise() {
        let cube = unit_cube_surface();
        let bvh = TriangleBvh::build(&cube);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = Vec3::new(
                rng.gen_range(-1.0..2.0),
                rng.gen_range(-1.0..2.0),
                rng.gen_range(-1.0..2.0),
            );
            assert_eq!(bvh.distance(p), brute_force_distance(&cube, p));
        }
    }

    #[test]
    fn cube_inside_outside_votes() {
        let cube = unit_cube_surface();
        let bvh = TriangleBvh::build(&cube);
        assert!(bvh.inside_vote(Vec3::new(0.4, 0.3, 0.6)).inside());
        assert!(!bvh.inside_vote(Vec3::new(1.7, 0.3, 0.6)).inside());
        assert!(!bvh.inside_vote(Vec3::new(-0.2, -0.4, 0.5)).inside());
    }

    #[test]
    fn crossings_count_both_walls() {
        let cube = unit_cube_surface();
        let bvh = TriangleBvh::build(&cube);
        // From inside: one wall in the +x direction.
        assert_eq!(bvh.axis_ray_crossings(Vec3::new(0.4, 0.3, 0.6), Axis::X), 1.0);
        // From outside on the -x side: both walls.
        assert_eq!(bvh.axis_ray_crossings(Vec3::new(-1.0, 0.3, 0.6), Axis::X), 2.0);
    }

    #[test]
    fn grazing_a_shared_edge_counts_once() {
        let cube = unit_cube_surface();
        let bvh = TriangleBvh::build(&cube);
        // y == z: the +x ray runs exactly through the wall triangulation
        // diagonal; the two half-weight hits must sum to one crossing.
        let p = Vec3::new(0.25, 0.25, 0.25);
        assert_eq!(bvh.axis_ray_crossings(p, Axis::X), 1.0);
        assert!(bvh.inside_vote(p).inside());
    }
}
