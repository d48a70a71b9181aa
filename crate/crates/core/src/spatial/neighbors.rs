//! Fixed-radius neighbor queries over a uniform spatial hash.

use std::collections::HashMap;

use crate::vec3::Vec3;

/// Immutable spatial-hash index over a point set.
///
/// The hash cell edge is chosen by the caller (typically the query radius so a
/// query touches at most 27 cells). Queries with other radii remain correct:
/// the scanned cell range is derived from the query radius.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Vec3>,
    cell_edge: f64,
    origin: Vec3,
    buckets: HashMap<(i32, i32, i32), Vec<u32>>,
}

impl NeighborIndex {
    pub fn build(points: Vec<Vec3>, cell_edge: f64) -> Self {
        assert!(cell_edge > 0.0, "hash cell edge must be positive");
        let origin = points.iter().copied().fold(Vec3::ZERO, Vec3::min);
        let mut buckets: HashMap<(i32, i32, i32), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets
                .entry(Self::cell_of(*p, origin, cell_edge))
                .or_default()
                .push(i as u32);
        }
        NeighborIndex { points, cell_edge, origin, buckets }
    }

    #[inline]
    fn cell_of(p: Vec3, origin: Vec3, edge: f64) -> (i32, i32, i32) {
        (
            ((p.x - origin.x) / edge).floor() as i32,
            ((p.y - origin.y) / edge).floor() as i32,
            ((p.z - origin.z) / edge).floor() as i32,
        )
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// All points with distance <= `radius` of `center` (compared on squared
    /// distances), truncated to the `max_count` nearest. The result is sorted
    /// ascending by distance with ties broken by lower point index, making the
    /// query deterministic and independent of insertion order.
    pub fn ball_query(&self, center: Vec3, radius: f64, max_count: usize) -> Vec<(u32, f64)> {
        debug_assert!(radius > 0.0 && max_count >= 1);
        if self.points.is_empty() {
            return Vec::new();
        }
        let r2 = radius * radius;
        let lo = Self::cell_of(center - Vec3::splat(radius), self.origin, self.cell_edge);
        let hi = Self::cell_of(center + Vec3::splat(radius), self.origin, self.cell_edge);
        let mut hits: Vec<(f64, u32)> = Vec::new();
        for cx in lo.0..=hi.0 {
            for cy in lo.1..=hi.1 {
                for cz in lo.2..=hi.2 {
                    let Some(bucket) = self.buckets.get(&(cx, cy, cz)) else {
                        continue;
                    };
                    for &idx in bucket {
                        let d2 = (self.points[idx as usize] - center).norm_sq();
                        if d2 <= r2 {
                            hits.push((d2, idx));
                        }
                    }
                }
            }
        }
        hits.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        hits.truncate(max_count);
        hits.into_iter().map(|(d2, idx)| (idx, d2.sqrt())).collect()
    }
}

/// Reference O(N) scan with identical semantics, used as the test oracle and
/// for small point sets where building an index is not worth it.
pub fn ball_query_brute_force(
    points: &[Vec3],
    center: Vec3,
    radius: f64,
    max_count: usize,
) -> Vec<(u32, f64)> {
    let r2 = radius * radius;
    let mut hits: Vec<(f64, u32)> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let d2 = (*p - center).norm_sq();
            (d2 <= r2).then_some((d2, i as u32))
        })
        .collect();
    hits.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits.truncate(max_count);
    hits.into_iter().map(|(d2, idx)| (idx, d2.sqrt())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn within_radius_only() {
        let points = vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)];
        let index = NeighborIndex::build(points, 0.5);
        let hits = index.ball_query(Vec3::ZERO, 0.5, 8);
        assert_eq!(hits, vec![(0, 0.0)]);
    }

    #[test]
    fn truncation_keeps_nearest() {
        let points = vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)];
        let index = NeighborIndex::build(points, 2.0);
        let hits = index.ball_query(Vec3::ZERO, 2.0, 1);
        assert_eq!(hits, vec![(0, 0.0)]);
    }

    #[test]
    fn matches_brute_force_on_random_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let points: Vec<Vec3> = (0..1000)
            .map(|_| Vec3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()))
            .collect();
        let radius = 0.12;
        let index = NeighborIndex::build(points.clone(), radius);
        for _ in 0..100 {
            let center = Vec3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            let fast = index.ball_query(center, radius, 16);
            let slow = ball_query_brute_force(&points, center, radius, 16);
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn insertion_order_does_not_change_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<Vec3> = (0..200)
            .map(|_| Vec3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()))
            .collect();
        let mut shuffled = points.clone();
        shuffled.reverse();
        let a = NeighborIndex::build(points.clone(), 0.3);
        let b = NeighborIndex::build(shuffled, 0.3);
        let center = Vec3::splat(0.4);
        let hits_a = a.ball_query(center, 0.3, 10);
        let hits_b = b.ball_query(center, 0.3, 10);
        // Indices differ (points were reordered) but the retrieved point set
        // and distances must agree.
        let pos_a: Vec<Vec3> = hits_a.iter().map(|(i, _)| a.points()[*i as usize]).collect();
        let pos_b: Vec<Vec3> = hits_b.iter().map(|(i, _)| b.points()[*i as usize]).collect();
        assert_eq!(pos_a, pos_b);
        for (x, y) in hits_a.iter().zip(&hits_b) {
            assert_eq!(x.1, y.1);
        }
    }

    #[test]
    fn empty_result_is_valid() {
        let index = NeighborIndex::build(vec![Vec3::splat(10.0)], 1.0);
        assert!(index.ball_query(Vec3::ZERO, 1.0, 4).is_empty());
    }
}
