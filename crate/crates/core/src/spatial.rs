//! Static 3-d tree over a point set for exact nearest and radius queries.

use crate::vec3::Vec3;

#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    points: &'a [Vec3],
    // permutation of point indices; node at [lo, hi) splits at the middle
    order: Vec<usize>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(points, &mut order, 0);
        KdTree { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point to `q` as `(index, squared distance)`; ties resolve to
    /// the lowest index. `None` for an empty tree.
    pub fn nearest(&self, q: Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(q, 0, self.order.len(), 0, &mut best);
        Some(best)
    }

    fn nearest_in(&self, q: Vec3, lo: usize, hi: usize, depth: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = self.points[idx];
        let d2 = q.distance_squared(p);
        if d2 < best.1 || (d2 == best.1 && idx < best.0) {
            *best = (idx, d2);
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_in(q, near.0, near.1, depth + 1, best);
        // `<=` keeps equal-distance candidates reachable for the index tie rule
        if diff * diff <= best.1 {
            self.nearest_in(q, far.0, far.1, depth + 1, best);
        }
    }

    /// Appends `(squared distance, index)` of every point within `radius` of `q`
    /// (inclusive).
    pub fn within_radius(&self, q: Vec3, radius: f64, out: &mut Vec<(f64, usize)>) {
        self.radius_in(q, radius * radius, 0, self.order.len(), 0, out);
    }

    fn radius_in(
        &self,
        q: Vec3,
        r2: f64,
        lo: usize,
        hi: usize,
        depth: usize,
        out: &mut Vec<(f64, usize)>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = self.points[idx];
        let d2 = q.distance_squared(p);
        if d2 <= r2 {
            out.push((d2, idx));
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        if diff <= 0.0 || diff * diff <= r2 {
            self.radius_in(q, r2, lo, mid, depth + 1, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.radius_in(q, r2, mid + 1, hi, depth + 1, out);
        }
    }
}

fn build(points: &[Vec3], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_nearest(points: &[Vec3], q: Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d2 = q.distance_squared(*p);
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    }

    fn arb_points(max: usize) -> impl Strategy<Value = Vec<Vec3>> {
        prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..max)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect())
    }

    proptest! {
        #[test]
        fn nearest_matches_brute_force(points in arb_points(80), qs in arb_points(20)) {
            let tree = KdTree::new(&points);
            for q in qs {
                prop_assert_eq!(tree.nearest(q).unwrap(), brute_nearest(&points, q));
            }
        }

        #[test]
        fn radius_matches_brute_force(points in arb_points(80), q in arb_points(2), r in 0.0..1.5f64) {
            let tree = KdTree::new(&points);
            let mut got = Vec::new();
            tree.within_radius(q[0], r, &mut got);
            got.sort_by_key(|g| g.1);
            let want: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .map(|(i, p)| (q[0].distance_squared(*p), i))
                .filter(|(d2, _)| *d2 <= r * r)
                .collect();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let pts = vec![
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 5.0, 0.0),
        ];
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(Vec3::ZERO), Some((1, 1.0)));
    }
}
