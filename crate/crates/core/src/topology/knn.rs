use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{SpringTopology, DEGENERATE_EPS};
use crate::spatial::KdTree;
use crate::vec3::Vec3;

/// KNN hyperparameters for one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub max_neighbors: usize,
    /// Search radius (m).
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTopologyConfig {
    pub labels: Vec<usize>,
    pub per_cluster: Vec<KnnParams>,
}

impl ClusterTopologyConfig {
    pub fn validate(&self, n_points: usize) -> Result<()> {
        if self.labels.len() != n_points {
            return Err(Error::shape(format!(
                "{} labels for {} points",
                self.labels.len(),
                n_points
            )));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l >= self.per_cluster.len()) {
            return Err(Error::config(format!("label {l} has no KNN parameters")));
        }
        for (c, p) in self.per_cluster.iter().enumerate() {
            if p.max_neighbors < 1 || !(p.radius > 0.0) {
                return Err(Error::config(format!(
                    "cluster {c}: invalid KNN parameters {p:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Each point proposes springs to its `max_neighbors` nearest points within
/// its cluster's radius (ties by index); proposals are unioned and
/// deduplicated. Rest lengths are the canonical distances.
pub fn build_piecewise_knn(
    points: &[Vec3],
    config: &ClusterTopologyConfig,
) -> Result<SpringTopology> {
    config.validate(points.len())?;
    let tree = KdTree::new(points);
    let mut pairs = Vec::new();
    let mut found = Vec::new();
    let eps2 = DEGENERATE_EPS * DEGENERATE_EPS;
    for (i, &p) in points.iter().enumerate() {
        let params = config.per_cluster[config.labels[i]];
        found.clear();
        tree.within_radius(p, params.radius, &mut found);
        found.retain(|&(d2, j)| j != i && d2 > eps2);
        found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        pairs.extend(
            found
                .iter()
                .take(params.max_neighbors)
                .map(|&(_, j)| (i, j)),
        );
    }
    Ok(SpringTopology::from_pairs(pairs, points))
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Adds the shortest inter-component edge until the graph is connected.
pub fn connect_components(points: &[Vec3], topology: &SpringTopology) -> SpringTopology {
    let n = points.len();
    let mut sets = DisjointSet::new(n);
    let mut components = n;
    for &(i, j) in &topology.edges {
        if sets.union(i, j) {
            components -= 1;
        }
    }
    if components <= 1 {
        return topology.clone();
    }
    let eps2 = DEGENERATE_EPS * DEGENERATE_EPS;
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if sets.find(i) != sets.find(j) {
                let d2 = points[i].distance_squared(points[j]);
                if d2 > eps2 {
                    candidates.push((d2, i, j));
                }
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pairs = topology.edges.clone();
    for (_, i, j) in candidates {
        if components == 1 {
            break;
        }
        if sets.union(i, j) {
            pairs.push((i, j));
            components -= 1;
        }
    }
    SpringTopology::from_pairs(pairs, points)
}

/// Median distance from each point to its nearest other point.
pub fn median_nn_spacing(points: &[Vec3]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let tree = KdTree::new(points);
    let mut found = Vec::new();
    let mut spacing: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            // grow the search until another point turns up
            let mut r = 1e-6;
            loop {
                found.clear();
                tree.within_radius(p, r, &mut found);
                if let Some(d2) = found
                    .iter()
                    .filter(|&&(d2, j)| j != i && d2 > 0.0)
                    .map(|x| x.0)
                    .reduce(f64::min)
                {
                    return d2.sqrt();
                }
                if found.len() >= points.len() {
                    return 0.0;
                }
                r *= 4.0;
            }
        })
        .collect();
    spacing.sort_by(f64::total_cmp);
    spacing[spacing.len() / 2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeSet;

    fn one_cluster(n: usize, k: usize, r: f64) -> ClusterTopologyConfig {
        ClusterTopologyConfig {
            labels: vec![0; n],
            per_cluster: vec![KnnParams {
                max_neighbors: k,
                radius: r,
            }],
        }
    }

    fn brute_proposals(
        points: &[Vec3],
        config: &ClusterTopologyConfig,
    ) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for i in 0..points.len() {
            let p = config.per_cluster[config.labels[i]];
            let mut all: Vec<(f64, usize)> = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| (points[i].distance(points[j]), j))
                .filter(|&(d, _)| d <= p.radius)
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            for &(_, j) in all.iter().take(p.max_neighbors) {
                out.insert((i.min(j), i.max(j)));
            }
        }
        out
    }

    #[test]
    fn single_point_has_no_edges() {
        let t = build_piecewise_knn(&[Vec3::ZERO], &one_cluster(1, 4, 1.0)).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn collinear_nearest_neighbor_chain() {
        let pts: Vec<Vec3> = (0..3).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let t = build_piecewise_knn(&pts, &one_cluster(3, 1, 1.5)).unwrap();
        assert_eq!(t.edges, vec![(0, 1), (1, 2)]);
        assert_eq!(t.rest_lengths, vec![1.0, 1.0]);
    }

    #[test]
    fn matches_brute_force_proposals() {
        for seed in 0..5 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec3> = (0..30)
                .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
                .collect();
            let config = ClusterTopologyConfig {
                labels: pts.iter().map(|p| usize::from(p.x > 0.5)).collect(),
                per_cluster: vec![
                    KnnParams {
                        max_neighbors: 3,
                        radius: 0.3,
                    },
                    KnnParams {
                        max_neighbors: 7,
                        radius: 0.5,
                    },
                ],
            };
            let t = build_piecewise_knn(&pts, &config).unwrap();
            let got: BTreeSet<(usize, usize)> = t.edges.iter().copied().collect();
            assert_eq!(got, brute_proposals(&pts, &config));
            t.validate(pts.len()).unwrap();
            for (e, &(i, j)) in t.edges.iter().enumerate() {
                let reach = config.per_cluster[config.labels[i]]
                    .radius
                    .max(config.per_cluster[config.labels[j]].radius);
                assert!(t.rest_lengths[e] <= reach);
            }
        }
    }

    #[test]
    fn growing_hyperparameters_keeps_edges() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let pts: Vec<Vec3> = (0..40)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let base = ClusterTopologyConfig {
            labels: labels.clone(),
            per_cluster: vec![
                KnnParams {
                    max_neighbors: 2,
                    radius: 0.2,
                },
                KnnParams {
                    max_neighbors: 4,
                    radius: 0.3,
                },
                KnnParams {
                    max_neighbors: 3,
                    radius: 0.25,
                },
            ],
        };
        let before: BTreeSet<_> = build_piecewise_knn(&pts, &base)
            .unwrap()
            .edges
            .into_iter()
            .collect();
        for c in 0..3 {
            for grow in [(1usize, 0.0f64), (0, 0.1), (3, 0.2)] {
                let mut bigger = base.clone();
                bigger.per_cluster[c].max_neighbors += grow.0;
                bigger.per_cluster[c].radius += grow.1;
                let after: BTreeSet<_> = build_piecewise_knn(&pts, &bigger)
                    .unwrap()
                    .edges
                    .into_iter()
                    .collect();
                assert!(before.is_subset(&after));
            }
        }
    }

    #[test]
    fn connected_input_unchanged() {
        let pts: Vec<Vec3> = (0..4).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let t = SpringTopology::from_pairs([(0, 1), (1, 2), (2, 3)], &pts);
        assert_eq!(connect_components(&pts, &t), t);
    }

    #[test]
    fn two_pairs_get_shortest_bridge() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.5, 0.0, 0.0),
        ];
        let t = SpringTopology::from_pairs([(0, 1), (2, 3)], &pts);
        let c = connect_components(&pts, &t);
        assert_eq!(c.edges, vec![(0, 1), (1, 3), (2, 3)]);
    }

    #[test]
    fn isolated_points_get_spanning_edges() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec3> = (0..12)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let c = connect_components(&pts, &SpringTopology::empty());
        assert_eq!(c.len(), 11);
        let mut sets = DisjointSet::new(12);
        for &(i, j) in &c.edges {
            assert!(sets.union(i, j), "spanning edges never close a cycle");
        }
    }

    #[test]
    fn median_spacing_of_grid() {
        let pts: Vec<Vec3> = (0..5)
            .map(|i| Vec3::new(0.25 * i as f64, 0.0, 0.0))
            .collect();
        assert!((median_nn_spacing(&pts) - 0.25).abs() < 1e-12);
    }
}
