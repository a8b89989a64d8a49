use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Bottom-up Ward-linkage clustering cut at `n_clusters`.
///
/// Merge costs follow the Lance-Williams recurrence on the Ward increment
/// `|A||B| / (|A|+|B|) * |c_A - c_B|^2`. Each cluster is named by its lowest
/// point index; among equal costs the lexicographically smallest pair of
/// names merges first. Labels are numbered by first appearance in point order.
pub fn cluster_points(points: &[Vec3], n_clusters: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if n_clusters < 1 {
        return Err(Error::config("cluster count must be at least 1"));
    }
    if n_clusters > n {
        return Err(Error::config(format!(
            "cannot form {n_clusters} clusters from {n} points"
        )));
    }

    // cost[i][j] for active slots i < j; slot i is named by point i
    let mut cost = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            cost[i * n + j] = 0.5 * points[i].distance_squared(points[j]);
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut parent: Vec<usize> = (0..n).collect();
    let at = |c: &[f64], i: usize, j: usize| if i < j { c[i * n + j] } else { c[j * n + i] };

    for _ in 0..(n - n_clusters) {
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for i in (0..n).filter(|&i| active[i]) {
            for j in ((i + 1)..n).filter(|&j| active[j]) {
                let c = cost[i * n + j];
                if c < best.0 {
                    best = (c, i, j);
                }
            }
        }
        let (dij, a, b) = best;
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in (0..n).filter(|&k| active[k] && k != a && k != b) {
            let nk = size[k] as f64;
            let updated = ((na + nk) * at(&cost, a, k) + (nb + nk) * at(&cost, b, k) - nk * dij)
                / (na + nb + nk);
            let (lo, hi) = (a.min(k), a.max(k));
            cost[lo * n + hi] = updated;
        }
        active[b] = false;
        size[a] += size[b];
        parent[b] = a;
    }

    let root = |mut i: usize| {
        while parent[i] != i {
            i = parent[i];
        }
        i
    };
    let mut label_of_root = vec![usize::MAX; n];
    let mut next = 0;
    Ok((0..n)
        .map(|i| {
            let r = root(i);
            if label_of_root[r] == usize::MAX {
                label_of_root[r] = next;
                next += 1;
            }
            label_of_root[r]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Recomputes every Ward increment from cluster centroids at each merge.
    fn naive_ward(points: &[Vec3], n_clusters: usize) -> Vec<usize> {
        let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
        let centroid =
            |c: &[usize]| c.iter().fold(Vec3::ZERO, |a, &i| a + points[i]) / c.len() as f64;
        while clusters.len() > n_clusters {
            let mut best = (f64::INFINITY, 0, 0);
            for a in 0..clusters.len() {
                for b in (a + 1)..clusters.len() {
                    let (na, nb) = (clusters[a].len() as f64, clusters[b].len() as f64);
                    let d = na * nb / (na + nb)
                        * centroid(&clusters[a]).distance_squared(centroid(&clusters[b]));
                    if d < best.0 {
                        best = (d, a, b);
                    }
                }
            }
            let moved = clusters.remove(best.2);
            clusters[best.1].extend(moved);
            clusters.sort_by_key(|c| *c.iter().min().unwrap());
        }
        let mut labels = vec![0; points.len()];
        for (l, c) in clusters.iter().enumerate() {
            for &i in c {
                labels[i] = l;
            }
        }
        labels
    }

    #[test]
    fn one_cluster_per_point() {
        let pts: Vec<Vec3> = (0..6)
            .map(|i| Vec3::new(i as f64 * 0.3, 0.0, (i * i) as f64))
            .collect();
        assert_eq!(cluster_points(&pts, 6).unwrap(), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn separated_blobs_split_cleanly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..20)
            .map(|i| {
                let c = if i % 2 == 0 { 0.0 } else { 10.0 };
                Vec3::new(c + rng.random::<f64>(), rng.random(), rng.random())
            })
            .collect();
        let labels = cluster_points(&pts, 2).unwrap();
        for (i, &l) in labels.iter().enumerate() {
            assert_eq!(l, i % 2);
        }
    }

    #[test]
    fn matches_naive_ward_on_random_points() {
        for seed in 0..10 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec3> = (0..20)
                .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
                .collect();
            for k in [1, 2, 5, 9] {
                assert_eq!(
                    cluster_points(&pts, k).unwrap(),
                    naive_ward(&pts, k),
                    "seed {seed} k {k}"
                );
            }
        }
    }

    #[test]
    fn rejects_bad_counts() {
        let pts = vec![Vec3::ZERO; 3];
        assert!(cluster_points(&pts, 0).is_err());
        assert!(cluster_points(&pts, 4).is_err());
    }
}
