use crate::error::{Error, Result};
use crate::vec3::Vec3;

use super::types::{MassSystem, Trajectory};

const SKIN_EPS: f64 = 1e-8;

/// Moves query points with their `k_neighbors` nearest mass points.
///
/// Neighbors and inverse-distance weights are fixed in the canonical frame;
/// each frame's query displacement is the weighted mean of the neighbors'
/// displacements. Returns positions indexed `[frame][query]`.
pub fn skin_points(
    query_canonical: &[Vec3],
    system: &MassSystem,
    trajectory: &Trajectory,
    k_neighbors: usize,
) -> Result<Vec<Vec<Vec3>>> {
    if trajectory.is_empty() {
        return Err(Error::config("cannot skin against an empty trajectory"));
    }
    let n = system.len();
    if k_neighbors == 0 || k_neighbors > n {
        return Err(Error::config(format!(
            "k_neighbors must lie in [1, {n}], got {k_neighbors}"
        )));
    }
    let canon = system.canonical_positions();

    let bindings: Vec<Vec<(usize, f64)>> = query_canonical
        .iter()
        .map(|&q| {
            let mut order: Vec<(f64, usize)> = canon
                .iter()
                .enumerate()
                .map(|(i, &p)| (q.distance(p), i))
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            order.truncate(k_neighbors);
            let raw: Vec<f64> = order.iter().map(|(d, _)| 1.0 / (d + SKIN_EPS)).collect();
            let total: f64 = raw.iter().sum();
            order
                .iter()
                .zip(raw)
                .map(|(&(_, i), w)| (i, w / total))
                .collect()
        })
        .collect();

    Ok(trajectory
        .states
        .iter()
        .map(|state| {
            query_canonical
                .iter()
                .zip(&bindings)
                .map(|(&q, bind)| {
                    let disp = bind.iter().fold(Vec3::ZERO, |acc, &(i, w)| {
                        acc + (state.positions[i] - canon[i]) * w
                    });
                    q + disp
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::MassSystemState;

    fn system_and_traj(shift: impl Fn(usize, Vec3) -> Vec3) -> (MassSystem, Trajectory) {
        let pts = vec![
            Vec3::ZERO,
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let system = MassSystem::uniform(pts.clone(), 1.0, vec![]).unwrap();
        let s0 = MassSystemState::at_rest(&system);
        let mut s1 = s0.clone();
        for (i, p) in s1.positions.iter_mut().enumerate() {
            *p = shift(i, *p);
        }
        (
            system,
            Trajectory {
                states: vec![s0, s1],
            },
        )
    }

    #[test]
    fn coincident_query_tracks_its_point() {
        let (system, traj) = system_and_traj(|i, p| p + Vec3::new(0.1 * i as f64, 0.2, -0.3));
        let out = skin_points(&[Vec3::new(1.0, 0.0, 0.0)], &system, &traj, 1).unwrap();
        assert!((out[1][0] - traj.states[1].positions[1]).norm() < 1e-12);
    }

    #[test]
    fn rigid_translation_carries_queries() {
        let t = Vec3::new(1.0, 2.0, 3.0);
        let (system, traj) = system_and_traj(|_, p| p + t);
        let q = [Vec3::new(0.3, 0.4, 0.1), Vec3::new(-2.0, 5.0, 1.0)];
        let out = skin_points(&q, &system, &traj, 3).unwrap();
        for (a, b) in out[1].iter().zip(&q) {
            assert!((*a - *b - t).norm() < 1e-12);
        }
    }

    #[test]
    fn midpoint_query_averages_two_displacements() {
        let d1 = Vec3::new(0.0, 0.4, 0.0);
        let d2 = Vec3::new(0.2, 0.0, 0.0);
        let (system, traj) = system_and_traj(|i, p| match i {
            0 => p + d1,
            1 => p + d2,
            _ => p,
        });
        let q = Vec3::new(0.5, 0.0, 0.0);
        let out = skin_points(&[q], &system, &traj, 2).unwrap();
        assert!((out[1][0] - (q + (d1 + d2) * 0.5)).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_k_and_empty_trajectory() {
        let (system, traj) = system_and_traj(|_, p| p);
        assert!(skin_points(&[Vec3::ZERO], &system, &traj, 0).is_err());
        assert!(skin_points(&[Vec3::ZERO], &system, &traj, 4).is_err());
        let empty = Trajectory { states: vec![] };
        assert!(skin_points(&[Vec3::ZERO], &system, &empty, 1).is_err());
    }
}
