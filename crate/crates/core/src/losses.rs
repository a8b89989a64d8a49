//! Geometry and motion losses against partial observations, and the
//! reconstruction / future-prediction metrics.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{ControlSchedule, MassSystem, Trajectory};
use crate::spatial::KdTree;
use crate::vec3::Vec3;

/// Track id → bound mass point index.
pub type TrackBinding = BTreeMap<String, usize>;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationFrame {
    /// Partial point cloud (m).
    pub observed: Vec<Vec3>,
    /// Tracked points; `None` where the tracker lost the point.
    #[serde(default)]
    pub tracks: BTreeMap<String, Option<Vec3>>,
    /// Prescribed control point positions keyed by mass point index.
    #[serde(default)]
    pub controls: BTreeMap<usize, Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSequence {
    pub dt_frame: f64,
    pub split_frame: usize,
    pub frames: Vec<ObservationFrame>,
}

/// First future frame under a 7:3 split.
pub fn split_index(n_frames: usize) -> usize {
    n_frames * 7 / 10
}

impl ObservationSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_frame > 0.0 && self.dt_frame.is_finite()) {
            return Err(Error::config("dt_frame must be positive"));
        }
        if self.split_frame > self.frames.len() {
            return Err(Error::config(format!(
                "split_frame {} beyond {} frames",
                self.split_frame,
                self.frames.len()
            )));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.observed.iter().any(|p| !p.is_finite())
                || f.tracks.values().flatten().any(|p| !p.is_finite())
                || f.controls.values().any(|p| !p.is_finite())
            {
                return Err(Error::config(format!(
                    "frame {t} holds a non-finite position"
                )));
            }
        }
        Ok(())
    }

    pub fn training_range(&self) -> Range<usize> {
        0..self.split_frame
    }

    pub fn future_range(&self) -> Range<usize> {
        self.split_frame..self.frames.len()
    }

    pub fn control_schedule(&self, system: &MassSystem) -> Result<ControlSchedule> {
        ControlSchedule::from_maps(system, self.frames.iter().map(|f| &f.controls))
    }
}

/// How per-point distances enter the losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceForm {
    #[default]
    Euclidean,
    Squared,
}

impl DistanceForm {
    #[inline]
    fn apply(self, d2: f64) -> f64 {
        match self {
            DistanceForm::Euclidean => d2.sqrt(),
            DistanceForm::Squared => d2,
        }
    }

    /// Gradient of the distance term with respect to `p` for offset `p - q`.
    #[inline]
    fn grad(self, offset: Vec3) -> Vec3 {
        match self {
            DistanceForm::Euclidean => {
                let d = offset.norm();
                if d > 0.0 {
                    offset / d
                } else {
                    Vec3::ZERO
                }
            }
            DistanceForm::Squared => offset * 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub geometry: f64,
    pub motion: f64,
    #[serde(default)]
    pub distance: DistanceForm,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            geometry: 1.0,
            motion: 1.0,
            distance: DistanceForm::Euclidean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub geometry: f64,
    pub motion: f64,
    pub total: f64,
}

impl LossReport {
    fn add(&mut self, other: LossReport) {
        self.geometry += other.geometry;
        self.motion += other.motion;
        self.total += other.total;
    }
}

/// Mean distance from each observed point to its nearest predicted point.
pub fn chamfer_single(observed: &[Vec3], predicted: &[Vec3]) -> Result<f64> {
    chamfer_with(observed, predicted, DistanceForm::Euclidean)
}

fn chamfer_with(observed: &[Vec3], predicted: &[Vec3], form: DistanceForm) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::config(
            "chamfer distance against an empty prediction",
        ));
    }
    if observed.is_empty() {
        log::warn!("empty observed cloud; frame contributes no geometry loss");
        return Ok(0.0);
    }
    let tree = KdTree::new(predicted);
    let sum: f64 = observed
        .iter()
        .map(|&o| form.apply(tree.nearest(o).expect("non-empty").1))
        .sum();
    Ok(sum / observed.len() as f64)
}

/// Mean distance between predicted and observed track positions over the
/// tracks present in the observation.
pub fn track_error(
    predicted: &BTreeMap<String, Vec3>,
    observed: &BTreeMap<String, Option<Vec3>>,
) -> Result<f64> {
    track_error_with(
        observed,
        |id| predicted.get(id).copied(),
        DistanceForm::Euclidean,
    )
}

fn track_error_with(
    observed: &BTreeMap<String, Option<Vec3>>,
    predicted: impl Fn(&str) -> Option<Vec3>,
    form: DistanceForm,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (id, obs) in observed {
        let Some(obs) = obs else { continue };
        let Some(pred) = predicted(id) else {
            // unbound tracks are excluded upstream; anything else is a caller bug
            return Err(Error::config(format!("no prediction for track {id}")));
        };
        sum += form.apply(pred.distance_squared(*obs));
        count += 1;
    }
    if count == 0 {
        log::warn!("no present tracks; motion loss is zero");
        return Ok(0.0);
    }
    Ok(sum / count as f64)
}

/// Binds each track present at frame 0 to the nearest canonical mass point
/// (lowest index on ties). Tracks absent at frame 0 are left out.
pub fn bind_tracks(observations: &ObservationSequence, system: &MassSystem) -> TrackBinding {
    let mut binding = TrackBinding::new();
    let Some(first) = observations.frames.first() else {
        return binding;
    };
    let tree = KdTree::new(system.canonical_positions());
    for (id, pos) in &first.tracks {
        match pos {
            Some(p) => {
                if let Some((idx, _)) = tree.nearest(*p) {
                    binding.insert(id.clone(), idx);
                }
            }
            None => log::warn!("track {id} absent at frame 0; excluded"),
        }
    }
    binding
}

/// Tracks observed in `frame` that have a binding.
fn bound_tracks<'a>(
    frame: &'a ObservationFrame,
    binding: &'a TrackBinding,
) -> BTreeMap<String, Option<Vec3>> {
    frame
        .tracks
        .iter()
        .filter(|(id, _)| binding.contains_key(*id))
        .map(|(id, p)| (id.clone(), *p))
        .collect()
}

/// Geometry and motion loss for one frame given the predicted positions.
pub fn frame_loss(
    positions: &[Vec3],
    frame: &ObservationFrame,
    binding: &TrackBinding,
    weights: &LossWeights,
) -> Result<LossReport> {
    let geometry = chamfer_with(&frame.observed, positions, weights.distance)?;
    let tracks = bound_tracks(frame, binding);
    let motion = track_error_with(
        &tracks,
        |id| binding.get(id).map(|&i| positions[i]),
        weights.distance,
    )?;
    Ok(LossReport {
        geometry,
        motion,
        total: weights.geometry * geometry + weights.motion * motion,
    })
}

/// Frame loss plus its gradient with respect to `positions`, accumulated into
/// `grad`. Matches [`frame_loss`]; nearest-neighbor assignments are held fixed.
pub(crate) fn frame_loss_grad(
    positions: &[Vec3],
    frame: &ObservationFrame,
    binding: &TrackBinding,
    weights: &LossWeights,
    grad: &mut [Vec3],
) -> Result<LossReport> {
    let form = weights.distance;
    if positions.is_empty() {
        return Err(Error::config(
            "chamfer distance against an empty prediction",
        ));
    }
    let mut geometry = 0.0;
    if !frame.observed.is_empty() {
        let tree = KdTree::new(positions);
        let scale = weights.geometry / frame.observed.len() as f64;
        for &o in &frame.observed {
            let (idx, d2) = tree.nearest(o).expect("non-empty");
            geometry += form.apply(d2);
            grad[idx] += form.grad(positions[idx] - o) * scale;
        }
        geometry /= frame.observed.len() as f64;
    }
    let present: Vec<(usize, Vec3)> = frame
        .tracks
        .iter()
        .filter_map(|(id, p)| Some((*binding.get(id)?, (*p)?)))
        .collect();
    let mut motion = 0.0;
    if !present.is_empty() {
        let scale = weights.motion / present.len() as f64;
        for &(idx, obs) in &present {
            motion += form.apply(positions[idx].distance_squared(obs));
            grad[idx] += form.grad(positions[idx] - obs) * scale;
        }
        motion /= present.len() as f64;
    }
    Ok(LossReport {
        geometry,
        motion,
        total: weights.geometry * geometry + weights.motion * motion,
    })
}

fn state_for_frame(trajectory: &Trajectory, t: usize) -> Result<&[Vec3]> {
    let first = trajectory
        .states
        .first()
        .ok_or_else(|| Error::config("empty trajectory"))?
        .frame_index;
    t.checked_sub(first)
        .and_then(|k| trajectory.states.get(k))
        .map(|s| s.positions.as_slice())
        .ok_or_else(|| Error::config(format!("trajectory does not cover frame {t}")))
}

/// Sum of per-frame losses over `frames`.
pub fn sequence_objective(
    trajectory: &Trajectory,
    observations: &ObservationSequence,
    binding: &TrackBinding,
    frames: Range<usize>,
    weights: &LossWeights,
) -> Result<LossReport> {
    let mut report = LossReport::default();
    for t in frames {
        let frame = observations
            .frames
            .get(t)
            .ok_or_else(|| Error::config(format!("no observation for frame {t}")))?;
        report.add(frame_loss(
            state_for_frame(trajectory, t)?,
            frame,
            binding,
            weights,
        )?);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub t: usize,
    pub cd: f64,
    pub te: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "CD_recon")]
    pub cd_recon: Option<f64>,
    #[serde(rename = "TE_recon")]
    pub te_recon: Option<f64>,
    #[serde(rename = "CD_future")]
    pub cd_future: Option<f64>,
    #[serde(rename = "TE_future")]
    pub te_future: Option<f64>,
    pub per_frame: Vec<FrameMetrics>,
}

/// Mean Chamfer distance and track error over `[0, split)` and `[split, end)`.
pub fn eval_metrics(
    trajectory: &Trajectory,
    observations: &ObservationSequence,
    binding: &TrackBinding,
    split: usize,
) -> Result<MetricsReport> {
    let n = observations.len();
    let mut per_frame = Vec::with_capacity(n);
    for (t, frame) in observations.frames.iter().enumerate() {
        let pos = state_for_frame(trajectory, t)?;
        let cd = chamfer_single(&frame.observed, pos)?;
        let tracks = bound_tracks(frame, binding);
        let te = track_error_with(
            &tracks,
            |id| binding.get(id).map(|&i| pos[i]),
            DistanceForm::Euclidean,
        )?;
        per_frame.push(FrameMetrics { t, cd, te });
    }
    let split = split.min(n);
    let mean = |r: &[FrameMetrics], f: fn(&FrameMetrics) -> f64| {
        (!r.is_empty()).then(|| r.iter().map(f).sum::<f64>() / r.len() as f64)
    };
    let (recon, future) = per_frame.split_at(split);
    Ok(MetricsReport {
        cd_recon: mean(recon, |m| m.cd),
        te_recon: mean(recon, |m| m.te),
        cd_future: mean(future, |m| m.cd),
        te_future: mean(future, |m| m.te),
        per_frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::MassSystemState;
    use proptest::prelude::*;

    fn brute_chamfer(obs: &[Vec3], pred: &[Vec3]) -> f64 {
        obs.iter()
            .map(|o| {
                pred.iter()
                    .map(|p| o.distance(*p))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / obs.len() as f64
    }

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn arb_cloud(max: usize) -> impl Strategy<Value = Vec<Vec3>> {
        prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..max)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect())
    }

    #[test]
    fn chamfer_examples() {
        let a = vec![v(0.1, 0.2, 0.3), v(1.0, -1.0, 2.0)];
        assert_eq!(chamfer_single(&a, &a).unwrap(), 0.0);
        assert_eq!(
            chamfer_single(&[Vec3::ZERO], &[v(1.0, 0.0, 0.0), v(3.0, 0.0, 0.0)]).unwrap(),
            1.0
        );
        assert_eq!(chamfer_single(&[], &a).unwrap(), 0.0);
        assert!(chamfer_single(&a, &[]).is_err());
    }

    proptest! {
        #[test]
        fn chamfer_matches_exhaustive_oracle(obs in arb_cloud(100), pred in arb_cloud(100)) {
            prop_assert_eq!(chamfer_single(&obs, &pred).unwrap(), brute_chamfer(&obs, &pred));
        }

        #[test]
        fn chamfer_ignores_permutation(obs in arb_cloud(40), pred in arb_cloud(40), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut o2 = obs.clone();
            let mut p2 = pred.clone();
            o2.shuffle(&mut rng);
            p2.shuffle(&mut rng);
            let a = chamfer_single(&obs, &pred).unwrap();
            let b = chamfer_single(&o2, &p2).unwrap();
            prop_assert!((a - b).abs() <= 1e-15 * a.max(1.0));
        }

        #[test]
        fn rigid_motion_preserves_losses(obs in arb_cloud(30), pred in arb_cloud(30), angle in 0.0..std::f64::consts::TAU, t in (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64)) {
            let (s, c) = angle.sin_cos();
            let rot = |p: Vec3| v(c * p.x - s * p.z, p.y, s * p.x + c * p.z) + v(t.0, t.1, t.2);
            let o2: Vec<Vec3> = obs.iter().map(|p| rot(*p)).collect();
            let p2: Vec<Vec3> = pred.iter().map(|p| rot(*p)).collect();
            let a = chamfer_single(&obs, &pred).unwrap();
            let b = chamfer_single(&o2, &p2).unwrap();
            prop_assert!((a - b).abs() < 1e-10);

            let k = obs.len().min(pred.len());
            let pm: BTreeMap<String, Vec3> = (0..k).map(|i| (i.to_string(), pred[i])).collect();
            let om: BTreeMap<String, Option<Vec3>> = (0..k).map(|i| (i.to_string(), Some(obs[i]))).collect();
            let pm2: BTreeMap<String, Vec3> = pm.iter().map(|(k, p)| (k.clone(), rot(*p))).collect();
            let om2: BTreeMap<String, Option<Vec3>> = om.iter().map(|(k, p)| (k.clone(), p.map(rot))).collect();
            let ta = track_error(&pm, &om).unwrap();
            let tb = track_error(&pm2, &om2).unwrap();
            prop_assert!((ta - tb).abs() < 1e-10);
        }
    }

    #[test]
    fn chamfer_zero_iff_covered() {
        let pred = vec![v(0.0, 0.0, 0.0), v(1.0, 1.0, 1.0)];
        assert_eq!(chamfer_single(&[v(1.0, 1.0, 1.0)], &pred).unwrap(), 0.0);
        assert!(chamfer_single(&[v(1.0, 1.0, 1.0 + 1e-9)], &pred).unwrap() > 0.0);
    }

    #[test]
    fn track_error_examples() {
        let p: BTreeMap<String, Vec3> = [("a".to_string(), v(1.0, 2.0, 3.0))].into();
        let o: BTreeMap<String, Option<Vec3>> = [("a".to_string(), Some(v(1.0, 2.0, 3.0)))].into();
        assert_eq!(track_error(&p, &o).unwrap(), 0.0);

        let o: BTreeMap<String, Option<Vec3>> = [("a".to_string(), Some(v(1.0, 5.0, 7.0)))].into();
        assert_eq!(track_error(&p, &o).unwrap(), 5.0);

        let p: BTreeMap<String, Vec3> = [
            ("a".to_string(), Vec3::ZERO),
            ("b".to_string(), Vec3::ZERO),
            ("c".to_string(), Vec3::ZERO),
        ]
        .into();
        let o: BTreeMap<String, Option<Vec3>> = [
            ("a".to_string(), Some(v(1.0, 0.0, 0.0))),
            ("b".to_string(), Some(v(0.0, 3.0, 0.0))),
            ("c".to_string(), None),
        ]
        .into();
        assert_eq!(track_error(&p, &o).unwrap(), 2.0);
        let none: BTreeMap<String, Option<Vec3>> = [("a".to_string(), None)].into();
        assert_eq!(track_error(&p, &none).unwrap(), 0.0);
    }

    fn line_system(n: usize) -> MassSystem {
        MassSystem::uniform((0..n).map(|i| v(i as f64, 0.0, 0.0)).collect(), 1.0, vec![]).unwrap()
    }

    fn frame_with(tracks: &[(&str, Vec3)]) -> ObservationFrame {
        ObservationFrame {
            observed: vec![],
            tracks: tracks
                .iter()
                .map(|(k, p)| (k.to_string(), Some(*p)))
                .collect(),
            controls: BTreeMap::new(),
        }
    }

    #[test]
    fn binding_picks_nearest_and_lowest_on_ties() {
        let pts: Vec<Vec3> = (0..10)
            .map(|i| match i {
                2 => v(1.0, 0.0, 0.0),
                7 => v(-1.0, 0.0, 0.0),
                _ => v(100.0 + i as f64, 100.0, 0.0),
            })
            .collect();
        let system = MassSystem::uniform(pts, 1.0, vec![]).unwrap();
        let obs = ObservationSequence {
            dt_frame: 0.1,
            split_frame: 0,
            frames: vec![frame_with(&[
                ("exact", v(103.0, 100.0, 0.0)),
                ("tie", Vec3::ZERO),
            ])],
        };
        let b = bind_tracks(&obs, &system);
        assert_eq!(b["exact"], 3);
        assert_eq!(b["tie"], 2);
    }

    #[test]
    fn binding_matches_exhaustive_search() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..50)
            .map(|_| v(rng.random(), rng.random(), rng.random()))
            .collect();
        let system = MassSystem::uniform(pts.clone(), 1.0, vec![]).unwrap();
        let tracks: Vec<(String, Vec3)> = (0..30)
            .map(|i| (format!("t{i}"), v(rng.random(), rng.random(), rng.random())))
            .collect();
        let obs = ObservationSequence {
            dt_frame: 0.1,
            split_frame: 0,
            frames: vec![ObservationFrame {
                observed: vec![],
                tracks: tracks.iter().map(|(k, p)| (k.clone(), Some(*p))).collect(),
                controls: BTreeMap::new(),
            }],
        };
        let b = bind_tracks(&obs, &system);
        for (id, p) in &tracks {
            let mut best = 0;
            for i in 0..pts.len() {
                if p.distance(pts[i]) < p.distance(pts[best]) {
                    best = i;
                }
            }
            assert_eq!(b[id], best);
        }
    }

    #[test]
    fn absent_track_is_excluded() {
        let system = line_system(3);
        let mut frame = frame_with(&[("a", Vec3::ZERO)]);
        frame.tracks.insert("gone".into(), None);
        let obs = ObservationSequence {
            dt_frame: 0.1,
            split_frame: 0,
            frames: vec![frame],
        };
        let b = bind_tracks(&obs, &system);
        assert_eq!(b.len(), 1);
    }

    fn traj_from(frames: Vec<Vec<Vec3>>) -> Trajectory {
        Trajectory {
            states: frames
                .into_iter()
                .enumerate()
                .map(|(t, p)| MassSystemState {
                    velocities: vec![Vec3::ZERO; p.len()],
                    positions: p,
                    frame_index: t,
                })
                .collect(),
        }
    }

    fn random_case(seed: u64, frames: usize) -> (Trajectory, ObservationSequence, TrackBinding) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rv = || v(rng.random(), rng.random(), rng.random());
        let traj = traj_from(
            (0..frames)
                .map(|_| (0..6).map(|_| rv()).collect())
                .collect(),
        );
        let obs = ObservationSequence {
            dt_frame: 0.1,
            split_frame: frames * 7 / 10,
            frames: (0..frames)
                .map(|_| ObservationFrame {
                    observed: (0..4).map(|_| rv()).collect(),
                    tracks: [
                        ("a".to_string(), Some(rv())),
                        ("b".to_string(), Some(rv())),
                        ("c".to_string(), None),
                    ]
                    .into(),
                    controls: BTreeMap::new(),
                })
                .collect(),
        };
        let binding: TrackBinding = [
            ("a".to_string(), 1),
            ("b".to_string(), 4),
            ("c".to_string(), 5),
        ]
        .into();
        (traj, obs, binding)
    }

    #[test]
    fn objective_is_sum_of_frames() {
        let (traj, obs, binding) = random_case(11, 5);
        let w = LossWeights::default();
        let total = sequence_objective(&traj, &obs, &binding, 0..5, &w).unwrap();
        let mut oracle = 0.0;
        for t in 0..5 {
            let pos = traj.positions(t);
            let f = &obs.frames[t];
            let cd = brute_chamfer(&f.observed, pos);
            let te = (pos[1].distance(f.tracks["a"].unwrap())
                + pos[4].distance(f.tracks["b"].unwrap()))
                / 2.0;
            oracle += cd + te;
        }
        assert!((total.total - oracle).abs() < 1e-12);
        let a = sequence_objective(&traj, &obs, &binding, 0..2, &w).unwrap();
        let b = sequence_objective(&traj, &obs, &binding, 2..5, &w).unwrap();
        assert!((a.total + b.total - total.total).abs() < 1e-12);
        assert!((total.total - (total.geometry + total.motion)).abs() < 1e-12);
    }

    #[test]
    fn single_frame_objective_is_that_frame() {
        let traj = traj_from(vec![vec![v(1.0, 0.0, 0.0)]]);
        let obs = ObservationSequence {
            dt_frame: 0.1,
            split_frame: 0,
            frames: vec![ObservationFrame {
                observed: vec![Vec3::ZERO],
                tracks: [("a".to_string(), Some(v(1.0, 2.0, 0.0)))].into(),
                controls: BTreeMap::new(),
            }],
        };
        let binding: TrackBinding = [("a".to_string(), 0)].into();
        let r = sequence_objective(&traj, &obs, &binding, 0..1, &LossWeights::default()).unwrap();
        assert_eq!(r.geometry, 1.0);
        assert_eq!(r.motion, 2.0);
        assert_eq!(r.total, 3.0);
    }

    #[test]
    fn metrics_split_ranges() {
        let (traj, obs, binding) = random_case(5, 3);
        let m = eval_metrics(&traj, &obs, &binding, 2).unwrap();
        let cd = |t: usize| brute_chamfer(&obs.frames[t].observed, traj.positions(t));
        let te = |t: usize| {
            let p = traj.positions(t);
            let f = &obs.frames[t];
            (p[1].distance(f.tracks["a"].unwrap()) + p[4].distance(f.tracks["b"].unwrap())) / 2.0
        };
        assert!((m.cd_recon.unwrap() - (cd(0) + cd(1)) / 2.0).abs() < 1e-12);
        assert!((m.te_recon.unwrap() - (te(0) + te(1)) / 2.0).abs() < 1e-12);
        assert!((m.cd_future.unwrap() - cd(2)).abs() < 1e-12);
        assert!((m.te_future.unwrap() - te(2)).abs() < 1e-12);

        let at_end = eval_metrics(&traj, &obs, &binding, 3).unwrap();
        assert_eq!(at_end.cd_future, None);
        assert_eq!(at_end.te_future, None);
    }

    #[test]
    fn frame_gradient_matches_finite_differences() {
        let (traj, obs, binding) = random_case(9, 1);
        let w = LossWeights::default();
        let pos = traj.positions(0).to_vec();
        let mut grad = vec![Vec3::ZERO; pos.len()];
        let r = frame_loss_grad(&pos, &obs.frames[0], &binding, &w, &mut grad).unwrap();
        let plain = frame_loss(&pos, &obs.frames[0], &binding, &w).unwrap();
        assert_eq!(r, plain);
        let h = 1e-6;
        for i in 0..pos.len() {
            for a in 0..3 {
                let bump = |s: f64| {
                    let mut p = pos.clone();
                    match a {
                        0 => p[i].x += s,
                        1 => p[i].y += s,
                        _ => p[i].z += s,
                    }
                    frame_loss(&p, &obs.frames[0], &binding, &w).unwrap().total
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                assert!(
                    (fd - grad[i][a]).abs() < 1e-6,
                    "{i},{a}: {fd} vs {}",
                    grad[i][a]
                );
            }
        }
    }

    #[test]
    fn split_follows_seven_three_floor() {
        assert_eq!(split_index(60), 42);
        assert_eq!(split_index(10), 7);
        assert_eq!(split_index(11), 7);
        assert_eq!(split_index(0), 0);
    }
}
