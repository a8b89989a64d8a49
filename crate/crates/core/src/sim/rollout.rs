use crate::error::{Error, Result};
use crate::vec3::Vec3;

use super::step::{substep, StepRecord};
use super::types::{
    ControlSchedule, GlobalPhysicalParams, MassSystem, MassSystemState, SpringParams,
    SpringTopology, Trajectory,
};

/// Positions farther than this from the origin (m) count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// A validated bundle of everything a rollout needs.
#[derive(Debug, Clone, Copy)]
pub struct Simulator<'a> {
    pub system: &'a MassSystem,
    pub topology: &'a SpringTopology,
    pub springs: &'a SpringParams,
    pub globals: &'a GlobalPhysicalParams,
}

impl<'a> Simulator<'a> {
    pub fn new(
        system: &'a MassSystem,
        topology: &'a SpringTopology,
        springs: &'a SpringParams,
        globals: &'a GlobalPhysicalParams,
    ) -> Result<Self> {
        topology.validate(system.len())?;
        springs.validate(topology.len())?;
        globals.validate()?;
        Ok(Simulator {
            system,
            topology,
            springs,
            globals,
        })
    }

    /// Control targets for substep `s` (1-based) of a frame moving from `from` to `to`.
    #[inline]
    pub(crate) fn control_targets(
        &self,
        from: &[Vec3],
        to: &[Vec3],
        s: usize,
        out: &mut Vec<Vec3>,
    ) {
        let n = self.globals.substeps_per_frame;
        out.clear();
        if s == n {
            out.extend_from_slice(to);
        } else {
            let t = s as f64 / n as f64;
            out.extend(from.iter().zip(to).map(|(a, b)| a.lerp(*b, t)));
        }
    }

    /// Runs every substep of one frame in place. When `records` is given it
    /// receives one entry per substep, preceded by the substep's input state.
    pub(crate) fn advance_frame(
        &self,
        positions: &mut [Vec3],
        velocities: &mut [Vec3],
        from: &[Vec3],
        to: &[Vec3],
        frame: usize,
        mut records: Option<&mut Vec<(Vec<Vec3>, Vec<Vec3>, StepRecord)>>,
    ) -> Result<()> {
        let mut forces = vec![Vec3::ZERO; positions.len()];
        let mut targets = Vec::with_capacity(from.len());
        for s in 1..=self.globals.substeps_per_frame {
            self.control_targets(from, to, s, &mut targets);
            let rec = match records.as_deref_mut() {
                Some(list) => {
                    list.push((
                        positions.to_vec(),
                        velocities.to_vec(),
                        StepRecord::default(),
                    ));
                    Some(&mut list.last_mut().unwrap().2)
                }
                None => None,
            };
            substep(
                positions,
                velocities,
                &mut forces,
                self.system,
                self.topology,
                self.springs,
                self.globals,
                Some(&targets),
                frame,
                rec,
            )?;
        }
        check_state(positions, velocities, frame + 1)
    }

    /// Simulates `n_frames` frames (including the initial one) under `controls`.
    pub fn rollout(
        &self,
        initial: &MassSystemState,
        controls: &ControlSchedule,
        n_frames: usize,
    ) -> Result<Trajectory> {
        if n_frames == 0 {
            return Err(Error::config("rollout needs at least one frame"));
        }
        initial.check(self.system)?;
        let n_ctrl = self.system.control_indices().len();
        if n_ctrl > 0 {
            if controls.len() < n_frames {
                return Err(Error::config(format!(
                    "control schedule covers {} frames, rollout needs {}",
                    controls.len(),
                    n_frames
                )));
            }
            if let Some(f) = controls.frames.iter().position(|row| row.len() != n_ctrl) {
                return Err(Error::shape(format!(
                    "control frame {f} has the wrong width"
                )));
            }
        }
        let no_controls: Vec<Vec3> = Vec::new();
        let row = |f: usize| -> &[Vec3] {
            if n_ctrl == 0 {
                &no_controls
            } else {
                &controls.frames[f]
            }
        };

        let mut states = Vec::with_capacity(n_frames);
        states.push(initial.clone());
        let mut x = initial.positions.clone();
        let mut v = initial.velocities.clone();
        for f in 0..n_frames - 1 {
            let frame = initial.frame_index + f;
            self.advance_frame(&mut x, &mut v, row(f), row(f + 1), frame, None)?;
            states.push(MassSystemState {
                positions: x.clone(),
                velocities: v.clone(),
                frame_index: frame + 1,
            });
        }
        Ok(Trajectory { states })
    }
}

pub(crate) fn check_state(x: &[Vec3], v: &[Vec3], frame: usize) -> Result<()> {
    for (p, u) in x.iter().zip(v) {
        if !p.is_finite() || !u.is_finite() {
            return Err(Error::Diverged {
                frame,
                edge: None,
                reason: "non-finite state".into(),
            });
        }
        if p.norm() > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                frame,
                edge: None,
                reason: format!("position magnitude {:.3e} m exceeds limit", p.norm()),
            });
        }
    }
    Ok(())
}

/// Rolls out `n_frames` frames; frame 0 of the result is `initial`.
pub fn rollout(
    initial: &MassSystemState,
    system: &MassSystem,
    topology: &SpringTopology,
    springs: &SpringParams,
    globals: &GlobalPhysicalParams,
    controls: &ControlSchedule,
    n_frames: usize,
) -> Result<Trajectory> {
    Simulator::new(system, topology, springs, globals)?.rollout(initial, controls, n_frames)
}
