use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::vec3::Vec3;

use super::types::{
    GlobalPhysicalParams, MassSystem, MassSystemState, SpringParams, SpringTopology,
};

/// Spring length below which the direction is undefined and the force is zero.
pub const DEGENERATE_EPS: f64 = 1e-9;

static DEGENERATE_SPRINGS: AtomicU64 = AtomicU64::new(0);

/// Number of coincident-endpoint springs encountered so far in this process.
pub fn degenerate_spring_count() -> u64 {
    DEGENERATE_SPRINGS.load(Ordering::Relaxed)
}

/// Hookean force on `xi` from a spring to `xj`.
#[inline]
pub fn spring_force(xi: Vec3, xj: Vec3, k: f64, rest_length: f64) -> Vec3 {
    let d = xj - xi;
    let len = d.norm();
    if len < DEGENERATE_EPS {
        DEGENERATE_SPRINGS.fetch_add(1, Ordering::Relaxed);
        return Vec3::ZERO;
    }
    d * (k * (len - rest_length) / len)
}

/// Damping force on point `i` proportional to its velocity relative to `j`.
#[inline]
pub fn dashpot_force(vi: Vec3, vj: Vec3, gamma: f64) -> Vec3 {
    (vi - vj) * -gamma
}

/// Writes the net force on every point into `out`. `frame` only labels errors.
pub(crate) fn accumulate_into(
    positions: &[Vec3],
    velocities: &[Vec3],
    system: &MassSystem,
    topology: &SpringTopology,
    springs: &SpringParams,
    gravity: Vec3,
    frame: usize,
    out: &mut [Vec3],
) -> Result<()> {
    for (f, &m) in out.iter_mut().zip(system.masses()) {
        *f = gravity * m;
    }
    for (e, &(i, j)) in topology.edges.iter().enumerate() {
        let f = spring_force(
            positions[i],
            positions[j],
            springs.stiffness[e],
            topology.rest_lengths[e],
        ) + dashpot_force(velocities[i], velocities[j], springs.dashpot[e]);
        if !f.is_finite() {
            return Err(Error::Diverged {
                frame,
                edge: Some(e),
                reason: "non-finite spring force".into(),
            });
        }
        out[i] += f;
        out[j] -= f;
    }
    Ok(())
}

/// Net force per point: spring and dashpot contributions of every incident
/// edge plus gravity.
pub fn accumulate_forces(
    state: &MassSystemState,
    system: &MassSystem,
    topology: &SpringTopology,
    springs: &SpringParams,
    globals: &GlobalPhysicalParams,
) -> Result<Vec<Vec3>> {
    state.check(system)?;
    topology.validate(system.len())?;
    springs.validate(topology.len())?;
    let mut out = vec![Vec3::ZERO; system.len()];
    accumulate_into(
        &state.positions,
        &state.velocities,
        system,
        topology,
        springs,
        globals.gravity,
        state.frame_index,
        &mut out,
    )?;
    Ok(out)
}
