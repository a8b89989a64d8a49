use crate::error::{Error, Result};
use crate::vec3::Vec3;

use super::force::accumulate_into;
use super::types::{
    GlobalPhysicalParams, MassSystem, MassSystemState, SpringParams, SpringTopology,
};

/// Regularizer in the friction scale denominator.
pub const CONTACT_EPS: f64 = 1e-12;

/// Ground-plane contact response for a point at `x` moving with `v`.
///
/// Returns the corrected velocity, or `None` when the point is not in
/// penetrating contact (above the ground or separating).
#[inline]
pub(crate) fn ground_response(x: Vec3, v: Vec3, globals: &GlobalPhysicalParams) -> Option<Vec3> {
    if !(x.y < globals.ground_height && v.y < 0.0) {
        return None;
    }
    let e = globals.restitution;
    let vn = v.y.abs();
    let vt = (v.x * v.x + v.z * v.z).sqrt();
    let scale = friction_scale(vn, vt, e, globals.friction);
    Some(Vec3::new(v.x * scale, -e * v.y, v.z * scale))
}

#[inline]
pub(crate) fn friction_scale(vn: f64, vt: f64, restitution: f64, friction: f64) -> f64 {
    (1.0 - friction * (1.0 + restitution) * vn / (vt + CONTACT_EPS)).max(0.0)
}

/// Velocity corrections from ground-plane impulses. Points that are above
/// the ground or moving upward receive a zero correction.
pub fn collision_impulse(state: &MassSystemState, globals: &GlobalPhysicalParams) -> Vec<Vec3> {
    state
        .positions
        .iter()
        .zip(&state.velocities)
        .map(|(&x, &v)| match ground_response(x, v, globals) {
            Some(corrected) => corrected - v,
            None => Vec3::ZERO,
        })
        .collect()
}

/// Per-substep data kept for replay in the reverse pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct StepRecord {
    /// Velocities after drag and forces, before any contact response.
    pub pre_contact: Vec<Vec3>,
}

/// Sphere-sphere impulses between free points closer than `2 r`.
fn point_contacts(x: &[Vec3], w: &mut [Vec3], system: &MassSystem, radius: f64, e: f64) {
    let n = x.len();
    let reach2 = (2.0 * radius) * (2.0 * radius);
    for i in 0..n {
        if system.is_control(i) {
            continue;
        }
        for j in (i + 1)..n {
            if system.is_control(j) {
                continue;
            }
            let d = x[j] - x[i];
            let d2 = d.norm_squared();
            if d2 >= reach2 || d2 == 0.0 {
                continue;
            }
            let normal = d / d2.sqrt();
            let approach = (w[j] - w[i]).dot(normal);
            if approach >= 0.0 {
                continue;
            }
            let (mi, mj) = (system.masses()[i], system.masses()[j]);
            let impulse = -(1.0 + e) * approach / (1.0 / mi + 1.0 / mj);
            w[i] -= normal * (impulse / mi);
            w[j] += normal * (impulse / mj);
        }
    }
}

/// Advances positions and velocities by one substep given precomputed forces.
pub(crate) fn integrate(
    x: &mut [Vec3],
    v: &mut [Vec3],
    forces: &[Vec3],
    system: &MassSystem,
    globals: &GlobalPhysicalParams,
    prescribed: Option<&[Vec3]>,
    record: Option<&mut StepRecord>,
) {
    let dt = globals.dt;
    let drag = globals.drag;
    let masses = system.masses();
    let has_prescribed = prescribed.is_some();

    for i in 0..x.len() {
        if !(has_prescribed && system.is_control(i)) {
            v[i] = (v[i] + forces[i] * (dt / masses[i])) * drag;
        }
    }
    if let Some(r) = globals.point_collision_radius {
        point_contacts(x, v, system, r, globals.restitution);
    }
    if let Some(rec) = record {
        rec.pre_contact.clear();
        rec.pre_contact.extend_from_slice(v);
    }
    for i in 0..x.len() {
        if let (Some(targets), Some(slot)) = (prescribed, system.control_slot(i)) {
            let p = targets[slot];
            v[i] = (p - x[i]) / dt;
            x[i] = p;
            continue;
        }
        match ground_response(x[i], v[i], globals) {
            Some(corrected) => {
                v[i] = corrected;
                let mut next = x[i] + corrected * dt;
                if next.y < globals.ground_height {
                    next.y = globals.ground_height;
                }
                x[i] = next;
            }
            None => x[i] += v[i] * dt,
        }
    }
}

/// Forces plus integration for one substep, in place.
#[allow(clippy::too_many_arguments)]
pub(crate) fn substep(
    x: &mut [Vec3],
    v: &mut [Vec3],
    forces: &mut [Vec3],
    system: &MassSystem,
    topology: &SpringTopology,
    springs: &SpringParams,
    globals: &GlobalPhysicalParams,
    prescribed: Option<&[Vec3]>,
    frame: usize,
    record: Option<&mut StepRecord>,
) -> Result<()> {
    accumulate_into(
        x,
        v,
        system,
        topology,
        springs,
        globals.gravity,
        frame,
        forces,
    )?;
    integrate(x, v, forces, system, globals, prescribed, record);
    Ok(())
}

/// One drag-damped explicit Euler step with ground contact.
///
/// Free points take `v' = drag * (v + dt F / m)`, then the contact response,
/// then `x' = x + dt v'`. Control points listed in `prescribed` (ordered like
/// `system.control_indices()`) jump to their targets with the matching
/// finite-difference velocity. `frame_index` is not advanced.
pub fn euler_step(
    state: &MassSystemState,
    forces: &[Vec3],
    system: &MassSystem,
    globals: &GlobalPhysicalParams,
    prescribed: Option<&[Vec3]>,
) -> Result<MassSystemState> {
    if !(globals.dt > 0.0) {
        return Err(Error::config(format!(
            "dt must be positive, got {}",
            globals.dt
        )));
    }
    state.check(system)?;
    if forces.len() != system.len() {
        return Err(Error::shape(format!(
            "{} forces for {} points",
            forces.len(),
            system.len()
        )));
    }
    if let Some(p) = prescribed {
        if p.len() != system.control_indices().len() {
            return Err(Error::shape(
                "prescribed positions must cover every control point",
            ));
        }
    }
    let mut next = state.clone();
    integrate(
        &mut next.positions,
        &mut next.velocities,
        forces,
        system,
        globals,
        prescribed,
        None,
    );
    Ok(next)
}
