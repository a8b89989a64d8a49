//! Reverse pass of one simulation substep.

use crate::sim::{
    friction_scale, GlobalPhysicalParams, MassSystem, SpringParams, SpringTopology, StepRecord,
    CONTACT_EPS, DEGENERATE_EPS,
};
use crate::vec3::Vec3;

/// Adjoint of `(x', v')` mapped back to `(x, v)`, plus spring parameter
/// gradients accumulated into `gk` and `gd`.
///
/// `x` and `v` are the substep inputs and `record` its pre-contact
/// velocities; control points are assumed prescribed and point-point
/// contacts disabled. Contact branches are taken from the forward values.
#[allow(clippy::too_many_arguments)]
pub(crate) fn substep_adjoint(
    x: &[Vec3],
    v: &[Vec3],
    record: &StepRecord,
    system: &MassSystem,
    topology: &SpringTopology,
    springs: &SpringParams,
    globals: &GlobalPhysicalParams,
    xbar: &mut [Vec3],
    vbar: &mut [Vec3],
    gk: &mut [f64],
    gd: &mut [f64],
) {
    let dt = globals.dt;
    let drag = globals.drag;
    let e = globals.restitution;
    let c = globals.friction * (1.0 + e);
    let n = x.len();
    let masses = system.masses();

    // force adjoint and fresh (x, v) adjoints
    let mut fbar = vec![Vec3::ZERO; n];
    let mut xin = vec![Vec3::ZERO; n];
    let mut vin = vec![Vec3::ZERO; n];

    for i in 0..n {
        let (xo, vo) = (xbar[i], vbar[i]);
        if system.is_control(i) {
            // v' = (p - x) / dt, x' = p
            xin[i] -= vo / dt;
            continue;
        }
        let w = record.pre_contact[i];
        let in_contact = x[i].y < globals.ground_height && w.y < 0.0;
        let wbar = if in_contact {
            let tang = (w.x * w.x + w.z * w.z).sqrt();
            let s = friction_scale(w.y.abs(), tang, e, globals.friction);
            let out = Vec3::new(w.x * s, -e * w.y, w.z * s);
            let mut xo = xo;
            if x[i].y + out.y * dt < globals.ground_height {
                xo.y = 0.0;
            }
            xin[i] += xo;
            let g = vo + xo * dt;
            let (ds_dy, ds_dx, ds_dz) = if s > 0.0 {
                let den = tang + CONTACT_EPS;
                let dy = c / den;
                if tang > 0.0 {
                    let k = -c * w.y / (den * den * tang);
                    (dy, k * w.x, k * w.z)
                } else {
                    (dy, 0.0, 0.0)
                }
            } else {
                (0.0, 0.0, 0.0)
            };
            let proj = g.x * w.x + g.z * w.z;
            Vec3::new(
                g.x * s + proj * ds_dx,
                -e * g.y + proj * ds_dy,
                g.z * s + proj * ds_dz,
            )
        } else {
            xin[i] += xo;
            vo + xo * dt
        };
        // w = drag (v + dt F / m)
        vin[i] += wbar * drag;
        fbar[i] = wbar * (drag * dt / masses[i]);
    }

    for (ei, &(i, j)) in topology.edges.iter().enumerate() {
        let fe = fbar[i] - fbar[j];
        let d = x[j] - x[i];
        let len = d.norm();
        if len >= DEGENERATE_EPS {
            let u = d / len;
            let k = springs.stiffness[ei];
            let l = topology.rest_lengths[ei];
            let r = l / len;
            let dbar = (fe * (1.0 - r) + u * (r * u.dot(fe))) * k;
            xin[j] += dbar;
            xin[i] -= dbar;
            gk[ei] += fe.dot(u) * (len - l);
        }
        let g = springs.dashpot[ei];
        let rel = v[i] - v[j];
        vin[i] -= fe * g;
        vin[j] += fe * g;
        gd[ei] -= fe.dot(rel);
    }

    xbar.copy_from_slice(&xin);
    vbar.copy_from_slice(&vin);
}
