use serde::{Deserialize, Serialize};

use crate::sim::SpringParams;
use crate::topology::{Bounds, HomogeneousInit};

/// Width of the saturating band at each end of a log-space range, as a
/// fraction of the range.
pub const CLAMP_MARGIN: f64 = 0.05;

/// Stiffness and dashpot ranges in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterBounds {
    pub stiffness: (f64, f64),
    pub dashpot: (f64, f64),
}

impl From<&Bounds> for ParameterBounds {
    fn from(b: &Bounds) -> Self {
        ParameterBounds {
            stiffness: b.stiffness,
            dashpot: b.dashpot,
        }
    }
}

/// Smooth clamp of `u` into `(lo, hi)`. The identity holds on
/// `[min(u0, lo + m), max(u0, hi - m)]`; outside it tanh tails approach the
/// bounds with matching slope. Returns the value and its derivative.
pub fn soft_clamp(u: f64, u0: f64, lo: f64, hi: f64) -> (f64, f64) {
    let m = CLAMP_MARGIN * (hi - lo);
    let a = u0.min(lo + m).max(lo);
    let b = u0.max(hi - m).min(hi);
    if u < a {
        let w = a - lo;
        if w <= 0.0 {
            return (lo, 0.0);
        }
        let t = ((a - u) / w).tanh();
        (a - w * t, 1.0 - t * t)
    } else if u > b {
        let w = hi - b;
        if w <= 0.0 {
            return (hi, 0.0);
        }
        let t = ((u - b) / w).tanh();
        (b + w * t, 1.0 - t * t)
    } else {
        (u, 1.0)
    }
}

/// Per-edge parameters from log residuals, plus `d param / d residual`.
pub fn materialize_residuals(
    residuals: &[[f64; 2]],
    s0: &HomogeneousInit,
    bounds: &ParameterBounds,
) -> (SpringParams, Vec<[f64; 2]>) {
    let (klo, khi) = (bounds.stiffness.0.ln(), bounds.stiffness.1.ln());
    let (glo, ghi) = (bounds.dashpot.0.ln(), bounds.dashpot.1.ln());
    let mut params = SpringParams {
        stiffness: Vec::with_capacity(residuals.len()),
        dashpot: Vec::with_capacity(residuals.len()),
    };
    let mut jac = Vec::with_capacity(residuals.len());
    for r in residuals {
        let (uk, dk) = soft_clamp(s0.log_stiffness + r[0], s0.log_stiffness, klo, khi);
        let (ug, dg) = soft_clamp(s0.log_dashpot + r[1], s0.log_dashpot, glo, ghi);
        // exp(ln hi) can land one ulp past hi
        let k = uk.exp().clamp(bounds.stiffness.0, bounds.stiffness.1);
        let g = ug.exp().clamp(bounds.dashpot.0, bounds.dashpot.1);
        params.stiffness.push(k);
        params.dashpot.push(g);
        jac.push([k * dk, g * dg]);
    }
    (params, jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s0() -> HomogeneousInit {
        HomogeneousInit {
            log_stiffness: 300f64.ln(),
            log_dashpot: 0.0,
            drag: 0.99,
            restitution: 0.5,
            friction: 0.5,
        }
    }

    fn bounds() -> ParameterBounds {
        ParameterBounds {
            stiffness: (1.0, 1e5),
            dashpot: (1e-3, 100.0),
        }
    }

    #[test]
    fn zero_residual_is_identity() {
        let (p, jac) = materialize_residuals(&[[0.0, 0.0]; 3], &s0(), &bounds());
        assert!(p.stiffness.iter().all(|k| *k == s0().stiffness()));
        assert!(p.dashpot.iter().all(|g| *g == s0().dashpot()));
        assert!((jac[0][0] - 300.0).abs() < 1e-9);
    }

    #[test]
    fn ln2_doubles_stiffness() {
        let (p, _) = materialize_residuals(&[[2f64.ln(), 0.0]], &s0(), &bounds());
        assert!((p.stiffness[0] / 600.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn saturates_monotonically_at_bounds() {
        let mut prev = 0.0;
        for d in [5.0, 10.0, 20.0, 50.0, 1e3, 1e9] {
            let (p, _) = materialize_residuals(&[[d, d]], &s0(), &bounds());
            assert!(p.stiffness[0] <= 1e5 && p.stiffness[0] >= prev);
            prev = p.stiffness[0];
        }
        assert!((prev - 1e5).abs() < 1e-6 * 1e5);
        let (p, _) = materialize_residuals(&[[-1e9, -1e9]], &s0(), &bounds());
        assert!(p.stiffness[0] > 0.0 && p.dashpot[0] > 0.0);
        assert!((p.stiffness[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn init_at_bound_stays_finite() {
        let (v, d) = soft_clamp(0.0, 0.0, 0.0, 1.0);
        assert_eq!((v, d), (0.0, 1.0));
        let (v, d) = soft_clamp(-3.0, 0.0, 0.0, 1.0);
        assert_eq!((v, d), (0.0, 0.0));
    }

    proptest! {
        #[test]
        fn derivative_matches_differences(u in -30.0f64..30.0, u0 in -1.9f64..9.9) {
            let (lo, hi) = (-2.0, 10.0);
            let h = 1e-6;
            let (v, d) = soft_clamp(u, u0, lo, hi);
            prop_assert!(v > lo - 1e-12 && v < hi + 1e-12);
            let fd = (soft_clamp(u + h, u0, lo, hi).0 - soft_clamp(u - h, u0, lo, hi).0) / (2.0 * h);
            prop_assert!((fd - d).abs() < 1e-5);
        }
    }
}
