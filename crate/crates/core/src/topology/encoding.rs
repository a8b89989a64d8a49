use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::knn::KnnParams;

/// Codes are clamped to this magnitude before squashing.
pub const CODE_LIMIT: f64 = 20.0;

/// Homogeneous physical parameters shared by every spring during topology search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousInit {
    pub log_stiffness: f64,
    pub log_dashpot: f64,
    pub drag: f64,
    pub restitution: f64,
    pub friction: f64,
}

impl HomogeneousInit {
    pub fn stiffness(&self) -> f64 {
        self.log_stiffness.exp()
    }

    pub fn dashpot(&self) -> f64 {
        self.log_dashpot.exp()
    }
}

/// Search bounds. The radius range is relative to the median
/// nearest-neighbor spacing of the canonical points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub max_neighbors: usize,
    pub radius_scale: (f64, f64),
    pub stiffness: (f64, f64),
    pub dashpot: (f64, f64),
    pub drag: (f64, f64),
    pub restitution: (f64, f64),
    pub friction: (f64, f64),
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            max_neighbors: 12,
            radius_scale: (0.5, 4.0),
            stiffness: (1.0, 1e5),
            dashpot: (1e-3, 100.0),
            drag: (0.5, 1.0),
            restitution: (0.0, 1.0),
            friction: (0.0, 2.0),
        }
    }
}

impl BoundsConfig {
    pub fn resolve(&self, median_spacing: f64) -> Result<Bounds> {
        let b = Bounds {
            max_neighbors: self.max_neighbors,
            radius: (
                self.radius_scale.0 * median_spacing,
                self.radius_scale.1 * median_spacing,
            ),
            stiffness: self.stiffness,
            dashpot: self.dashpot,
            drag: self.drag,
            restitution: self.restitution,
            friction: self.friction,
        };
        b.validate()?;
        Ok(b)
    }
}

/// Absolute bounds for every decision variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub max_neighbors: usize,
    pub radius: (f64, f64),
    pub stiffness: (f64, f64),
    pub dashpot: (f64, f64),
    pub drag: (f64, f64),
    pub restitution: (f64, f64),
    pub friction: (f64, f64),
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, (lo, hi): (f64, f64), positive: bool| {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) || (positive && lo <= 0.0) {
                Err(Error::config(format!("invalid {name} bounds [{lo}, {hi}]")))
            } else {
                Ok(())
            }
        };
        if self.max_neighbors < 1 {
            return Err(Error::config("max_neighbors bound must be at least 1"));
        }
        ordered("radius", self.radius, true)?;
        ordered("stiffness", self.stiffness, true)?;
        ordered("dashpot", self.dashpot, true)?;
        ordered("drag", self.drag, true)?;
        ordered("restitution", self.restitution, false)?;
        ordered("friction", self.friction, false)?;
        if self.drag.1 > 1.0
            || self.restitution.0 < 0.0
            || self.restitution.1 > 1.0
            || self.friction.0 < 0.0
        {
            return Err(Error::config(
                "drag must stay in (0,1], restitution in [0,1], friction >= 0",
            ));
        }
        Ok(())
    }

    fn log_range(r: (f64, f64)) -> (f64, f64) {
        (r.0.ln(), r.1.ln())
    }
}

#[inline]
fn sigmoid(c: f64) -> f64 {
    let c = c.clamp(-CODE_LIMIT, CODE_LIMIT);
    1.0 / (1.0 + (-c).exp())
}

#[inline]
fn logit(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    (u / (1.0 - u)).ln().clamp(-CODE_LIMIT, CODE_LIMIT)
}

/// Maps an unbounded code into `[lo, hi]`; code 0 gives the midpoint.
#[inline]
fn squash(code: f64, (lo, hi): (f64, f64)) -> f64 {
    (lo + (hi - lo) * sigmoid(code)).clamp(lo, hi)
}

#[inline]
fn unsquash(value: f64, (lo, hi): (f64, f64)) -> f64 {
    logit((value - lo) / (hi - lo))
}

/// Number of decision variables for `clusters` clusters.
pub fn decision_dimension(clusters: usize) -> usize {
    2 * clusters + 5
}

/// Decodes a decision vector laid out as `(neighbor, radius)` codes per
/// cluster followed by log-stiffness, log-dashpot, drag, restitution and
/// friction codes. Neighbor counts, radii, stiffness and dashpot are squashed
/// in log space; the rest linearly.
pub fn decode(
    x: &[f64],
    clusters: usize,
    bounds: &Bounds,
) -> Result<(Vec<KnnParams>, HomogeneousInit)> {
    if x.len() != decision_dimension(clusters) {
        return Err(Error::shape(format!(
            "decision vector has {} entries, expected {}",
            x.len(),
            decision_dimension(clusters)
        )));
    }
    let k_range = (0.0, (bounds.max_neighbors as f64).ln());
    let per_cluster = (0..clusters)
        .map(|c| {
            let k = squash(x[2 * c], k_range).exp().round() as usize;
            KnnParams {
                max_neighbors: k.clamp(1, bounds.max_neighbors),
                radius: squash(x[2 * c + 1], Bounds::log_range(bounds.radius)).exp(),
            }
        })
        .collect();
    let p = &x[2 * clusters..];
    let init = HomogeneousInit {
        log_stiffness: squash(p[0], Bounds::log_range(bounds.stiffness)),
        log_dashpot: squash(p[1], Bounds::log_range(bounds.dashpot)),
        drag: squash(p[2], bounds.drag),
        restitution: squash(p[3], bounds.restitution),
        friction: squash(p[4], bounds.friction),
    };
    Ok((per_cluster, init))
}

/// Inverse of [`decode`] for in-bound values; out-of-bound values saturate.
pub fn encode(per_cluster: &[KnnParams], init: &HomogeneousInit, bounds: &Bounds) -> Vec<f64> {
    let k_range = (0.0, (bounds.max_neighbors as f64).ln());
    let mut x = Vec::with_capacity(decision_dimension(per_cluster.len()));
    for p in per_cluster {
        x.push(unsquash((p.max_neighbors as f64).ln(), k_range));
        x.push(unsquash(p.radius.ln(), Bounds::log_range(bounds.radius)));
    }
    x.push(unsquash(
        init.log_stiffness,
        Bounds::log_range(bounds.stiffness),
    ));
    x.push(unsquash(
        init.log_dashpot,
        Bounds::log_range(bounds.dashpot),
    ));
    x.push(unsquash(init.drag, bounds.drag));
    x.push(unsquash(init.restitution, bounds.restitution));
    x.push(unsquash(init.friction, bounds.friction));
    x
}
