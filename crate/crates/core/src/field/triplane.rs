use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Coordinate axes spanned by each plane, as `(u, v)`: xy, yz, xz.
pub const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];

/// Grid coordinates closer than this to an integer are snapped onto the node.
const NODE_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl BoundingBox {
    pub fn of_points(points: &[Vec3]) -> Result<Self> {
        let first = *points
            .first()
            .ok_or_else(|| Error::config("bounding box of no points"))?;
        let (min, max) = points
            .iter()
            .fold((first, first), |(lo, hi), p| (lo.min(*p), hi.max(*p)));
        Ok(BoundingBox { min, max })
    }

    /// Grows every axis about its center by `fraction` of its extent.
    pub fn expanded(&self, fraction: f64) -> Self {
        let pad = (self.max - self.min) * (0.5 * fraction);
        BoundingBox {
            min: self.min - pad,
            max: self.max + pad,
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// Axes may be flat (`min == max`); inverted or non-finite boxes are rejected.
    pub fn validate(&self) -> Result<()> {
        if !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::config("bounding box is not finite"));
        }
        for a in 0..3 {
            if self.min[a] > self.max[a] {
                return Err(Error::config(format!("bounding box inverted on axis {a}")));
            }
        }
        Ok(())
    }
}

/// Affine map of the box onto `[-1, 1]^3`, clamping outside points. A flat
/// axis maps to 0.
pub fn normalize_coord(p: Vec3, bbox: &BoundingBox) -> Vec3 {
    let axis = |a: usize| {
        let (lo, hi) = (bbox.min[a], bbox.max[a]);
        if hi > lo {
            (2.0 * (p[a] - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    };
    Vec3::new(axis(0), axis(1), axis(2))
}

/// Lower node and fractional offset along one grid axis. Nodes sit at cell
/// centers, `t = (s + 1) n / 2 - 1/2`, clamped to the outermost nodes.
fn grid_coord(s: f64, n: usize) -> (usize, f64) {
    let top = (n - 1) as f64;
    let mut t = ((s + 1.0) * n as f64 * 0.5 - 0.5).clamp(0.0, top);
    let r = t.round();
    if (t - r).abs() < NODE_SNAP {
        t = r;
    }
    let i0 = (t.floor() as usize).min(n - 2);
    (i0, t - i0 as f64)
}

/// Bilinear stencil on one `n x n` plane: node indices (row-major, `v * n + u`)
/// and weights of the four surrounding nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneSample {
    pub nodes: [usize; 4],
    pub weights: [f64; 4],
}

impl PlaneSample {
    pub fn at(u: f64, v: f64, n: usize) -> Self {
        let (iu, fu) = grid_coord(u, n);
        let (iv, fv) = grid_coord(v, n);
        let base = iv * n + iu;
        PlaneSample {
            nodes: [base, base + 1, base + n, base + n + 1],
            weights: [
                (1.0 - fu) * (1.0 - fv),
                fu * (1.0 - fv),
                (1.0 - fu) * fv,
                fu * fv,
            ],
        }
    }

    /// Adds the interpolated `channels`-vector of `plane` into `out`.
    pub fn gather(&self, plane: &[f64], channels: usize, out: &mut [f64]) {
        for c in 0..channels {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += self.weights[k] * plane[self.nodes[k] * channels + c];
            }
            out[c] += acc;
        }
    }

    pub fn scatter(&self, grad_feature: &[f64], channels: usize, grad_plane: &mut [f64]) {
        for k in 0..4 {
            let w = self.weights[k];
            if w == 0.0 {
                continue;
            }
            let base = self.nodes[k] * channels;
            for c in 0..channels {
                grad_plane[base + c] += w * grad_feature[c];
            }
        }
    }
}

pub fn plane_samples(p: Vec3, n: usize) -> [PlaneSample; 3] {
    PLANE_AXES.map(|(a, b)| PlaneSample::at(p[a], p[b], n))
}

/// Sum of the bilinearly interpolated features of the three planes at a
/// normalized point. Each plane is `n x n x channels`, row-major.
pub fn triplane_query(planes: &[Vec<f64>; 3], n: usize, channels: usize, p: Vec3) -> Vec<f64> {
    let mut out = vec![0.0; channels];
    for (sample, plane) in plane_samples(p, n).iter().zip(planes) {
        sample.gather(plane, channels, &mut out);
    }
    out
}

/// Per band `l`: `sin(2^l pi p)` for x, y, z then `cos(2^l pi p)` for x, y, z.
pub fn fourier_encode(p: Vec3, bands: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(6 * bands);
    for l in 0..bands {
        let f = (1u64 << l) as f64 * std::f64::consts::PI;
        for a in 0..3 {
            out.push((f * p[a]).sin());
        }
        for a in 0..3 {
            out.push((f * p[a]).cos());
        }
    }
    out
}
