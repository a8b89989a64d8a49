//! Tri-plane spring field: three axis-aligned feature planes plus a small
//! MLP, queried at spring midpoints in the canonical frame to produce log
//! residuals of stiffness and dashpot over the homogeneous estimate.

mod materialize;
mod mlp;
mod triplane;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{SpringParams, SpringTopology};
use crate::topology::HomogeneousInit;
use crate::vec3::Vec3;

pub use materialize::{materialize_residuals, soft_clamp, ParameterBounds, CLAMP_MARGIN};
pub use mlp::{DenseLayer, Mlp};
pub use triplane::{
    fourier_encode, normalize_coord, plane_samples, triplane_query, BoundingBox, PlaneSample,
    PLANE_AXES,
};

/// Number of outputs: log-stiffness and log-dashpot residuals.
pub const FIELD_OUTPUTS: usize = 2;

pub fn midpoint(edge: (usize, usize), positions: &[Vec3]) -> Vec3 {
    (positions[edge.0] + positions[edge.1]) * 0.5
}

/// `max(4, round(coefficient * sqrt(edge_count)))`.
pub fn resolution_for(edge_count: usize, coefficient: f64) -> usize {
    ((coefficient * (edge_count as f64).sqrt()).round() as usize).max(4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub channels: usize,
    pub resolution_coefficient: f64,
    pub fourier_bands: usize,
    pub hidden: usize,
    pub init_scale: f64,
    pub residual_scale: f64,
    pub bbox_margin: f64,
    pub seed: u64,
    /// Share one dashpot residual (the mean over springs) across all springs.
    pub tie_dashpot: bool,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            channels: 32,
            resolution_coefficient: 0.85,
            fourier_bands: 6,
            hidden: 128,
            init_scale: 1e-2,
            residual_scale: 1.0,
            bbox_margin: 0.05,
            seed: 0,
            tie_dashpot: false,
        }
    }
}

/// Named slice of the flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriPlaneField {
    pub resolution: usize,
    pub channels: usize,
    pub fourier_bands: usize,
    pub bbox: BoundingBox,
    /// xy, yz, xz; each `resolution x resolution x channels`, row-major with
    /// the second plane axis as row: `(v * N + u) * C + c`.
    pub planes: [Vec<f64>; 3],
    pub mlp: Mlp,
    pub residual_scale: f64,
    pub seed: u64,
    #[serde(default)]
    pub tie_dashpot: bool,
}

/// Precomputed inputs for one query point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldQuery {
    pub samples: [PlaneSample; 3],
    pub fourier: Vec<f64>,
}

/// Fresh field for a topology with `edge_count` springs over `positions`:
/// zero planes and a zero output layer, so every residual is exactly zero.
pub fn init_field(
    edge_count: usize,
    positions: &[Vec3],
    config: &FieldConfig,
) -> Result<TriPlaneField> {
    if edge_count == 0 {
        return Err(Error::config("field needs at least one spring"));
    }
    if config.channels == 0 || config.hidden == 0 {
        return Err(Error::config(
            "field channels and hidden width must be positive",
        ));
    }
    let n = resolution_for(edge_count, config.resolution_coefficient);
    let bbox = BoundingBox::of_points(positions)?.expanded(config.bbox_margin);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let input = config.channels + 6 * config.fourier_bands;
    let field = TriPlaneField {
        resolution: n,
        channels: config.channels,
        fourier_bands: config.fourier_bands,
        bbox,
        planes: std::array::from_fn(|_| vec![0.0; n * n * config.channels]),
        mlp: Mlp::new(
            input,
            config.hidden,
            FIELD_OUTPUTS,
            config.init_scale,
            &mut rng,
        ),
        residual_scale: config.residual_scale,
        seed: config.seed,
        tie_dashpot: config.tie_dashpot,
    };
    field.validate()?;
    Ok(field)
}

impl TriPlaneField {
    pub fn plane_len(&self) -> usize {
        self.resolution * self.resolution * self.channels
    }

    pub fn input_dim(&self) -> usize {
        self.channels + 6 * self.fourier_bands
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 4 {
            return Err(Error::shape(format!(
                "field resolution {} below 4",
                self.resolution
            )));
        }
        self.bbox.validate()?;
        if self.planes.iter().any(|p| p.len() != self.plane_len()) {
            return Err(Error::shape(
                "plane size does not match resolution and channels",
            ));
        }
        if !self.mlp.is_consistent()
            || self.mlp.input_dim() != self.input_dim()
            || self.mlp.output_dim() != FIELD_OUTPUTS
        {
            return Err(Error::shape("MLP shape does not match field"));
        }
        if !self.residual_scale.is_finite() {
            return Err(Error::config("residual scale must be finite"));
        }
        if let Some(block) = self.first_non_finite() {
            return Err(Error::NonFinite(format!("field parameter block {block}")));
        }
        Ok(())
    }

    fn first_non_finite(&self) -> Option<String> {
        let values = self.flatten();
        self.blocks()
            .into_iter()
            .find(|b| {
                values[b.offset..b.offset + b.len]
                    .iter()
                    .any(|v| !v.is_finite())
            })
            .map(|b| b.name)
    }

    pub fn query(&self, p: Vec3) -> FieldQuery {
        let q = normalize_coord(p, &self.bbox);
        FieldQuery {
            samples: plane_samples(q, self.resolution),
            fourier: fourier_encode(q, self.fourier_bands),
        }
    }

    /// MLP input for a prepared query: summed plane features then Fourier terms.
    pub fn network_input(&self, q: &FieldQuery) -> Vec<f64> {
        let mut input = vec![0.0; self.channels];
        for (s, plane) in q.samples.iter().zip(&self.planes) {
            s.gather(plane, self.channels, &mut input);
        }
        input.extend_from_slice(&q.fourier);
        input
    }

    pub fn eval_query(&self, q: &FieldQuery) -> [f64; 2] {
        let out = self.mlp.forward(&self.network_input(q));
        [self.residual_scale * out[0], self.residual_scale * out[1]]
    }

    /// Residuals `(dlog k, dlog gamma)` at a point in world coordinates.
    pub fn eval_point(&self, p: Vec3) -> [f64; 2] {
        self.eval_query(&self.query(p))
    }

    pub fn field_eval(
        &self,
        edge_index: usize,
        edge: (usize, usize),
        positions: &[Vec3],
    ) -> Result<[f64; 2]> {
        let out = self.eval_point(midpoint(edge, positions));
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::NonFinite(format!(
                "field output on edge {edge_index} {edge:?}"
            )))
        }
    }

    pub fn prepare(&self, topology: &SpringTopology, positions: &[Vec3]) -> Vec<FieldQuery> {
        topology
            .edges
            .iter()
            .map(|e| self.query(midpoint(*e, positions)))
            .collect()
    }

    pub fn eval_prepared(&self, queries: &[FieldQuery]) -> Result<Vec<[f64; 2]>> {
        let mut out = queries
            .iter()
            .enumerate()
            .map(|(e, q)| {
                let out = self.eval_query(q);
                if out.iter().all(|v| v.is_finite()) {
                    Ok(out)
                } else {
                    Err(Error::NonFinite(format!("field output on edge {e}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if self.tie_dashpot {
            tie_second(&mut out);
        }
        Ok(out)
    }

    /// Accumulates into `grad` (flattened layout) the gradient of
    /// `sum_e grad_out[e] . residual(e)`.
    pub fn backward_prepared(
        &self,
        queries: &[FieldQuery],
        grad_out: &[[f64; 2]],
        grad: &mut [f64],
    ) {
        let plane_len = self.plane_len();
        let (plane_grad, mlp_grad) = grad.split_at_mut(3 * plane_len);
        let mut acts = Vec::new();
        // averaging is symmetric, so its adjoint is the same averaging
        let mut tied;
        let grad_out = if self.tie_dashpot {
            tied = grad_out.to_vec();
            tie_second(&mut tied);
            &tied[..]
        } else {
            grad_out
        };
        for (q, g) in queries.iter().zip(grad_out) {
            if g[0] == 0.0 && g[1] == 0.0 {
                continue;
            }
            self.mlp.forward_cached(&self.network_input(q), &mut acts);
            let scaled = [self.residual_scale * g[0], self.residual_scale * g[1]];
            let gin = self.mlp.backward(&acts, &scaled, mlp_grad);
            for (p, s) in q.samples.iter().enumerate() {
                s.scatter(
                    &gin[..self.channels],
                    self.channels,
                    &mut plane_grad[p * plane_len..(p + 1) * plane_len],
                );
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        3 * self.plane_len() + self.mlp.parameter_count()
    }

    pub fn blocks(&self) -> Vec<ParameterBlock> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, len: usize| {
            blocks.push(ParameterBlock { name, offset, len });
            offset += len;
        };
        for name in ["plane_xy", "plane_yz", "plane_xz"] {
            push(name.to_string(), self.plane_len());
        }
        for (l, layer) in self.mlp.layers.iter().enumerate() {
            push(format!("mlp{l}.weight"), layer.weights.len());
            push(format!("mlp{l}.bias"), layer.biases.len());
        }
        blocks
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for p in &self.planes {
            out.extend_from_slice(p);
        }
        self.mlp.flatten_into(&mut out);
        out
    }

    pub fn assign(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::shape(format!(
                "expected {} field parameters, got {}",
                self.parameter_count(),
                values.len()
            )));
        }
        let plane_len = self.plane_len();
        for (p, plane) in self.planes.iter_mut().enumerate() {
            plane.copy_from_slice(&values[p * plane_len..(p + 1) * plane_len]);
        }
        self.mlp.assign_from(&values[3 * plane_len..]);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let field: TriPlaneField = crate::io::read_json(path)?;
        field.validate()?;
        Ok(field)
    }
}

/// Replaces the second component of every entry with their mean.
fn tie_second(values: &mut [[f64; 2]]) {
    if values.is_empty() {
        return;
    }
    let mean = values.iter().map(|v| v[1]).sum::<f64>() / values.len() as f64;
    for v in values {
        v[1] = mean;
    }
}

/// Per-edge spring parameters `S0 + F(x_mid(e))`, softly clamped to `bounds`.
pub fn materialize_spring_params(
    field: &TriPlaneField,
    s0: &HomogeneousInit,
    bounds: &ParameterBounds,
    topology: &SpringTopology,
    positions: &[Vec3],
) -> Result<SpringParams> {
    let residuals = field.eval_prepared(&field.prepare(topology, positions))?;
    Ok(materialize_residuals(&residuals, s0, bounds).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cloud(seed: u64, n: usize) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.0..2.0),
                    rng.random_range(-0.5..0.5),
                )
            })
            .collect()
    }

    fn small_config() -> FieldConfig {
        FieldConfig {
            channels: 3,
            fourier_bands: 2,
            hidden: 8,
            seed: 4,
            ..FieldConfig::default()
        }
    }

    fn randomized(field: &mut TriPlaneField, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..field.parameter_count())
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        field.assign(&values).unwrap();
    }

    #[test]
    fn resolution_rule() {
        assert_eq!(resolution_for(10000, 0.85), 85);
        assert_eq!(resolution_for(16, 0.85), 4);
        assert_eq!(resolution_for(1, 0.85), 4);
    }

    #[test]
    fn midpoint_examples() {
        let p = [
            Vec3::ZERO,
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 1.0),
        ];
        assert_eq!(midpoint((0, 1), &p), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(midpoint((2, 2), &p), p[2]);
        assert_eq!(midpoint((1, 2), &p), midpoint((2, 1), &p));
    }

    #[test]
    fn fresh_field_is_zero_everywhere() {
        let pts = cloud(1, 30);
        let topo = SpringTopology::from_pairs((0..29).map(|i| (i, i + 1)), &pts);
        let field = init_field(topo.len(), &pts, &FieldConfig::default()).unwrap();
        assert_eq!(field.channels, 32);
        assert_eq!(field.mlp.input_dim(), 32 + 36);
        for (e, edge) in topo.edges.iter().enumerate() {
            assert_eq!(field.field_eval(e, *edge, &pts).unwrap(), [0.0, 0.0]);
        }
        let s0 = HomogeneousInit {
            log_stiffness: 123f64.ln(),
            log_dashpot: 0.7f64.ln(),
            drag: 1.0,
            restitution: 0.0,
            friction: 0.0,
        };
        let bounds = ParameterBounds {
            stiffness: (1.0, 1e5),
            dashpot: (1e-3, 1e2),
        };
        let params = materialize_spring_params(&field, &s0, &bounds, &topo, &pts).unwrap();
        assert!(params.stiffness.iter().all(|k| *k == s0.stiffness()));
        assert!(params.dashpot.iter().all(|g| *g == s0.dashpot()));
    }

    #[test]
    fn zero_edges_rejected() {
        assert!(init_field(0, &cloud(0, 3), &FieldConfig::default()).is_err());
    }

    /// Straight-line re-implementation of the field on flat parameters.
    fn reference_eval(field: &TriPlaneField, p: Vec3) -> [f64; 2] {
        let (n, c) = (field.resolution, field.channels);
        let mut q = [0.0; 3];
        for a in 0..3 {
            let (lo, hi) = (field.bbox.min[a], field.bbox.max[a]);
            q[a] = if hi > lo {
                (2.0 * (p[a] - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
            } else {
                0.0
            };
        }
        let mut feat = vec![0.0; c];
        for (plane, (a, b)) in field.planes.iter().zip([(0, 1), (1, 2), (0, 2)]) {
            let cell = |s: f64| {
                let t = ((s + 1.0) * n as f64 / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
                let i = (t.floor() as usize).min(n - 2);
                (i, t - i as f64)
            };
            let (i, fu) = cell(q[a]);
            let (j, fv) = cell(q[b]);
            for (ch, f) in feat.iter_mut().enumerate() {
                let at = |u: usize, v: usize| plane[(v * n + u) * c + ch];
                *f += (1.0 - fu) * (1.0 - fv) * at(i, j)
                    + fu * (1.0 - fv) * at(i + 1, j)
                    + (1.0 - fu) * fv * at(i, j + 1)
                    + fu * fv * at(i + 1, j + 1);
            }
        }
        let mut x = feat;
        for l in 0..field.fourier_bands {
            let w = 2f64.powi(l as i32) * std::f64::consts::PI;
            x.extend(q.iter().map(|v| (w * v).sin()));
            x.extend(q.iter().map(|v| (w * v).cos()));
        }
        let nl = field.mlp.layers.len();
        for (l, layer) in field.mlp.layers.iter().enumerate() {
            let mut y: Vec<f64> = (0..layer.outputs)
                .map(|o| {
                    layer.biases[o]
                        + (0..layer.inputs)
                            .map(|i| layer.weights[o * layer.inputs + i] * x[i])
                            .sum::<f64>()
                })
                .collect();
            if l + 1 < nl {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            x = y;
        }
        [field.residual_scale * x[0], field.residual_scale * x[1]]
    }

    #[test]
    fn matches_reference_implementation() {
        let pts = cloud(7, 40);
        let mut field = init_field(40, &pts, &small_config()).unwrap();
        randomized(&mut field, 9);
        field.residual_scale = 0.8;
        let probe = cloud(8, 200);
        for p in pts.iter().chain(&probe) {
            let a = field.eval_point(*p);
            let b = reference_eval(&field, *p);
            for k in 0..2 {
                assert!(
                    (a[k] - b[k]).abs() <= 1e-12 * (1.0 + b[k].abs()),
                    "{a:?} vs {b:?}"
                );
            }
        }
    }

    #[test]
    fn identical_midpoints_identical_outputs() {
        let pts = vec![
            Vec3::ZERO,
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(1.0, -1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
        ];
        let mut field = init_field(4, &pts, &small_config()).unwrap();
        randomized(&mut field, 2);
        assert_eq!(
            field.field_eval(0, (0, 1), &pts).unwrap(),
            field.field_eval(1, (2, 3), &pts).unwrap()
        );
    }

    #[test]
    fn continuity_at_small_offsets() {
        let pts = cloud(3, 50);
        let mut field = init_field(200, &pts, &small_config()).unwrap();
        randomized(&mut field, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for p in cloud(10, 300) {
            let d = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let q = p + d * (1e-6 / d.norm());
            let (a, b) = (field.eval_point(p), field.eval_point(q));
            assert!((a[0] - b[0]).abs() <= 1e-3 && (a[1] - b[1]).abs() <= 1e-3);
        }
    }

    #[test]
    fn adversarial_weights_stay_positive() {
        let pts = cloud(3, 20);
        let topo = SpringTopology::from_pairs((0..19).map(|i| (i, i + 1)), &pts);
        let mut field = init_field(topo.len(), &pts, &small_config()).unwrap();
        let big: Vec<f64> = (0..field.parameter_count())
            .map(|i| if i % 2 == 0 { 1e6 } else { -1e6 })
            .collect();
        field.assign(&big).unwrap();
        let s0 = HomogeneousInit {
            log_stiffness: 100f64.ln(),
            log_dashpot: 0.0,
            drag: 1.0,
            restitution: 0.0,
            friction: 0.0,
        };
        let bounds = ParameterBounds {
            stiffness: (1.0, 1e5),
            dashpot: (1e-3, 1e2),
        };
        let params = materialize_spring_params(&field, &s0, &bounds, &topo, &pts).unwrap();
        assert!(params.stiffness.iter().all(|k| *k > 0.0 && *k <= 1e5));
        assert!(params.dashpot.iter().all(|g| *g > 0.0 && *g <= 1e2));
    }

    #[test]
    fn backward_matches_differences() {
        let pts = cloud(12, 15);
        let topo = SpringTopology::from_pairs((0..14).map(|i| (i, i + 1)), &pts);
        let mut field = init_field(topo.len(), &pts, &small_config()).unwrap();
        randomized(&mut field, 13);
        let queries = field.prepare(&topo, &pts);
        let weights: Vec<[f64; 2]> = (0..topo.len())
            .map(|e| [(e as f64).sin(), (e as f64 * 0.3).cos()])
            .collect();
        let objective = |f: &TriPlaneField| -> f64 {
            f.eval_prepared(&queries)
                .unwrap()
                .iter()
                .zip(&weights)
                .map(|(r, w)| r[0] * w[0] + r[1] * w[1])
                .sum()
        };
        let mut grad = vec![0.0; field.parameter_count()];
        field.backward_prepared(&queries, &weights, &mut grad);
        let base = field.flatten();
        let h = 1e-6;
        for k in (0..base.len()).step_by(3) {
            let mut f = field.clone();
            let mut v = base.clone();
            v[k] += h;
            f.assign(&v).unwrap();
            let up = objective(&f);
            v[k] -= 2.0 * h;
            f.assign(&v).unwrap();
            let dn = objective(&f);
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() < 1e-6 * (1.0 + fd.abs()),
                "param {k}: {fd} vs {}",
                grad[k]
            );
        }
    }

    #[test]
    fn untouched_plane_cells_get_no_gradient() {
        let pts: Vec<Vec3> = (0..4)
            .map(|i| Vec3::new(i as f64 * 0.1, 0.0, 0.0))
            .collect();
        let mut all = pts.clone();
        all.push(Vec3::new(10.0, 10.0, 10.0));
        let topo = SpringTopology::from_pairs([(0, 1), (1, 2)], &pts);
        let mut field = init_field(400, &all, &small_config()).unwrap();
        randomized(&mut field, 1);
        let queries = field.prepare(&topo, &pts);
        let mut grad = vec![0.0; field.parameter_count()];
        field.backward_prepared(&queries, &[[1.0, 1.0]; 2], &mut grad);
        let n = field.resolution;
        let c = field.channels;
        // far corner of the xy plane is never sampled
        let far = ((n - 1) * n + n - 1) * c;
        assert!(grad[far..far + c].iter().all(|g| *g == 0.0));
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let pts = cloud(21, 25);
        let mut field = init_field(60, &pts, &small_config()).unwrap();
        randomized(&mut field, 22);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.json");
        field.save(&path).unwrap();
        let back = TriPlaneField::load(&path).unwrap();
        assert_eq!(back, field);
        for p in cloud(23, 50) {
            assert_eq!(
                back.eval_point(p).map(f64::to_bits),
                field.eval_point(p).map(f64::to_bits)
            );
        }
    }

    #[test]
    fn block_map_covers_vector() {
        let field = init_field(30, &cloud(1, 10), &small_config()).unwrap();
        let blocks = field.blocks();
        assert_eq!(
            blocks.last().map(|b| b.offset + b.len),
            Some(field.parameter_count())
        );
        assert!(blocks
            .windows(2)
            .all(|w| w[0].offset + w[0].len == w[1].offset));
        let mut f2 = field.clone();
        f2.assign(&field.flatten()).unwrap();
        assert_eq!(f2, field);
        assert!(f2.assign(&[0.0]).is_err());
    }
}
