//! Synthetic rope and cloth scenes with known per-spring properties, and the
//! observation sequences they produce.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::midpoint;
use crate::io::{write_json, TrajectoryFile};
use crate::losses::{split_index, ObservationFrame, ObservationSequence};
use crate::sim::{
    ControlSchedule, GlobalPhysicalParams, MassSystem, MassSystemState, Simulator, SpringParams,
    SpringTopology, Trajectory,
};
use crate::topology::{build_piecewise_knn, connect_components, ClusterTopologyConfig, KnnParams};
use crate::vec3::Vec3;

fn down() -> Vec3 {
    Vec3::new(0.0, -1.0, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Straight chain from point 0 (at the origin) along `direction`.
    Rope {
        points: usize,
        length: f64,
        #[serde(default = "down")]
        direction: Vec3,
    },
    /// Vertical sheet in the x-y plane, row 0 on top; point `r * cols + c`.
    Cloth { rows: usize, cols: usize, cell: f64 },
}

/// Half-open coordinate range `[min, max)` on one axis; `None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub axis: usize,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl AxisRange {
    pub fn contains(&self, p: Vec3) -> bool {
        let c = p[self.axis];
        self.min.is_none_or(|m| c >= m) && self.max.is_none_or(|m| c < m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub range: AxisRange,
    pub stiffness: f64,
    pub dashpot: f64,
}

/// Connection rule for the points of one region when the true topology is
/// built by KNN instead of the regular lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRegion {
    pub range: AxisRange,
    pub max_neighbors: usize,
    /// Multiple of the lattice spacing.
    pub radius_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlPath {
    /// Offset `amplitude * sin(2 pi f t)`.
    Sinusoid { amplitude: Vec3, frequency: f64 },
    /// Offset `velocity * t`.
    Linear { velocity: Vec3 },
}

impl ControlPath {
    pub fn offset(&self, t: f64) -> Vec3 {
        match self {
            ControlPath::Sinusoid {
                amplitude,
                frequency,
            } => *amplitude * (2.0 * std::f64::consts::PI * frequency * t).sin(),
            ControlPath::Linear { velocity } => *velocity * t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartialView {
    KeepAll,
    /// Keeps the `ceil(n / 2)` points with the largest coordinate on `axis`
    /// (lowest index first on ties).
    KeepHalf {
        axis: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: Shape,
    pub total_mass: f64,
    /// First matching region wins for each edge midpoint.
    pub regions: Vec<Region>,
    /// Replaces the lattice connectivity with per-region KNN when present.
    #[serde(default)]
    pub density_regions: Option<Vec<DensityRegion>>,
    pub control_points: Vec<usize>,
    pub control_path: ControlPath,
    pub frames: usize,
    pub dt_frame: f64,
    pub substeps_per_frame: usize,
    pub drag: f64,
    pub gravity: Vec3,
    pub ground_height: f64,
    pub restitution: f64,
    pub friction: f64,
    pub view: PartialView,
    pub track_fraction: f64,
    /// RMS length (m) of the isotropic Gaussian noise added to observations.
    pub noise_std: f64,
}

fn split_regions(axis: usize, at: f64, low: f64, high: f64, dashpot: f64) -> Vec<Region> {
    vec![
        Region {
            range: AxisRange {
                axis,
                min: Some(at),
                max: None,
            },
            stiffness: high,
            dashpot,
        },
        Region {
            range: AxisRange {
                axis,
                min: None,
                max: Some(at),
            },
            stiffness: low,
            dashpot,
        },
    ]
}

impl SceneSpec {
    /// 64-point, 0.64 m rope: stiff (500 N/m) upper half, soft (50 N/m)
    /// lower half, top end swung 0.1 m at 1 Hz.
    pub fn default_rope() -> Self {
        let length = 0.64;
        SceneSpec {
            shape: Shape::Rope {
                points: 64,
                length,
                direction: down(),
            },
            total_mass: 0.5,
            regions: split_regions(1, -0.5 * length, 50.0, 500.0, 1.0),
            density_regions: None,
            control_points: vec![0],
            control_path: ControlPath::Sinusoid {
                amplitude: Vec3::new(0.1, 0.0, 0.0),
                frequency: 1.0,
            },
            frames: 60,
            dt_frame: 1.0 / 30.0,
            substeps_per_frame: 32,
            drag: 0.999,
            gravity: Vec3::new(0.0, -9.8, 0.0),
            ground_height: -10.0,
            restitution: 0.0,
            friction: 0.0,
            view: PartialView::KeepHalf { axis: 0 },
            track_fraction: 0.3,
            noise_std: 1e-3,
        }
    }

    /// 16 x 16 sheet with 0.02 m cells hanging from its top corners, left
    /// half 50 N/m and right half 500 N/m, corners swung along z.
    pub fn default_cloth() -> Self {
        let (rows, cols, cell) = (16, 16, 0.02);
        let mid = 0.5 * (cols - 1) as f64 * cell;
        SceneSpec {
            shape: Shape::Cloth { rows, cols, cell },
            total_mass: 2.0,
            substeps_per_frame: 64,
            regions: split_regions(0, mid, 50.0, 500.0, 1.0),
            density_regions: None,
            control_points: vec![0, cols - 1],
            control_path: ControlPath::Sinusoid {
                amplitude: Vec3::new(0.0, 0.0, 0.1),
                frequency: 1.0,
            },
            view: PartialView::KeepHalf { axis: 2 },
            ..SceneSpec::default_rope()
        }
    }

    /// Homogeneous cloth whose left half is sparsely and right half densely
    /// connected.
    pub fn density_cloth() -> Self {
        let mut spec = SceneSpec::default_cloth();
        let Shape::Cloth { cols, cell, .. } = spec.shape else {
            unreachable!()
        };
        let mid = 0.5 * (cols - 1) as f64 * cell;
        spec.regions = split_regions(0, mid, 200.0, 200.0, 1.0);
        spec.density_regions = Some(vec![
            DensityRegion {
                range: AxisRange {
                    axis: 0,
                    min: None,
                    max: Some(mid),
                },
                max_neighbors: 4,
                radius_scale: 1.05,
            },
            DensityRegion {
                range: AxisRange {
                    axis: 0,
                    min: Some(mid),
                    max: None,
                },
                max_neighbors: 12,
                radius_scale: 2.3,
            },
        ]);
        spec
    }

    pub fn spacing(&self) -> f64 {
        match self.shape {
            Shape::Rope { points, length, .. } => length / (points.max(2) - 1) as f64,
            Shape::Cloth { cell, .. } => cell,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.shape {
            Shape::Rope {
                points,
                length,
                direction,
            } => {
                if points < 2 || !(length > 0.0) || !(direction.norm() > 0.0) {
                    return Err(Error::config(
                        "rope needs at least two points and a positive length",
                    ));
                }
            }
            Shape::Cloth { rows, cols, cell } => {
                if rows < 2 || cols < 2 || !(cell > 0.0) {
                    return Err(Error::config(
                        "cloth needs at least 2 x 2 points and a positive cell size",
                    ));
                }
            }
        }
        if self.frames < 10 {
            return Err(Error::config(format!(
                "scene needs at least 10 frames, got {}",
                self.frames
            )));
        }
        if !(self.total_mass > 0.0) || !(self.dt_frame > 0.0) || self.substeps_per_frame == 0 {
            return Err(Error::config(
                "mass, frame interval and substeps must be positive",
            ));
        }
        if self.regions.is_empty() {
            return Err(Error::config("scene needs at least one region"));
        }
        if !(0.0..=1.0).contains(&self.track_fraction) || !(self.noise_std >= 0.0) {
            return Err(Error::config(
                "track fraction must lie in [0, 1] and noise must be non-negative",
            ));
        }
        Ok(())
    }

    pub fn globals(&self) -> GlobalPhysicalParams {
        GlobalPhysicalParams {
            drag: self.drag,
            gravity: self.gravity,
            ground_height: self.ground_height,
            restitution: self.restitution,
            friction: self.friction,
            dt: self.dt_frame / self.substeps_per_frame as f64,
            substeps_per_frame: self.substeps_per_frame,
            point_collision_radius: None,
        }
    }

    fn positions(&self) -> Vec<Vec3> {
        match self.shape {
            Shape::Rope {
                points, direction, ..
            } => {
                let step = direction * (self.spacing() / direction.norm());
                (0..points).map(|i| step * i as f64).collect()
            }
            Shape::Cloth { rows, cols, cell } => (0..rows)
                .flat_map(|r| {
                    (0..cols).map(move |c| Vec3::new(c as f64 * cell, -(r as f64) * cell, 0.0))
                })
                .collect(),
        }
    }

    fn lattice_pairs(&self) -> Vec<(usize, usize)> {
        match self.shape {
            Shape::Rope { points, .. } => (0..points)
                .flat_map(|i| [(i, i + 1), (i, i + 2)])
                .filter(|&(_, j)| j < points)
                .collect(),
            Shape::Cloth { rows, cols, .. } => {
                let id = |r: usize, c: usize| r * cols + c;
                let mut pairs = Vec::new();
                for r in 0..rows {
                    for c in 0..cols {
                        if c + 1 < cols {
                            pairs.push((id(r, c), id(r, c + 1)));
                        }
                        if r + 1 < rows {
                            pairs.push((id(r, c), id(r + 1, c)));
                        }
                        if r + 1 < rows && c + 1 < cols {
                            pairs.push((id(r, c), id(r + 1, c + 1)));
                            pairs.push((id(r, c + 1), id(r + 1, c)));
                        }
                    }
                }
                pairs
            }
        }
    }

    /// Index of the region containing `p`.
    pub fn region_of(&self, p: Vec3) -> Option<usize> {
        self.regions.iter().position(|r| r.range.contains(p))
    }
}

/// A built scene with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub system: MassSystem,
    pub topology: SpringTopology,
    pub springs: SpringParams,
    /// Region index of every edge.
    pub edge_regions: Vec<usize>,
    pub controls: ControlSchedule,
    pub globals: GlobalPhysicalParams,
}

/// Per-edge parameters taken from the region of each edge midpoint.
pub fn region_truth(
    spec: &SceneSpec,
    topology: &SpringTopology,
    positions: &[Vec3],
) -> Result<(SpringParams, Vec<usize>)> {
    let mut params = SpringParams {
        stiffness: Vec::with_capacity(topology.len()),
        dashpot: Vec::with_capacity(topology.len()),
    };
    let mut labels = Vec::with_capacity(topology.len());
    for (e, edge) in topology.edges.iter().enumerate() {
        let r = spec
            .region_of(midpoint(*edge, positions))
            .ok_or_else(|| Error::config(format!("edge {e} lies outside every region")))?;
        params.stiffness.push(spec.regions[r].stiffness);
        params.dashpot.push(spec.regions[r].dashpot);
        labels.push(r);
    }
    Ok((params, labels))
}

pub fn build_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let positions = spec.positions();
    let system = MassSystem::uniform(
        positions.clone(),
        spec.total_mass,
        spec.control_points.clone(),
    )?;
    let topology = match &spec.density_regions {
        None => SpringTopology::from_pairs(spec.lattice_pairs(), &positions),
        Some(dens) => {
            let labels = positions
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    dens.iter()
                        .position(|d| d.range.contains(*p))
                        .ok_or_else(|| {
                            Error::config(format!("point {i} lies outside every density region"))
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            let config = ClusterTopologyConfig {
                labels,
                per_cluster: dens
                    .iter()
                    .map(|d| KnnParams {
                        max_neighbors: d.max_neighbors,
                        radius: d.radius_scale * spec.spacing(),
                    })
                    .collect(),
            };
            connect_components(&positions, &build_piecewise_knn(&positions, &config)?)
        }
    };
    let (springs, edge_regions) = region_truth(spec, &topology, &positions)?;
    let controls = ControlSchedule {
        frames: (0..spec.frames)
            .map(|f| {
                let off = spec.control_path.offset(f as f64 * spec.dt_frame);
                spec.control_points
                    .iter()
                    .map(|&i| positions[i] + off)
                    .collect()
            })
            .collect(),
    };
    Ok(Scene {
        system,
        topology,
        springs,
        edge_regions,
        controls,
        globals: spec.globals(),
    })
}

/// Ground-truth rollout of every frame, starting at rest in the canonical pose.
pub fn simulate_truth(scene: &Scene, frames: usize) -> Result<Trajectory> {
    let sim = Simulator::new(
        &scene.system,
        &scene.topology,
        &scene.springs,
        &scene.globals,
    )?;
    sim.rollout(
        &MassSystemState::at_rest(&scene.system),
        &scene.controls,
        frames,
    )
}

fn visible(view: &PartialView, positions: &[Vec3]) -> Vec<usize> {
    match view {
        PartialView::KeepAll => (0..positions.len()).collect(),
        PartialView::KeepHalf { axis } => {
            let mut order: Vec<usize> = (0..positions.len()).collect();
            order.sort_by(|&a, &b| {
                positions[b][*axis]
                    .total_cmp(&positions[a][*axis])
                    .then(a.cmp(&b))
            });
            order.truncate(positions.len().div_ceil(2));
            order.sort_unstable();
            order
        }
    }
}

/// Observation sequence of a true trajectory: partial, noisy clouds, noisy
/// tracks on a fixed random subset of points, and exact control positions.
pub fn emit_observations(
    trajectory: &Trajectory,
    system: &MassSystem,
    spec: &SceneSpec,
    seed: u64,
) -> Result<ObservationSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // isotropic, with RMS displacement noise_std
    let noise =
        Normal::new(0.0, spec.noise_std / 3f64.sqrt()).map_err(|e| Error::config(e.to_string()))?;
    let n = system.len();
    let n_tracks = ((spec.track_fraction * n as f64).round() as usize).min(n);
    let mut tracked = sample(&mut rng, n, n_tracks).into_vec();
    tracked.sort_unstable();
    let mut jitter = |p: Vec3| {
        if spec.noise_std > 0.0 {
            p + Vec3::new(
                noise.sample(&mut rng),
                noise.sample(&mut rng),
                noise.sample(&mut rng),
            )
        } else {
            p
        }
    };
    let frames = trajectory
        .states
        .iter()
        .map(|state| {
            let pos = &state.positions;
            let observed = visible(&spec.view, pos)
                .into_iter()
                .map(|i| jitter(pos[i]))
                .collect();
            let tracks = tracked
                .iter()
                .map(|&i| (format!("track_{i:04}"), Some(jitter(pos[i]))))
                .collect();
            let controls: BTreeMap<usize, Vec3> = system
                .control_indices()
                .iter()
                .map(|&i| (i, pos[i]))
                .collect();
            ObservationFrame {
                observed,
                tracks,
                controls,
            }
        })
        .collect();
    let seq = ObservationSequence {
        dt_frame: spec.dt_frame,
        split_frame: split_index(trajectory.len()),
        frames,
    };
    seq.validate()?;
    Ok(seq)
}

/// Scene description written next to the observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub spec: SceneSpec,
    pub seed: u64,
    pub system: MassSystem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub topology: SpringTopology,
    pub springs: SpringParams,
    pub edge_regions: Vec<usize>,
    pub globals: GlobalPhysicalParams,
    pub trajectory: TrajectoryFile,
}

pub const OBSERVATIONS_FILE: &str = "observations.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const SCENE_FILE: &str = "scene.json";

/// Everything a synthetic dataset consists of.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scene: Scene,
    pub trajectory: Trajectory,
    pub observations: ObservationSequence,
}

impl Dataset {
    pub fn truth(&self, dt_frame: f64) -> TruthFile {
        TruthFile {
            topology: self.scene.topology.clone(),
            springs: self.scene.springs.clone(),
            edge_regions: self.scene.edge_regions.clone(),
            globals: self.scene.globals.clone(),
            trajectory: TrajectoryFile::from_trajectory(&self.trajectory, dt_frame),
        }
    }
}

pub fn generate(spec: &SceneSpec, seed: u64) -> Result<Dataset> {
    let scene = build_scene(spec)?;
    let trajectory = simulate_truth(&scene, spec.frames)?;
    let observations = emit_observations(&trajectory, &scene.system, spec, seed)?;
    Ok(Dataset {
        scene,
        trajectory,
        observations,
    })
}

/// Writes observations, truth and scene files into `dir`.
pub fn write_dataset(
    dir: &Path,
    spec: &SceneSpec,
    seed: u64,
    data: &Dataset,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let paths: Vec<PathBuf> = [OBSERVATIONS_FILE, TRUTH_FILE, SCENE_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_json(&paths[0], &data.observations)?;
    write_json(&paths[1], &data.truth(spec.dt_frame))?;
    write_json(
        &paths[2],
        &SceneFile {
            spec: spec.clone(),
            seed,
            system: data.scene.system.clone(),
        },
    )?;
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRatio {
    pub region: usize,
    pub edges: usize,
    /// Geometric mean of recovered over true stiffness; `None` for an empty region.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub regions: Vec<RegionRatio>,
    pub spearman: f64,
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with averaged ties; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Per-region geometric-mean stiffness ratios and rank correlation between
/// recovered and true per-edge stiffness on the same edges.
pub fn oracle_report(
    recovered: &SpringParams,
    truth: &SpringParams,
    edge_regions: &[usize],
) -> Result<OracleReport> {
    let m = truth.stiffness.len();
    if recovered.stiffness.len() != m || edge_regions.len() != m {
        return Err(Error::shape(format!(
            "recovered ({}) and true ({m}) parameters cover different edges",
            recovered.stiffness.len()
        )));
    }
    let n_regions = edge_regions.iter().max().map_or(0, |r| r + 1);
    let mut sums = vec![(0usize, 0.0f64); n_regions];
    for e in 0..m {
        let s = &mut sums[edge_regions[e]];
        s.0 += 1;
        s.1 += recovered.stiffness[e].ln() - truth.stiffness[e].ln();
    }
    Ok(OracleReport {
        regions: sums
            .iter()
            .enumerate()
            .map(|(region, &(edges, log_sum))| RegionRatio {
                region,
                edges,
                ratio: (edges > 0).then(|| (log_sum / edges as f64).exp()),
            })
            .collect(),
        spearman: spearman(&recovered.stiffness, &truth.stiffness),
    })
}
