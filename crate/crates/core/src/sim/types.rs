use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Canonical geometry and masses of the mass points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MassSystemRepr", into = "MassSystemRepr")]
pub struct MassSystem {
    canonical_positions: Vec<Vec3>,
    masses: Vec<f64>,
    control_indices: Vec<usize>,
    // point index -> slot in `control_indices`
    control_slot: Vec<Option<usize>>,
}

#[derive(Serialize, Deserialize)]
struct MassSystemRepr {
    canonical_positions: Vec<Vec3>,
    masses: Vec<f64>,
    control_indices: Vec<usize>,
}

impl TryFrom<MassSystemRepr> for MassSystem {
    type Error = Error;

    fn try_from(r: MassSystemRepr) -> Result<Self> {
        MassSystem::new(r.canonical_positions, r.masses, r.control_indices)
    }
}

impl From<MassSystem> for MassSystemRepr {
    fn from(m: MassSystem) -> Self {
        MassSystemRepr {
            canonical_positions: m.canonical_positions,
            masses: m.masses,
            control_indices: m.control_indices,
        }
    }
}

impl MassSystem {
    pub fn new(
        canonical_positions: Vec<Vec3>,
        masses: Vec<f64>,
        control_indices: Vec<usize>,
    ) -> Result<Self> {
        let n = canonical_positions.len();
        if masses.len() != n {
            return Err(Error::shape(format!(
                "{} masses for {} points",
                masses.len(),
                n
            )));
        }
        if let Some(p) = canonical_positions.iter().position(|p| !p.is_finite()) {
            return Err(Error::config(format!(
                "point {p} has a non-finite position"
            )));
        }
        if let Some(i) = masses.iter().position(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::config(format!("mass of point {i} must be positive")));
        }
        let mut control_slot = vec![None; n];
        for (slot, &i) in control_indices.iter().enumerate() {
            if i >= n {
                return Err(Error::config(format!("control index {i} out of range")));
            }
            if control_slot[i].replace(slot).is_some() {
                return Err(Error::config(format!("duplicate control index {i}")));
            }
        }
        Ok(MassSystem {
            canonical_positions,
            masses,
            control_indices,
            control_slot,
        })
    }

    /// Equal masses summing to `total_mass`.
    pub fn uniform(
        canonical_positions: Vec<Vec3>,
        total_mass: f64,
        control_indices: Vec<usize>,
    ) -> Result<Self> {
        let n = canonical_positions.len();
        if n == 0 {
            return Err(Error::config("mass system needs at least one point"));
        }
        let m = total_mass / n as f64;
        MassSystem::new(canonical_positions, vec![m; n], control_indices)
    }

    pub fn len(&self) -> usize {
        self.canonical_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.canonical_positions.is_empty()
    }

    pub fn canonical_positions(&self) -> &[Vec3] {
        &self.canonical_positions
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn control_indices(&self) -> &[usize] {
        &self.control_indices
    }

    /// Position of point `i` within `control_indices`, if it is a control point.
    #[inline]
    pub fn control_slot(&self, i: usize) -> Option<usize> {
        self.control_slot[i]
    }

    #[inline]
    pub fn is_control(&self, i: usize) -> bool {
        self.control_slot[i].is_some()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassSystemState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub frame_index: usize,
}

impl MassSystemState {
    /// Canonical configuration with zero velocity at frame 0.
    pub fn at_rest(system: &MassSystem) -> Self {
        MassSystemState {
            positions: system.canonical_positions.clone(),
            velocities: vec![Vec3::ZERO; system.len()],
            frame_index: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn check(&self, system: &MassSystem) -> Result<()> {
        if self.positions.len() != system.len() || self.velocities.len() != system.len() {
            return Err(Error::shape(format!(
                "state has {}/{} positions/velocities for {} points",
                self.positions.len(),
                self.velocities.len(),
                system.len()
            )));
        }
        Ok(())
    }
}

/// Spring edge list with rest lengths. Edges are stored as `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpringTopology {
    pub edges: Vec<(usize, usize)>,
    pub rest_lengths: Vec<f64>,
}

impl SpringTopology {
    pub fn empty() -> Self {
        SpringTopology {
            edges: Vec::new(),
            rest_lengths: Vec::new(),
        }
    }

    /// Builds a topology from arbitrary pairs: orients each as `(min, max)`,
    /// drops self-loops and duplicates, sorts, and takes rest lengths from
    /// `positions`.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>, positions: &[Vec3]) -> Self {
        let mut edges: Vec<(usize, usize)> = pairs
            .into_iter()
            .filter(|&(i, j)| i != j)
            .map(|(i, j)| (i.min(j), i.max(j)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        let rest_lengths = edges
            .iter()
            .map(|&(i, j)| positions[i].distance(positions[j]))
            .collect();
        SpringTopology {
            edges,
            rest_lengths,
        }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn validate(&self, n_points: usize) -> Result<()> {
        if self.edges.len() != self.rest_lengths.len() {
            return Err(Error::shape(format!(
                "{} edges but {} rest lengths",
                self.edges.len(),
                self.rest_lengths.len()
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(self.edges.len());
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            if i >= j {
                return Err(Error::config(format!("edge {e} ({i},{j}) must have i < j")));
            }
            if j >= n_points {
                return Err(Error::config(format!("edge {e} references point {j}")));
            }
            if !seen.insert((i, j)) {
                return Err(Error::config(format!("duplicate edge ({i},{j})")));
            }
            if !(self.rest_lengths[e] > 0.0 && self.rest_lengths[e].is_finite()) {
                return Err(Error::config(format!(
                    "edge {e} has non-positive rest length"
                )));
            }
        }
        Ok(())
    }
}

/// Per-edge stiffness (N/m) and dashpot coefficient (N·s/m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpringParams {
    pub stiffness: Vec<f64>,
    pub dashpot: Vec<f64>,
}

impl SpringParams {
    pub fn homogeneous(n_edges: usize, stiffness: f64, dashpot: f64) -> Self {
        SpringParams {
            stiffness: vec![stiffness; n_edges],
            dashpot: vec![dashpot; n_edges],
        }
    }

    pub fn len(&self) -> usize {
        self.stiffness.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stiffness.is_empty()
    }

    pub fn validate(&self, n_edges: usize) -> Result<()> {
        if self.stiffness.len() != n_edges || self.dashpot.len() != n_edges {
            return Err(Error::shape(format!(
                "{}/{} stiffness/dashpot values for {} edges",
                self.stiffness.len(),
                self.dashpot.len(),
                n_edges
            )));
        }
        if let Some(e) = self
            .stiffness
            .iter()
            .position(|&k| !(k > 0.0 && k.is_finite()))
        {
            return Err(Error::config(format!(
                "edge {e}: stiffness must be positive"
            )));
        }
        if let Some(e) = self
            .dashpot
            .iter()
            .position(|&g| !(g >= 0.0 && g.is_finite()))
        {
            return Err(Error::config(format!(
                "edge {e}: dashpot must be non-negative"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPhysicalParams {
    /// Multiplicative velocity decay per substep, in (0, 1].
    pub drag: f64,
    pub gravity: Vec3,
    pub ground_height: f64,
    pub restitution: f64,
    pub friction: f64,
    /// Substep duration (s).
    pub dt: f64,
    pub substeps_per_frame: usize,
    /// Sphere radius for point-point contact; `None` disables it.
    #[serde(default)]
    pub point_collision_radius: Option<f64>,
}

impl Default for GlobalPhysicalParams {
    fn default() -> Self {
        let substeps = 32;
        GlobalPhysicalParams {
            drag: 1.0,
            gravity: Vec3::new(0.0, -9.8, 0.0),
            ground_height: -10.0,
            restitution: 0.0,
            friction: 0.0,
            dt: 1.0 / 30.0 / substeps as f64,
            substeps_per_frame: substeps,
            point_collision_radius: None,
        }
    }
}

impl GlobalPhysicalParams {
    /// Sets `dt` so that `substeps` substeps span one frame of `dt_frame` seconds.
    pub fn with_frame_interval(mut self, dt_frame: f64, substeps: usize) -> Self {
        self.substeps_per_frame = substeps;
        self.dt = dt_frame / substeps as f64;
        self
    }

    pub fn dt_frame(&self) -> f64 {
        self.dt * self.substeps_per_frame as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.substeps_per_frame == 0 {
            return Err(Error::config("substeps_per_frame must be at least 1"));
        }
        if !(self.drag > 0.0 && self.drag <= 1.0) {
            return Err(Error::config(format!(
                "drag must lie in (0,1], got {}",
                self.drag
            )));
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            return Err(Error::config("restitution must lie in [0,1]"));
        }
        if !(self.friction >= 0.0 && self.friction.is_finite()) {
            return Err(Error::config("friction must be non-negative"));
        }
        if !self.gravity.is_finite() || !self.ground_height.is_finite() {
            return Err(Error::config("gravity and ground height must be finite"));
        }
        if let Some(r) = self.point_collision_radius {
            if !(r > 0.0) {
                return Err(Error::config("point collision radius must be positive"));
            }
        }
        Ok(())
    }
}

/// Prescribed control positions per frame, ordered like
/// [`MassSystem::control_indices`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub frames: Vec<Vec<Vec3>>,
}

impl ControlSchedule {
    /// Builds a schedule from per-frame `index -> position` maps.
    pub fn from_maps<'a>(
        system: &MassSystem,
        frames: impl IntoIterator<Item = &'a BTreeMap<usize, Vec3>>,
    ) -> Result<Self> {
        let mut out = Vec::new();
        for (f, map) in frames.into_iter().enumerate() {
            let mut row = Vec::with_capacity(system.control_indices().len());
            for &i in system.control_indices() {
                let p = map.get(&i).ok_or_else(|| {
                    Error::config(format!("frame {f}: no position for control point {i}"))
                })?;
                row.push(*p);
            }
            if let Some(extra) = map.keys().find(|&&i| !system.is_control(i)) {
                return Err(Error::config(format!(
                    "frame {f}: point {extra} is not a control point"
                )));
            }
            out.push(row);
        }
        Ok(ControlSchedule { frames: out })
    }

    /// Holds every control point at its canonical position for `n_frames`.
    pub fn stationary(system: &MassSystem, n_frames: usize) -> Self {
        let row: Vec<Vec3> = system
            .control_indices()
            .iter()
            .map(|&i| system.canonical_positions()[i])
            .collect();
        ControlSchedule {
            frames: vec![row; n_frames],
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames `[start, end)` of the schedule.
    pub fn slice(&self, start: usize, end: usize) -> ControlSchedule {
        ControlSchedule {
            frames: self.frames[start..end].to_vec(),
        }
    }

    pub fn to_maps(&self, system: &MassSystem) -> Vec<BTreeMap<usize, Vec3>> {
        self.frames
            .iter()
            .map(|row| {
                system
                    .control_indices()
                    .iter()
                    .copied()
                    .zip(row.iter().copied())
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<MassSystemState>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn positions(&self, frame: usize) -> &[Vec3] {
        &self.states[frame].positions
    }
}
